//! Post-fit inference: empirical-Bayes random-effect estimates, Louis
//! empirical information and standard errors, numerical-Hessian standard
//! errors, and AIC-based model selection.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{self, EStepMoments, FitConfig, FitResult};
use crate::linalg::{spd_cholesky, symmetrize};
use crate::model::{loglik, DeltaStructure, LongDataset, SubjectBlock, Theta};
use crate::mvdist::Dof;
use crate::par;
use crate::truncmom::{trunc_t_mean_and_second_moment, TruncTSpec};

/// Empirical-Bayes estimate of b_i: the plug-in conditional mean
/// E[b_i | y_i, theta], the minimum-MSE predictor.
///
/// b-hat = b Delta 1_r + M_i Z' (y - mu_i) / sigma^2
///         + M_i D^{-1} Delta E[W*_i], with W*_i a t truncated to the
/// positive orthant at dof nu + n_i (truncated normal in the skew-normal
/// limit). The symmetric families reduce to the classical BLUP.
pub fn estimate_random_effects(theta: &Theta, block: &SubjectBlock) -> Result<DVector<f64>> {
    let d_inv = spd_cholesky(&theta.d, "random-effect scale D")?.inverse();
    let geom = fit::subject_geometry_for(theta, &d_inv, block)?;
    let ones = DVector::from_element(theta.r(), 1.0);
    let base = theta.b() * (&theta.delta * &ones)
        + &geom.m_mat * (block.z.transpose() * &geom.resid) / theta.sigma2;
    if !theta.family.is_skewed() || theta.delta.iter().all(|&v| v == 0.0) {
        return Ok(base);
    }
    let nf = block.n_obs() as f64;
    let w_star = match theta.nu {
        Dof::Infinite => TruncTSpec::new(geom.q_vec.clone(), geom.lambda.clone(), Dof::Infinite)?,
        Dof::Finite(nu) => TruncTSpec::new(
            geom.q_vec.clone(),
            (nu + geom.d_sq) / (nu + nf) * &geom.lambda,
            Dof::Finite(nu + nf),
        )?,
    };
    let (ew, _) = trunc_t_mean_and_second_moment(&w_star)?;
    Ok(base + &geom.m_mat * &d_inv * &theta.delta * ew)
}

/// Louis empirical information: I_e = sum_i s_i s_i' over the per-subject
/// expected complete-data scores, evaluated at the estimate. nu is excluded
/// from the parameter vector.
#[derive(Debug, Clone)]
pub struct LouisInformation {
    pub info: DMatrix<f64>,
    /// sqrt of the diagonal of I_e^{-1}; absent when I_e is singular.
    pub se: Option<DVector<f64>>,
    /// Names of the score coordinates, matching `info` rows.
    pub names: Vec<String>,
    /// Set when there are fewer subjects than parameters; the information
    /// matrix is then necessarily singular or ill-conditioned.
    pub underdetermined: bool,
}

pub fn louis_information(theta: &Theta, data: &LongDataset) -> Result<LouisInformation> {
    let dim = packed_len(theta);
    let d_inv = spd_cholesky(&theta.d, "random-effect scale D")?.inverse();
    let scores = par::map_collect(data.subjects(), |block| {
        fit::e_step(theta, block)
            .map(|m| subject_score(theta, &d_inv, block, &m))
            .map_err(|e| e.for_subject(&block.id))
    });
    let mut info = DMatrix::zeros(dim, dim);
    for s in scores {
        let s = s?;
        info += &s * s.transpose();
    }
    let info = symmetrize(&info);
    let se = Cholesky::new(info.clone()).map(|chol| {
        let inv = chol.inverse();
        DVector::from_fn(dim, |i, _| inv[(i, i)].max(0.0).sqrt())
    });
    Ok(LouisInformation {
        info,
        se,
        names: parameter_names(theta),
        underdetermined: data.n_subjects() < dim,
    })
}

/// Expected complete-data score for one subject, stacked as
/// (beta, sigma^2, upper triangle of D, free entries of Delta).
fn subject_score(
    theta: &Theta,
    d_inv: &DMatrix<f64>,
    block: &SubjectBlock,
    m: &EStepMoments,
) -> DVector<f64> {
    let p = theta.p();
    let q = theta.q();
    let r = theta.r();
    let sigma2 = theta.sigma2;
    let b = theta.b();
    let ones = DVector::from_element(r, 1.0);
    let resid_fixed = &block.y - &block.x * &theta.beta;

    let s_beta = block.x.transpose() * (m.u_hat * &resid_fixed - &block.z * &m.ub_hat) / sigma2;

    let nf = block.n_obs() as f64;
    let quad = m.u_hat * resid_fixed.norm_squared()
        - 2.0 * resid_fixed.dot(&(&block.z * &m.ub_hat))
        + (block.z.transpose() * &block.z * &m.ub2_hat).trace();
    let s_sigma2 = -0.5 * nf / sigma2 + 0.5 * quad / (sigma2 * sigma2);

    let delta = &theta.delta;
    let delta_ones = delta * &ones;
    let k1 = &m.ub2_hat - 2.0 * delta * m.ubs_hat.transpose()
        + 2.0 * b * &delta_ones * (m.us_hat.transpose() * delta.transpose() - m.ub_hat.transpose())
        + delta * &m.us2_hat * delta.transpose()
        + (m.u_hat * b * b) * &delta_ones * delta_ones.transpose();
    let k_bar = symmetrize(&k1);
    let s_alpha_mat = -0.5 * d_inv + 0.5 * d_inv * k_bar * d_inv;

    let mut out = DVector::zeros(packed_len(theta));
    let mut at = 0;
    for i in 0..p {
        out[at] = s_beta[i];
        at += 1;
    }
    out[at] = s_sigma2;
    at += 1;
    for (i, j) in upper_triangle_indices(q) {
        out[at] = s_alpha_mat[(i, j)];
        at += 1;
    }
    if theta.family.is_skewed() {
        let num = b * &m.ub_hat * ones.transpose() + &m.ubs_hat;
        let den = &m.us2_hat
            + (m.u_hat * b * b) * &ones * ones.transpose()
            + b * (&ones * m.us_hat.transpose() + &m.us_hat * ones.transpose());
        let grad = d_inv * num - d_inv * delta * den;
        match theta.structure {
            DeltaStructure::Full => {
                for v in grad.iter() {
                    out[at] = *v;
                    at += 1;
                }
            }
            DeltaStructure::Diagonal => {
                for j in 0..q {
                    out[at] = grad[(j, j)];
                    at += 1;
                }
            }
        }
    }
    out
}

/// Column-major upper-triangle coordinates (including the diagonal),
/// matching the usual vectorization of a symmetric matrix.
fn upper_triangle_indices(q: usize) -> Vec<(usize, usize)> {
    let mut idx = Vec::with_capacity(q * (q + 1) / 2);
    for j in 0..q {
        for i in 0..=j {
            idx.push((i, j));
        }
    }
    idx
}

/// Length of the packed parameter vector theta* = theta \ nu.
pub fn packed_len(theta: &Theta) -> usize {
    theta.p() + 1 + theta.q() * (theta.q() + 1) / 2 + theta.delta_free_entries()
}

/// Names for the packed parameters, in packing order.
pub fn parameter_names(theta: &Theta) -> Vec<String> {
    let mut names = Vec::with_capacity(packed_len(theta));
    for i in 0..theta.p() {
        names.push(format!("beta{i}"));
    }
    names.push("sigma2".into());
    for (i, j) in upper_triangle_indices(theta.q()) {
        names.push(format!("D{}{}", i + 1, j + 1));
    }
    if theta.family.is_skewed() {
        match theta.structure {
            DeltaStructure::Full => {
                for l in 0..theta.r() {
                    for j in 0..theta.q() {
                        names.push(format!("Delta{}{}", j + 1, l + 1));
                    }
                }
            }
            DeltaStructure::Diagonal => {
                for j in 0..theta.q() {
                    names.push(format!("Delta{}{}", j + 1, j + 1));
                }
            }
        }
    }
    names
}

/// Packs theta* into a flat vector (beta, sigma^2, vech D, free Delta).
pub fn pack_params(theta: &Theta) -> DVector<f64> {
    let mut out = DVector::zeros(packed_len(theta));
    let mut at = 0;
    for i in 0..theta.p() {
        out[at] = theta.beta[i];
        at += 1;
    }
    out[at] = theta.sigma2;
    at += 1;
    for (i, j) in upper_triangle_indices(theta.q()) {
        out[at] = theta.d[(i, j)];
        at += 1;
    }
    if theta.family.is_skewed() {
        match theta.structure {
            DeltaStructure::Full => {
                for v in theta.delta.iter() {
                    out[at] = *v;
                    at += 1;
                }
            }
            DeltaStructure::Diagonal => {
                for j in 0..theta.q() {
                    out[at] = theta.delta[(j, j)];
                    at += 1;
                }
            }
        }
    }
    out
}

/// Rebuilds a theta from packed values, keeping the template's family
/// structure and nu. Validation is deferred to the evaluation call sites so
/// that finite differencing can probe slightly infeasible points.
pub fn unpack_params(template: &Theta, x: &DVector<f64>) -> Theta {
    let mut theta = template.clone();
    let mut at = 0;
    for i in 0..theta.p() {
        theta.beta[i] = x[at];
        at += 1;
    }
    theta.sigma2 = x[at];
    at += 1;
    let q = theta.q();
    for (i, j) in upper_triangle_indices(q) {
        theta.d[(i, j)] = x[at];
        theta.d[(j, i)] = x[at];
        at += 1;
    }
    if theta.family.is_skewed() {
        match theta.structure {
            DeltaStructure::Full => {
                for v in theta.delta.iter_mut() {
                    *v = x[at];
                    at += 1;
                }
            }
            DeltaStructure::Diagonal => {
                for j in 0..q {
                    theta.delta[(j, j)] = x[at];
                    at += 1;
                }
            }
        }
    }
    theta
}

/// Central-difference Hessian of `f` at `x0` with per-coordinate steps
/// `rel_step * max(1, |x_j|)`.
pub fn numerical_hessian<F>(f: F, x0: &DVector<f64>, rel_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let dim = x0.len();
    let steps: Vec<f64> = x0.iter().map(|v| rel_step * v.abs().max(1.0)).collect();
    let f0 = f(x0)?;
    let mut h = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += steps[j];
        xm[j] -= steps[j];
        let fp = f(&xp)?;
        let fm = f(&xm)?;
        h[(j, j)] = (fp - 2.0 * f0 + fm) / (steps[j] * steps[j]);
        for k in (j + 1)..dim {
            let mut xpp = x0.clone();
            let mut xpm = x0.clone();
            let mut xmp = x0.clone();
            let mut xmm = x0.clone();
            xpp[j] += steps[j];
            xpp[k] += steps[k];
            xpm[j] += steps[j];
            xpm[k] -= steps[k];
            xmp[j] -= steps[j];
            xmp[k] += steps[k];
            xmm[j] -= steps[j];
            xmm[k] -= steps[k];
            let value =
                (f(&xpp)? - f(&xpm)? - f(&xmp)? + f(&xmm)?) / (4.0 * steps[j] * steps[k]);
            h[(j, k)] = value;
            h[(k, j)] = value;
        }
    }
    Ok(h)
}

/// Standard errors from a numerical Hessian of the marginal log-likelihood
/// at theta*, using central differences with relative step 1e-4.
pub fn numerical_hessian_se(theta: &Theta, data: &LongDataset) -> Result<DVector<f64>> {
    let x0 = pack_params(theta);
    let f = |x: &DVector<f64>| -> Result<f64> {
        let candidate = unpack_params(theta, x);
        if !(candidate.sigma2 > 0.0) {
            return Err(Error::InvalidParameter("sigma2 stepped non-positive".into()));
        }
        loglik(&candidate, data)
    };
    let hessian = numerical_hessian(f, &x0, 1e-4)?;
    let neg = -hessian;
    let chol = Cholesky::new(symmetrize(&neg)).ok_or(Error::HessianNotNegativeDefinite)?;
    let inv = chol.inverse();
    Ok(DVector::from_fn(x0.len(), |i, _| inv[(i, i)].max(0.0).sqrt()))
}

/// Akaike information criterion from a parameter count and log-likelihood.
pub fn aic_value(npar: usize, loglik: f64) -> f64 {
    2.0 * npar as f64 - 2.0 * loglik
}

/// AIC of a completed fit.
pub fn aic(fit: &FitResult) -> f64 {
    aic_value(fit.theta.npar(), fit.loglik())
}

/// One row of a model-selection comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRow {
    pub label: String,
    pub npar: usize,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
}

/// Fits every candidate configuration and ranks them by ascending AIC.
pub fn model_select(data: &LongDataset, candidates: &[FitConfig]) -> Result<Vec<SelectionRow>> {
    let mut rows = Vec::with_capacity(candidates.len());
    for config in candidates {
        let fitted = fit::fit(data, config)?;
        let structure_tag = match (config.family.is_skewed(), config.structure) {
            (true, DeltaStructure::Diagonal) => "-sdb".to_string(),
            (true, DeltaStructure::Full) => format!("-r{}", fitted.theta.r()),
            (false, _) => String::new(),
        };
        rows.push(SelectionRow {
            label: format!("{}{}", config.family.label(), structure_tag),
            npar: fitted.theta.npar(),
            loglik: fitted.loglik(),
            aic: fitted.aic,
            converged: fitted.converged,
        });
    }
    rows.sort_by(|a, b| a.aic.partial_cmp(&b.aic).unwrap_or(std::cmp::Ordering::Equal));
    Ok(rows)
}
