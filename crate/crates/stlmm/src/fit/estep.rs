//! E-step conditional moments and the conditional-maximization updates.
//!
//! Given theta, the conditional law of the latent (U_i, S_i, b_i) given y_i
//! reduces to closed forms driven by a truncated-t moment: u-hat is a ratio
//! of two t CDFs, the S-moments come from W_i truncated to the positive
//! orthant, and the b-moments follow linearly.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{floor_eigenvalues, spd_cholesky, symmetrize};
use crate::model::{DeltaStructure, Family, SubjectBlock, Theta};
use crate::mvdist::{mvt_cdf, Dof};
use crate::truncmom::{trunc_t_mean_and_second_moment, TruncTSpec};

/// The six conditional expectations for one subject, plus the auxiliary
/// quantities the CM steps and score vectors reuse.
#[derive(Debug, Clone)]
pub struct EStepMoments {
    /// E[U_i | y_i] (the robustness weight).
    pub u_hat: f64,
    /// E[U_i S_i | y_i], length r.
    pub us_hat: DVector<f64>,
    /// E[U_i S_i S_i' | y_i], r x r.
    pub us2_hat: DMatrix<f64>,
    /// E[U_i b_i | y_i], length q.
    pub ub_hat: DVector<f64>,
    /// E[U_i b_i S_i' | y_i], q x r.
    pub ubs_hat: DMatrix<f64>,
    /// E[U_i b_i b_i' | y_i], q x q.
    pub ub2_hat: DMatrix<f64>,
    /// CDF argument q_i(y_i) = Delta' Z' Sigma^{-1} (y_i - mu_i).
    pub q_vec: DVector<f64>,
    /// r_i = b Delta 1_r + M_i Z' Omega^{-1} (y_i - mu_i).
    pub r_vec: DVector<f64>,
    /// M_i = (D^{-1} + Z' Omega^{-1} Z)^{-1}.
    pub m_mat: DMatrix<f64>,
    /// Squared Mahalanobis distance d_i(y_i).
    pub d_sq: f64,
}

/// Pieces of theta shared across subjects within one E-step sweep.
pub(crate) struct EStepContext<'a> {
    pub theta: &'a Theta,
    d_inv: DMatrix<f64>,
    b: f64,
}

impl<'a> EStepContext<'a> {
    pub fn new(theta: &'a Theta) -> Result<Self> {
        let d_inv = spd_cholesky(&theta.d, "random-effect scale D")?.inverse();
        Ok(Self { theta, d_inv, b: theta.b() })
    }
}

/// Conditional moments of (U_i, S_i, b_i) given y_i at `theta`.
pub fn e_step(theta: &Theta, block: &SubjectBlock) -> Result<EStepMoments> {
    let ctx = EStepContext::new(theta)?;
    e_step_with(&ctx, block)
}

/// Per-subject geometry shared by the E-step and the empirical-Bayes
/// random-effect estimator.
pub(crate) struct SubjectGeometry {
    pub resid: DVector<f64>,
    pub d_sq: f64,
    pub q_vec: DVector<f64>,
    pub lambda: DMatrix<f64>,
    pub m_mat: DMatrix<f64>,
}

pub(crate) fn subject_geometry(
    theta: &Theta,
    d_inv: &DMatrix<f64>,
    block: &SubjectBlock,
) -> Result<SubjectGeometry> {
    let n = block.n_obs();
    let r = theta.r();
    let sigma2 = theta.sigma2;
    let z_delta = &block.z * &theta.delta;
    let ones = DVector::from_element(r, 1.0);
    let mu = &block.x * &theta.beta + theta.b() * (&block.z * (&theta.delta * &ones));
    let resid = &block.y - &mu;

    // Sigma_i = Z D Z' + sigma^2 I + (Z Delta)(Z Delta)'
    let mut sigma = &block.z * &theta.d * block.z.transpose() + &z_delta * z_delta.transpose();
    for i in 0..n {
        sigma[(i, i)] += sigma2;
    }
    let sigma = symmetrize(&sigma);
    let sigma_chol = spd_cholesky(&sigma, "subject marginal scale")?;
    let sigma_inv_resid = sigma_chol.solve(&resid);
    let d_sq = resid.dot(&sigma_inv_resid);
    let q_vec = z_delta.transpose() * &sigma_inv_resid;
    let lambda = symmetrize(
        &(DMatrix::identity(r, r) - z_delta.transpose() * sigma_chol.solve(&z_delta)),
    );

    // M_i = (D^{-1} + Z'Z / sigma^2)^{-1}
    let m_inv = d_inv + block.z.transpose() * &block.z / sigma2;
    let m_chol = spd_cholesky(&symmetrize(&m_inv), "E-step M matrix")?;
    let m_mat = m_chol.inverse();
    Ok(SubjectGeometry { resid, d_sq, q_vec, lambda, m_mat })
}

pub(crate) fn e_step_with(ctx: &EStepContext<'_>, block: &SubjectBlock) -> Result<EStepMoments> {
    let theta = ctx.theta;
    let r = theta.r();
    let nf = block.n_obs() as f64;
    let geom = subject_geometry(theta, &ctx.d_inv, block)?;
    let SubjectGeometry { resid, d_sq, q_vec, lambda, m_mat } = geom;

    let (u_hat, us_hat, us2_hat) = match theta.family {
        Family::Normal => (1.0, DVector::zeros(r), DMatrix::zeros(r, r)),
        Family::T => {
            let nu = theta.nu.value();
            ((nu + nf) / (nu + d_sq), DVector::zeros(r), DMatrix::zeros(r, r))
        }
        Family::SkewNormal => {
            let spec = TruncTSpec::new(q_vec.clone(), lambda.clone(), Dof::Infinite)?;
            let (ew, eww) = trunc_t_mean_and_second_moment(&spec)?;
            (1.0, ew, eww)
        }
        Family::SkewT => {
            let nu = theta.nu.value();
            let scale_num = ((nu + nf + 2.0) / (nu + d_sq)).sqrt();
            let scale_den = ((nu + nf) / (nu + d_sq)).sqrt();
            let cdf_num = mvt_cdf(&(&q_vec * scale_num), &lambda, Dof::Finite(nu + nf + 2.0))?;
            let cdf_den = mvt_cdf(&(&q_vec * scale_den), &lambda, Dof::Finite(nu + nf))?;
            if cdf_den <= 0.0 {
                return Err(Error::NegligibleTruncationMass);
            }
            let u_hat = (nu + nf) / (nu + d_sq) * cdf_num / cdf_den;
            let w_scale = (nu + d_sq) / (nu + nf + 2.0);
            let spec = TruncTSpec::new(
                q_vec.clone(),
                w_scale * &lambda,
                Dof::Finite(nu + nf + 2.0),
            )?;
            let (ew, eww) = trunc_t_mean_and_second_moment(&spec)?;
            (u_hat, u_hat * ew, u_hat * eww)
        }
    };

    // r_i = b Delta 1_r + M Z' resid / sigma^2
    let ones = DVector::from_element(r, 1.0);
    let r_vec = ctx.b * (&theta.delta * &ones)
        + &m_mat * (block.z.transpose() * &resid) / theta.sigma2;
    // M D^{-1} Delta, shared by the three b-moment formulas
    let md_delta = &m_mat * &ctx.d_inv * &theta.delta;

    let ub_hat = u_hat * &r_vec + &md_delta * &us_hat;
    let ubs_hat = &r_vec * us_hat.transpose() + &md_delta * &us2_hat;
    let ub2_hat = symmetrize(
        &(&m_mat + &ub_hat * r_vec.transpose() + &ubs_hat * md_delta.transpose()),
    );

    Ok(EStepMoments {
        u_hat,
        us_hat,
        us2_hat,
        ub_hat,
        ubs_hat,
        ub2_hat,
        q_vec,
        r_vec,
        m_mat,
        d_sq,
    })
}

/// CM update for (beta, sigma^2): weighted least squares for beta, then the
/// closed-form residual update for sigma^2 at the new beta.
pub fn cm_update_beta_sigma2(
    blocks: &[SubjectBlock],
    moments: &[EStepMoments],
) -> Result<(DVector<f64>, f64)> {
    let p = blocks[0].x.ncols();
    let mut xtx = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for (block, m) in blocks.iter().zip(moments) {
        xtx += m.u_hat * block.x.transpose() * &block.x;
        rhs += block.x.transpose() * (m.u_hat * &block.y - &block.z * &m.ub_hat);
    }
    let chol = Cholesky::new(symmetrize(&xtx)).ok_or(Error::RankDeficientDesign)?;
    let beta = chol.solve(&rhs);

    let mut total_obs = 0.0;
    let mut accum = 0.0;
    for (block, m) in blocks.iter().zip(moments) {
        let resid = &block.y - &block.x * &beta;
        let ztz = block.z.transpose() * &block.z;
        accum += m.u_hat * resid.norm_squared() - 2.0 * resid.dot(&(&block.z * &m.ub_hat))
            + (&ztz * &m.ub2_hat).trace();
        total_obs += block.n_obs() as f64;
    }
    Ok((beta, accum / total_obs))
}

/// CM update for (D, Delta). `K_1i` uses the pre-update Delta; the Delta
/// update solves the normal equations of the quadratic Q, with the diagonal
/// structure handled by its exactly constrained system.
pub fn cm_update_d_delta(
    theta: &Theta,
    moments: &[EStepMoments],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let q = theta.q();
    let r = theta.r();
    let b = theta.b();
    let n = moments.len() as f64;
    let ones = DVector::from_element(r, 1.0);
    let delta = &theta.delta;
    let delta_ones = delta * &ones;

    let mut k_sum = DMatrix::zeros(q, q);
    let mut num = DMatrix::zeros(q, r);
    let mut den = DMatrix::zeros(r, r);
    for m in moments {
        let k1 = &m.ub2_hat - 2.0 * delta * m.ubs_hat.transpose()
            + 2.0 * b * &delta_ones * (m.us_hat.transpose() * delta.transpose() - m.ub_hat.transpose())
            + delta * &m.us2_hat * delta.transpose()
            + (m.u_hat * b * b) * &delta_ones * delta_ones.transpose();
        k_sum += symmetrize(&k1);
        num += b * &m.ub_hat * ones.transpose() + &m.ubs_hat;
        den += &m.us2_hat
            + (m.u_hat * b * b) * &ones * ones.transpose()
            + b * (&ones * m.us_hat.transpose() + &m.us_hat * ones.transpose());
    }

    let mut d_new = k_sum / n;
    if Cholesky::new(d_new.clone()).is_none() {
        let floor = 1e-8 * d_new.trace().abs() / q as f64;
        d_new = floor_eigenvalues(&d_new, floor.max(1e-12));
    }

    if !theta.family.is_skewed() {
        return Ok((d_new, DMatrix::zeros(q, r)));
    }

    let den = symmetrize(&den);
    let delta_new = match theta.structure {
        DeltaStructure::Full => {
            // Delta' solves Delta_new * den = num.
            let chol = Cholesky::new(den).ok_or(Error::SkewUpdateDegenerate)?;
            chol.solve(&num.transpose()).transpose()
        }
        DeltaStructure::Diagonal => {
            // Restricted to diagonal Delta = diag(v), Q is quadratic with
            // Hessian D^{-1} .* den (Schur product, SPD) and gradient
            // diag(D^{-1} num); solve the q x q system exactly.
            let d_inv = spd_cholesky(&d_new, "updated D")?.inverse();
            let mut a = DMatrix::zeros(q, q);
            for i in 0..q {
                for j in 0..q {
                    a[(i, j)] = d_inv[(i, j)] * den[(j, i)];
                }
            }
            let c = DVector::from_fn(q, |j, _| (&d_inv * &num)[(j, j)]);
            let chol = Cholesky::new(symmetrize(&a)).ok_or(Error::SkewUpdateDegenerate)?;
            DMatrix::from_diagonal(&chol.solve(&c))
        }
    };
    Ok((d_new, delta_new))
}
