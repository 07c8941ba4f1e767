//! Canonical fundamental skew-normal (CFUSN) and skew-t (CFUST)
//! distributions: densities, sampling via the hierarchical representation,
//! exact moments, and affine transformation.
//!
//! A CFUST vector is Y = mu + U^{-1/2} (Delta |X0| + X1) with X0 ~ N_q(0, I),
//! X1 ~ N_p(0, Omega), U ~ Gamma(nu/2, nu/2); the infinite-dof flag fixes
//! U = 1 and gives the CFUSN law. Parameters are stored as (mu, Omega, Delta,
//! nu); Sigma = Omega + Delta Delta' and Lambda = I - Delta' Sigma^{-1} Delta
//! are derived caches, both required to be positive definite.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, logdet, mahalanobis_sq, spd_cholesky, symmetrize};
use crate::mvdist::{mvt_cdf, Dof, MixingSampler};
use crate::special::{ln_gamma, LN_2PI};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Parameters of a CFUST (or CFUSN, via the infinite-dof flag) law.
#[derive(Debug, Clone)]
pub struct CfustParams {
    mu: DVector<f64>,
    omega: DMatrix<f64>,
    delta: DMatrix<f64>,
    nu: Dof,
    sigma: DMatrix<f64>,
    sigma_chol: Cholesky<f64, Dyn>,
    omega_lower: DMatrix<f64>,
    lambda: DMatrix<f64>,
    delta_is_zero: bool,
}

impl CfustParams {
    /// Validates Omega, Sigma = Omega + Delta Delta', and
    /// Lambda = I_q - Delta' Sigma^{-1} Delta, caching the derived pieces.
    pub fn new(mu: DVector<f64>, omega: DMatrix<f64>, delta: DMatrix<f64>, nu: Dof) -> Result<Self> {
        let p = mu.len();
        if omega.nrows() != p || omega.ncols() != p {
            return Err(Error::DimensionMismatch {
                context: format!("mu has length {p}, omega is {}x{}", omega.nrows(), omega.ncols()),
            });
        }
        if delta.nrows() != p {
            return Err(Error::DimensionMismatch {
                context: format!("delta has {} rows, expected {p}", delta.nrows()),
            });
        }
        nu.validate()?;
        check_symmetric(&omega, "cfust omega")?;
        let omega_chol = spd_cholesky(&omega, "cfust omega")?;
        let omega_lower = omega_chol.l_dirty().lower_triangle();
        let sigma = symmetrize(&(&omega + &delta * delta.transpose()));
        let sigma_chol = spd_cholesky(&sigma, "cfust sigma")?;
        let q = delta.ncols();
        let lambda = if q == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let sigma_inv_delta = sigma_chol.solve(&delta);
            let lambda = symmetrize(&(DMatrix::identity(q, q) - delta.transpose() * sigma_inv_delta));
            spd_cholesky(&lambda, "cfust lambda")?;
            lambda
        };
        let delta_is_zero = delta.iter().all(|&v| v == 0.0);
        Ok(Self {
            mu,
            omega,
            delta,
            nu,
            sigma,
            sigma_chol,
            omega_lower,
            lambda,
            delta_is_zero,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Number of latent half-normal components (columns of Delta).
    pub fn rank(&self) -> usize {
        self.delta.ncols()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }

    pub fn nu(&self) -> Dof {
        self.nu
    }

    /// Sigma = Omega + Delta Delta'.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Lambda = I_q - Delta' Sigma^{-1} Delta.
    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }
}

/// Log-density of the CFUSN law (requires the infinite-dof flag):
/// 2^q phi_p(y | mu, Sigma) Phi_q(Delta' Sigma^{-1} (y - mu) | 0, Lambda).
pub fn cfusn_logpdf(y: &DVector<f64>, params: &CfustParams) -> Result<f64> {
    if params.nu.is_finite() {
        return Err(Error::InvalidParameter(
            "cfusn_logpdf requires the infinite-dof flag".into(),
        ));
    }
    logpdf(y, params)
}

/// Log-density of the CFUST law with finite dof:
/// 2^q t_p(y | mu, Sigma, nu) T_q(q(y) sqrt((nu+p)/(nu+d)) | 0, Lambda, nu+p).
pub fn cfust_logpdf(y: &DVector<f64>, params: &CfustParams) -> Result<f64> {
    if !params.nu.is_finite() {
        return Err(Error::InvalidParameter(
            "cfust_logpdf requires finite degrees of freedom".into(),
        ));
    }
    logpdf(y, params)
}

/// Log-density dispatching on the dof flag.
pub fn logpdf(y: &DVector<f64>, params: &CfustParams) -> Result<f64> {
    let p = params.dim();
    if y.len() != p {
        return Err(Error::DimensionMismatch {
            context: format!("point has length {}, distribution dimension is {p}", y.len()),
        });
    }
    let diff = y - &params.mu;
    let d = mahalanobis_sq(&params.sigma_chol, &diff);
    let pf = p as f64;
    let base = match params.nu {
        Dof::Infinite => -0.5 * (pf * LN_2PI + logdet(&params.sigma_chol) + d),
        Dof::Finite(nu) => {
            ln_gamma(0.5 * (nu + pf)) - ln_gamma(0.5 * nu)
                - 0.5 * pf * (nu * std::f64::consts::PI).ln()
                - 0.5 * logdet(&params.sigma_chol)
                - 0.5 * (nu + pf) * (d / nu).ln_1p()
        }
    };
    // With a null shape matrix the skewing factor cancels the 2^q exactly.
    if params.delta_is_zero {
        return Ok(base);
    }
    let q = params.rank();
    let arg = params.delta.transpose() * params.sigma_chol.solve(&diff);
    let (cdf_point, cdf_nu) = match params.nu {
        Dof::Infinite => (arg, Dof::Infinite),
        Dof::Finite(nu) => {
            let scale = ((nu + pf) / (nu + d)).sqrt();
            (arg * scale, Dof::Finite(nu + pf))
        }
    };
    let cdf = mvt_cdf(&cdf_point, &params.lambda, cdf_nu)?;
    Ok(q as f64 * std::f64::consts::LN_2 + base + cdf.max(f64::MIN_POSITIVE).ln())
}

/// Draws `n` vectors through the hierarchical representation
/// Y = mu + U^{-1/2} (Delta |X0| + X1), deterministic given the seed.
pub fn cfust_sample(params: &CfustParams, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| draw_cfust(params, &mut rng)).collect()
}

pub(crate) fn draw_cfust<R: Rng>(params: &CfustParams, rng: &mut R) -> DVector<f64> {
    let (y, _, _) = draw_cfust_with_latents(params, rng);
    y
}

/// One draw returning (y, |x0|/sqrt(u), u): the latent half-normal scale
/// mixture is reused by the simulation harness and the E-step oracle.
pub(crate) fn draw_cfust_with_latents<R: Rng>(
    params: &CfustParams,
    rng: &mut R,
) -> (DVector<f64>, DVector<f64>, f64) {
    let p = params.dim();
    let q = params.rank();
    let u = MixingSampler::new(params.nu).draw(rng);
    let root_u = u.sqrt();
    let s = DVector::from_fn(q, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z.abs() / root_u
    });
    let z1 = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x1 = &params.omega_lower * z1 / root_u;
    let y = &params.mu + &params.delta * &s + x1;
    (y, s, u)
}

/// Exact mean and variance of the law, with the constants they derive from.
#[derive(Debug, Clone)]
pub struct CfustMoments {
    pub mean: DVector<f64>,
    pub variance: DMatrix<f64>,
    /// kappa_1 = sqrt(nu/2) Gamma((nu-1)/2) / Gamma(nu/2); 1 in the limit.
    pub kappa1: f64,
    /// a(nu) = (2/pi) (nu/(nu-2) - kappa_1^2); 0 in the limit.
    pub a_nu: f64,
}

/// Mean requires nu > 1, variance nu > 2 (vacuous for the infinite flag).
pub fn cfust_moments(params: &CfustParams) -> Result<CfustMoments> {
    let (kappa1, a_nu, t_var_factor) = match params.nu {
        Dof::Infinite => (1.0, 0.0, 1.0),
        Dof::Finite(nu) => {
            if nu <= 1.0 {
                return Err(Error::InvalidParameter(format!("mean undefined for nu = {nu} <= 1")));
            }
            if nu <= 2.0 {
                return Err(Error::InvalidParameter(format!(
                    "variance undefined for nu = {nu} <= 2"
                )));
            }
            let k1 = kappa1(nu);
            let factor = nu / (nu - 2.0);
            (k1, 2.0 / std::f64::consts::PI * (factor - k1 * k1), factor)
        }
    };
    let delta_ones = &params.delta * DVector::from_element(params.rank(), 1.0);
    let mean = &params.mu + SQRT_2_OVER_PI * kappa1 * &delta_ones;
    let ddt = &params.delta * params.delta.transpose();
    let variance = t_var_factor * (&params.sigma - 2.0 / std::f64::consts::PI * &ddt)
        + a_nu * &delta_ones * delta_ones.transpose();
    Ok(CfustMoments {
        mean,
        variance: symmetrize(&variance),
        kappa1,
        a_nu,
    })
}

/// kappa_1 = E[U^{-1/2}] for U ~ Gamma(nu/2, nu/2); requires nu > 1.
pub fn kappa1(nu: f64) -> f64 {
    (0.5 * nu).sqrt() * (ln_gamma(0.5 * (nu - 1.0)) - ln_gamma(0.5 * nu)).exp()
}

/// The centering constant b(nu) = -sqrt(nu/pi) Gamma((nu-1)/2) / Gamma(nu/2)
/// that makes the model's random effects mean-zero; -sqrt(2/pi) in the limit.
pub fn b_constant(nu: Dof) -> Result<f64> {
    match nu {
        Dof::Infinite => Ok(-SQRT_2_OVER_PI),
        Dof::Finite(v) => {
            if v <= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "b(nu) undefined for nu = {v} <= 1"
                )));
            }
            Ok(-SQRT_2_OVER_PI * kappa1(v))
        }
    }
}

/// Z = A Y + c is again CFUST with parameters (A mu + c, A Omega A', A Delta,
/// nu); marginalization is the coordinate-selector special case.
pub fn affine_transform(params: &CfustParams, a: &DMatrix<f64>, c: &DVector<f64>) -> Result<CfustParams> {
    let m = a.nrows();
    if a.ncols() != params.dim() {
        return Err(Error::DimensionMismatch {
            context: format!("transform is {}x{}, distribution dimension is {}", m, a.ncols(), params.dim()),
        });
    }
    if c.len() != m {
        return Err(Error::DimensionMismatch {
            context: format!("offset has length {}, transform has {m} rows", c.len()),
        });
    }
    if a.rank(1e-10) < m {
        return Err(Error::DegenerateTransform);
    }
    let new_mu = a * &params.mu + c;
    let new_omega = symmetrize(&(a * &params.omega * a.transpose()));
    let new_delta = a * &params.delta;
    CfustParams::new(new_mu, new_omega, new_delta, params.nu)
}
