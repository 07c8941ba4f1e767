//! Multivariate normal and Student-t kernels: log-densities, the centered
//! CDF at arbitrary points, and samplers.
//!
//! All operations are pure given (inputs, seed); values are freely shareable
//! across threads.

mod cdf;

pub use cdf::mvt_cdf;
pub(crate) use cdf::gamma_mixture_nodes;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, logdet, mahalanobis_sq, spd_cholesky};
use crate::special::{ln_gamma, LN_2PI};

/// Degrees of freedom: a finite positive value, or the explicit Gaussian
/// limit. The limit is a flag rather than a large number so that skew-normal
/// special cases are exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Dof {
    Finite(f64),
    Infinite,
}

impl Dof {
    pub fn is_finite(self) -> bool {
        matches!(self, Dof::Finite(_))
    }

    /// Finite value, panicking on the Gaussian flag. Callers must dispatch first.
    pub fn value(self) -> f64 {
        match self {
            Dof::Finite(v) => v,
            Dof::Infinite => panic!("degrees of freedom is infinite"),
        }
    }

    pub fn validate(self) -> Result<Self> {
        match self {
            Dof::Finite(v) if !(v > 0.0 && v.is_finite()) => Err(Error::InvalidParameter(
                format!("degrees of freedom must be > 0, got {v}"),
            )),
            other => Ok(other),
        }
    }
}

impl std::fmt::Display for Dof {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dof::Finite(v) => write!(f, "{v}"),
            Dof::Infinite => write!(f, "inf"),
        }
    }
}

/// Mean vector and SPD covariance of a multivariate normal.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    lower: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != mu.len() {
            return Err(Error::DimensionMismatch {
                context: format!("mu has length {}, sigma is {}x{}", mu.len(), sigma.nrows(), sigma.ncols()),
            });
        }
        check_symmetric(&sigma, "gaussian covariance")?;
        let chol = spd_cholesky(&sigma, "gaussian covariance")?;
        let lower = chol.l_dirty().lower_triangle();
        Ok(Self { mu, sigma, chol, lower })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub(crate) fn chol(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }
}

/// Location, SPD scale, and degrees of freedom of a multivariate Student-t.
/// `Dof::Infinite` short-circuits to Gaussian behavior.
#[derive(Debug, Clone)]
pub struct TParams {
    base: GaussianParams,
    nu: Dof,
}

impl TParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, nu: Dof) -> Result<Self> {
        Ok(Self {
            base: GaussianParams::new(mu, sigma)?,
            nu: nu.validate()?,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn mu(&self) -> &DVector<f64> {
        self.base.mu()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        self.base.sigma()
    }

    pub fn nu(&self) -> Dof {
        self.nu
    }
}

/// Log-density of a multivariate normal.
pub fn mvn_logpdf(x: &DVector<f64>, params: &GaussianParams) -> Result<f64> {
    let p = params.dim();
    if x.len() != p {
        return Err(Error::DimensionMismatch {
            context: format!("x has length {}, distribution dimension is {p}", x.len()),
        });
    }
    let diff = x - params.mu();
    let quad = mahalanobis_sq(params.chol(), &diff);
    Ok(-0.5 * (p as f64 * LN_2PI + logdet(params.chol()) + quad))
}

/// Log-density of a multivariate Student-t; the infinite-dof flag falls back
/// to the Gaussian density.
pub fn mvt_logpdf(x: &DVector<f64>, params: &TParams) -> Result<f64> {
    let nu = match params.nu {
        Dof::Infinite => return mvn_logpdf(x, &params.base),
        Dof::Finite(v) => v,
    };
    let p = params.dim();
    if x.len() != p {
        return Err(Error::DimensionMismatch {
            context: format!("x has length {}, distribution dimension is {p}", x.len()),
        });
    }
    let diff = x - params.mu();
    let quad = mahalanobis_sq(params.base.chol(), &diff);
    let pf = p as f64;
    Ok(ln_gamma(0.5 * (nu + pf)) - ln_gamma(0.5 * nu)
        - 0.5 * pf * (nu * std::f64::consts::PI).ln()
        - 0.5 * logdet(params.base.chol())
        - 0.5 * (nu + pf) * (quad / nu).ln_1p())
}

/// Draws `n` multivariate normal vectors, deterministic given the seed.
pub fn sample_mvn(params: &GaussianParams, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| draw_mvn(params, &mut rng)).collect()
}

/// Draws `n` multivariate t vectors as z / sqrt(g) with
/// g ~ Gamma(nu/2, rate nu/2), matching the scale-mixture construction.
pub fn sample_mvt(params: &TParams, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| draw_t(params, &mut rng)).collect()
}

pub(crate) fn draw_t<R: Rng>(params: &TParams, rng: &mut R) -> DVector<f64> {
    let centered = draw_mvn(&params.base, rng) - params.mu();
    params.mu() + centered / MixingSampler::new(params.nu).draw(rng).sqrt()
}

pub(crate) fn draw_mvn<R: Rng>(params: &GaussianParams, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(params.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    params.mu() + &params.lower * z
}

/// Reusable sampler for the Gamma(nu/2, rate nu/2) mixing variable
/// (identically 1 in the Gaussian limit).
pub(crate) struct MixingSampler {
    gamma: Option<Gamma<f64>>,
}

impl MixingSampler {
    pub fn new(nu: Dof) -> Self {
        let gamma = match nu {
            Dof::Infinite => None,
            Dof::Finite(v) => Some(Gamma::new(0.5 * v, 2.0 / v).expect("valid gamma parameters")),
        };
        Self { gamma }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match &self.gamma {
            None => 1.0,
            Some(g) => g.sample(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn standard_normal_at_mode() {
        let params = GaussianParams::new(dvector![0.0], dmatrix![1.0]).unwrap();
        let lp = mvn_logpdf(&dvector![0.0], &params).unwrap();
        assert_relative_eq!(lp, (0.3989422804014327f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn bivariate_identity_at_origin() {
        let params = GaussianParams::new(dvector![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let lp = mvn_logpdf(&dvector![0.0, 0.0], &params).unwrap();
        assert_relative_eq!(lp, -(2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn mvn_matches_dense_inverse_formula() {
        // Independent oracle: explicit inverse and determinant.
        let mu = dvector![0.3, -1.0, 2.0];
        let sigma = dmatrix![
            2.0, 0.4, -0.3;
            0.4, 1.5, 0.2;
            -0.3, 0.2, 0.9
        ];
        let x = dvector![1.0, -0.5, 1.7];
        let params = GaussianParams::new(mu.clone(), sigma.clone()).unwrap();
        let inv = sigma.clone().try_inverse().unwrap();
        let det = sigma.determinant();
        let diff = &x - &mu;
        let direct = -0.5
            * (3.0 * LN_2PI + det.ln() + (diff.transpose() * inv * &diff)[(0, 0)]);
        assert_relative_eq!(mvn_logpdf(&x, &params).unwrap(), direct, epsilon = 1e-12);
    }

    #[test]
    fn cauchy_at_mode() {
        let params =
            TParams::new(dvector![0.0], dmatrix![1.0], Dof::Finite(1.0)).unwrap();
        let lp = mvt_logpdf(&dvector![0.0], &params).unwrap();
        assert_relative_eq!(lp, -(std::f64::consts::PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn large_nu_limit_is_gaussian() {
        let t = TParams::new(dvector![0.5], dmatrix![1.3], Dof::Finite(1e6)).unwrap();
        let g = GaussianParams::new(dvector![0.5], dmatrix![1.3]).unwrap();
        for &x in &[-2.0, 0.0, 2.0] {
            let lt = mvt_logpdf(&dvector![x], &t).unwrap();
            let lg = mvn_logpdf(&dvector![x], &g).unwrap();
            assert!((lt - lg).abs() < 1e-4, "nu=1e6 should be close to normal");
        }
    }

    #[test]
    fn elliptical_symmetry() {
        let params = TParams::new(
            dvector![1.0, -2.0],
            dmatrix![1.5, 0.6; 0.6, 2.0],
            Dof::Finite(4.0),
        )
        .unwrap();
        let mu = params.mu().clone();
        let v = dvector![0.7, -0.4];
        let a = mvt_logpdf(&(&mu + &v), &params).unwrap();
        let b = mvt_logpdf(&(&mu - &v), &params).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-13);
    }

    #[test]
    fn non_spd_sigma_is_rejected() {
        let err = GaussianParams::new(dvector![0.0, 0.0], dmatrix![1.0, 2.0; 2.0, 1.0])
            .unwrap_err();
        assert!(err.to_string().contains("not positive definite"));
    }

    #[test]
    fn sampler_determinism_and_moments() {
        let params = GaussianParams::new(dvector![1.0, 2.0], DMatrix::identity(2, 2)).unwrap();
        let a = sample_mvn(&params, 100, 42);
        let b = sample_mvn(&params, 100, 42);
        assert_eq!(a, b);

        let n = 100_000;
        let draws = sample_mvn(&params, n, 7);
        let mean = draws.iter().sum::<DVector<f64>>() / n as f64;
        // CLT bound at 3 sigma: 3 / sqrt(n) < 0.01, spec allows 0.02.
        assert!((mean[0] - 1.0).abs() < 0.02);
        assert!((mean[1] - 2.0).abs() < 0.02);
    }

    #[test]
    fn t_sample_covariance_scaling() {
        // Var = nu/(nu-2) * Sigma for nu=5 -> 5/3.
        let params = TParams::new(
            dvector![0.0, 0.0],
            dmatrix![1.0, 0.3; 0.3, 1.0],
            Dof::Finite(5.0),
        )
        .unwrap();
        let n = 1_000_000;
        let draws = sample_mvt(&params, n, 11);
        let mut cov = DMatrix::zeros(2, 2);
        for d in &draws {
            cov += d * d.transpose();
        }
        cov /= n as f64;
        let expected = 5.0 / 3.0 * params.sigma();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (cov[(i, j)] - expected[(i, j)]).abs() / expected[(0, 0)].abs() < 0.05,
                    "cov[{i},{j}] = {} vs {}",
                    cov[(i, j)],
                    expected[(i, j)]
                );
            }
        }
    }
}
