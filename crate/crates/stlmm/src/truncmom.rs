//! First and second moments of multivariate normal and Student-t
//! distributions truncated to the positive orthant.
//!
//! The primary computation mixes truncated-normal orthant moments over the
//! Gamma scale variable with a fixed 64-node quadrature; truncated-normal
//! moments come from the one-coordinate-conditioning recursion. The
//! documented accuracy contract is 1% relative, guarded by the independent
//! rejection-sampling oracle below (in practice the quadrature is far more
//! accurate than the contract).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, spd_cholesky, symmetrize};
use crate::mvdist::{self, Dof, TParams};
use crate::special::norm_pdf;

/// Maximum supported truncation dimension.
pub const MAX_RANK: usize = 4;

/// Orthant probabilities below this are treated as numerically vanishing.
pub const MIN_ORTHANT_MASS: f64 = 1e-12;

/// A multivariate t (or normal, via the infinite-dof flag) truncated to the
/// positive orthant: lower bound zero, upper bound infinite in every
/// coordinate.
#[derive(Debug, Clone)]
pub struct TruncTSpec {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    nu: Dof,
}

impl TruncTSpec {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, nu: Dof) -> Result<Self> {
        let r = mu.len();
        if r > MAX_RANK {
            return Err(Error::UnsupportedRank(r));
        }
        if sigma.nrows() != r || sigma.ncols() != r {
            return Err(Error::DimensionMismatch {
                context: format!("mu has length {r}, sigma is {}x{}", sigma.nrows(), sigma.ncols()),
            });
        }
        check_symmetric(&sigma, "truncation scale")?;
        spd_cholesky(&sigma, "truncation scale")?;
        nu.validate()?;
        Ok(Self { mu, sigma, nu })
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

    pub fn nu(&self) -> Dof {
        self.nu
    }
}

/// E[W] and E[W W'] for W distributed as `spec`.
///
/// Finite dof requires nu > 2 (the truncated second moment does not exist
/// otherwise); the infinite flag gives truncated-normal moments directly.
pub fn trunc_t_mean_and_second_moment(spec: &TruncTSpec) -> Result<(DVector<f64>, DMatrix<f64>)> {
    match spec.nu {
        Dof::Infinite => {
            let (alpha, m1, m2) = tn_orthant_moments(&spec.mu, &spec.sigma);
            if !(alpha > MIN_ORTHANT_MASS) {
                return Err(Error::NegligibleTruncationMass);
            }
            Ok((m1, symmetrize(&m2)))
        }
        Dof::Finite(nu) => {
            if nu <= 2.0 {
                return Err(Error::SecondMomentUndefined { nu });
            }
            let r = spec.dim();
            let nodes = mvdist::gamma_mixture_nodes(nu, 64);
            let mut mass = 0.0;
            let mut total_w = 0.0;
            let mut m1 = DVector::zeros(r);
            let mut m2 = DMatrix::zeros(r, r);
            for &(g, w) in &nodes {
                let scaled = &spec.sigma / g;
                let (alpha, mean, second) = tn_orthant_moments(&spec.mu, &scaled);
                let omega = w * alpha;
                mass += omega;
                total_w += w;
                m1 += omega * mean;
                m2 += omega * second;
            }
            // total_w absorbs the 1e-12 quantile clipping of the mixing law.
            if !(mass / total_w > MIN_ORTHANT_MASS) {
                return Err(Error::NegligibleTruncationMass);
            }
            Ok((m1 / mass, symmetrize(&(m2 / mass))))
        }
    }
}

/// Empirical mean, second moment, and acceptance rate from unconstrained t
/// draws kept when they land in the positive orthant.
#[derive(Debug, Clone)]
pub struct RejectionEstimate {
    pub mean: DVector<f64>,
    pub second_moment: DMatrix<f64>,
    pub acceptance_rate: f64,
    pub accepted: usize,
}

/// Monte Carlo oracle for the truncated moments, independent of the
/// quadrature path above.
pub fn rejection_oracle(spec: &TruncTSpec, n: usize, seed: u64) -> Result<RejectionEstimate> {
    if n < 1_000 {
        return Err(Error::InvalidParameter(format!(
            "rejection oracle needs at least 1000 draws, got {n}"
        )));
    }
    let r = spec.dim();
    let params = TParams::new(spec.mu.clone(), spec.sigma.clone(), spec.nu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = 0usize;
    let mut sum = DVector::zeros(r);
    let mut sum_sq = DMatrix::zeros(r, r);
    for _ in 0..n {
        let draw = mvdist::draw_t(&params, &mut rng);
        if draw.iter().all(|&v| v > 0.0) {
            accepted += 1;
            sum += &draw;
            sum_sq += &draw * draw.transpose();
        }
    }
    if accepted < 100 {
        return Err(Error::InsufficientAcceptance { accepted, total: n });
    }
    let k = accepted as f64;
    Ok(RejectionEstimate {
        mean: sum / k,
        second_moment: sum_sq / k,
        acceptance_rate: k / n as f64,
        accepted,
    })
}

// ---------------------------------------------------------------------------
// Truncated-normal orthant moments by one-coordinate conditioning.
// ---------------------------------------------------------------------------

/// Returns (orthant probability, E[X], E[XX']) for X ~ N(mu, sigma)
/// conditioned on X >= 0. Unnormalized boundary masses drive the recursion:
///
///   E[X] = mu + Sigma p / alpha,
///   E[(X-mu)(X-mu)'] = Sigma + M Sigma / alpha,
///
/// where p_k integrates the density over the face x_k = 0 and M collects the
/// first moments over each face (a dimension r-1 problem).
fn tn_orthant_moments(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let r = mu.len();
    if r == 1 {
        let (alpha, mean) = tn1_mean(mu[0], sigma[(0, 0)]);
        let second = DMatrix::from_element(1, 1, sigma[(0, 0)] + mu[0] * mean);
        return (alpha, DVector::from_element(1, mean), second);
    }
    let alpha = orthant_prob(mu, sigma);
    let mut p = DVector::zeros(r);
    let mut m = DMatrix::zeros(r, r);
    for j in 0..r {
        let sjj = sigma[(j, j)];
        let dens = norm_pdf(mu[j] / sjj.sqrt()) / sjj.sqrt();
        let (cmu, csigma) = condition_on_zero(mu, sigma, j);
        let (calpha, cmean) = tn_mean(&cmu, &csigma);
        let pj = dens * calpha;
        p[j] = pj;
        m[(j, j)] = -mu[j] * pj;
        let mut idx = 0;
        for i in 0..r {
            if i == j {
                continue;
            }
            m[(i, j)] = pj * (cmean[idx] - mu[i]);
            idx += 1;
        }
    }
    let safe_alpha = alpha.max(f64::MIN_POSITIVE);
    let m1 = mu + sigma * &p / safe_alpha;
    let centered = sigma + &m * sigma / safe_alpha;
    let m2 = centered + mu * m1.transpose() + &m1 * mu.transpose() - mu * mu.transpose();
    (alpha, m1, m2)
}

/// Orthant probability and truncated mean only (the recursion's inner need).
fn tn_mean(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let r = mu.len();
    if r == 0 {
        return (1.0, DVector::zeros(0));
    }
    if r == 1 {
        let (alpha, mean) = tn1_mean(mu[0], sigma[(0, 0)]);
        return (alpha, DVector::from_element(1, mean));
    }
    let alpha = orthant_prob(mu, sigma);
    let mut p = DVector::zeros(r);
    for j in 0..r {
        let sjj = sigma[(j, j)];
        let dens = norm_pdf(mu[j] / sjj.sqrt()) / sjj.sqrt();
        let (cmu, csigma) = condition_on_zero(mu, sigma, j);
        let (calpha, _) = if r - 1 == 0 {
            (1.0, DVector::zeros(0))
        } else {
            tn_mean_prob_only(&cmu, &csigma)
        };
        p[j] = dens * calpha;
    }
    let safe_alpha = alpha.max(f64::MIN_POSITIVE);
    (alpha, mu + sigma * &p / safe_alpha)
}

fn tn_mean_prob_only(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> (f64, DVector<f64>) {
    (orthant_prob(mu, sigma), DVector::zeros(0))
}

/// P(X >= 0) = P(Z <= mu) for Z ~ N(0, sigma).
fn orthant_prob(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    if mu.len() == 1 {
        return crate::special::norm_cdf(mu[0] / sigma[(0, 0)].sqrt());
    }
    mvdist::mvt_cdf(mu, sigma, Dof::Infinite).unwrap_or(0.0)
}

/// Univariate truncated-normal mean on (0, inf): alpha and E[X].
fn tn1_mean(mu: f64, var: f64) -> (f64, f64) {
    let s = var.sqrt();
    let z = mu / s;
    let alpha = crate::special::norm_cdf(z);
    // Mills ratio phi(z)/Phi(z); switch to the asymptotic form deep in the
    // left tail where Phi underflows.
    let ratio = if z < -30.0 {
        -z - 1.0 / z
    } else {
        norm_pdf(z) / alpha.max(f64::MIN_POSITIVE)
    };
    (alpha, mu + s * ratio)
}

/// Distribution of the remaining coordinates given x_j = 0.
fn condition_on_zero(mu: &DVector<f64>, sigma: &DMatrix<f64>, j: usize) -> (DVector<f64>, DMatrix<f64>) {
    let r = mu.len();
    let keep: Vec<usize> = (0..r).filter(|&i| i != j).collect();
    let sjj = sigma[(j, j)];
    let mut cmu = DVector::zeros(r - 1);
    let mut csigma = DMatrix::zeros(r - 1, r - 1);
    for (a, &i) in keep.iter().enumerate() {
        cmu[a] = mu[i] - sigma[(i, j)] * mu[j] / sjj;
        for (b, &k) in keep.iter().enumerate() {
            csigma[(a, b)] = sigma[(i, k)] - sigma[(i, j)] * sigma[(k, j)] / sjj;
        }
    }
    (cmu, csigma)
}
