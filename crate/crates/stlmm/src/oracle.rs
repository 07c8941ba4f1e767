//! Brute-force reference implementations used by the test suites.
//!
//! These estimators deliberately avoid the closed-form E-step machinery:
//! they sample the latent hierarchy directly and importance-weight by the
//! conditional density of the observed response, so they can certify the
//! analytic moments independently.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg::spd_cholesky;
use crate::model::{SubjectBlock, Theta};
use crate::mvdist::MixingSampler;

/// Monte Carlo estimates of the six E-step moments and the random-effect
/// posterior mean, each with a delta-method standard error.
#[derive(Debug, Clone)]
pub struct LatentMomentEstimates {
    pub u: (f64, f64),
    pub us: (DVector<f64>, DVector<f64>),
    pub us2: (DMatrix<f64>, DMatrix<f64>),
    pub ub: (DVector<f64>, DVector<f64>),
    pub ubs: (DMatrix<f64>, DMatrix<f64>),
    pub ub2: (DMatrix<f64>, DMatrix<f64>),
    /// E[b_i | y_i] (no u factor), the quantity behind the empirical-Bayes
    /// random-effect estimate.
    pub b_mean: (DVector<f64>, DVector<f64>),
    pub effective_draws: f64,
}

/// Estimates E[g(U, S, b) | y] for the moment functions the E-step needs by
/// sampling (U, S, b) from the prior hierarchy and weighting each draw by
/// the normal density of y given (b, U).
pub fn latent_moments_is(
    theta: &Theta,
    block: &SubjectBlock,
    n_draws: usize,
    seed: u64,
) -> Result<LatentMomentEstimates> {
    let q = theta.q();
    let r = theta.r();
    let n = block.n_obs();
    let d_lower = spd_cholesky(&theta.d, "random-effect scale D")?
        .l_dirty()
        .lower_triangle();
    let ones = DVector::from_element(r, 1.0);
    let delta_shift = theta.b() * (&theta.delta * &ones);
    let x_beta = &block.x * &theta.beta;
    let mixing = MixingSampler::new(theta.nu);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // accumulators: weighted sums of every monitored function and its square
    let mut acc = WeightedMoments::new(q, r);
    for _ in 0..n_draws {
        let u = mixing.draw(&mut rng);
        let root_u = u.sqrt();
        let s = DVector::from_fn(r, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            z.abs() / root_u
        });
        let zb = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = &delta_shift + &theta.delta * &s + &d_lower * zb / root_u;
        // log weight: N(y; X beta + Z b, sigma^2/u I)
        let mean = &x_beta + &block.z * &b;
        let var = theta.sigma2 / u;
        let mut log_w = -0.5 * n as f64 * (2.0 * std::f64::consts::PI * var).ln();
        for k in 0..n {
            let diff = block.y[k] - mean[k];
            log_w -= 0.5 * diff * diff / var;
        }
        acc.push(log_w, u, &s, &b);
    }
    Ok(acc.finish())
}

struct WeightedMoments {
    q: usize,
    r: usize,
    max_log_w: f64,
    entries: Vec<(f64, f64, DVector<f64>, DVector<f64>)>,
}

impl WeightedMoments {
    fn new(q: usize, r: usize) -> Self {
        Self { q, r, max_log_w: f64::NEG_INFINITY, entries: Vec::new() }
    }

    fn push(&mut self, log_w: f64, u: f64, s: &DVector<f64>, b: &DVector<f64>) {
        self.max_log_w = self.max_log_w.max(log_w);
        self.entries.push((log_w, u, s.clone(), b.clone()));
    }

    fn finish(self) -> LatentMomentEstimates {
        let (q, r) = (self.q, self.r);
        let dim = 1 + r + r * r + q + q * r + q * q + q;
        let mut sum_w = 0.0;
        let mut sum_w2 = 0.0;
        let mut mean = vec![0.0; dim];
        // two passes: weighted means first, then delta-method variances
        let mut g = vec![0.0; dim];
        for (log_w, u, s, b) in &self.entries {
            let w = (log_w - self.max_log_w).exp();
            sum_w += w;
            sum_w2 += w * w;
            fill_moment_functions(&mut g, *u, s, b, q, r);
            for (m, gi) in mean.iter_mut().zip(&g) {
                *m += w * gi;
            }
        }
        for m in mean.iter_mut() {
            *m /= sum_w;
        }
        let mut var = vec![0.0; dim];
        for (log_w, u, s, b) in &self.entries {
            let w = (log_w - self.max_log_w).exp();
            fill_moment_functions(&mut g, *u, s, b, q, r);
            for ((v, gi), m) in var.iter_mut().zip(&g).zip(&mean) {
                *v += w * w * (gi - m) * (gi - m);
            }
        }
        let se: Vec<f64> = var.iter().map(|v| v.sqrt() / sum_w).collect();
        let effective_draws = sum_w * sum_w / sum_w2;

        let vec_at = |src: &[f64], at: usize, k: usize| {
            DVector::from_iterator(k, src[at..at + k].iter().copied())
        };
        let mat_at = |src: &[f64], at: usize, rows: usize, cols: usize| {
            DMatrix::from_iterator(rows, cols, src[at..at + rows * cols].iter().copied())
        };
        let mut at = 0;
        let u = (mean[0], se[0]);
        at += 1;
        let us = (vec_at(&mean, at, r), vec_at(&se, at, r));
        at += r;
        let us2 = (mat_at(&mean, at, r, r), mat_at(&se, at, r, r));
        at += r * r;
        let ub = (vec_at(&mean, at, q), vec_at(&se, at, q));
        at += q;
        let ubs = (mat_at(&mean, at, q, r), mat_at(&se, at, q, r));
        at += q * r;
        let ub2 = (mat_at(&mean, at, q, q), mat_at(&se, at, q, q));
        at += q * q;
        let b_mean = (vec_at(&mean, at, q), vec_at(&se, at, q));
        LatentMomentEstimates { u, us, us2, ub, ubs, ub2, b_mean, effective_draws }
    }
}

/// Stacks (u, u s, u s s', u b, u b s', u b b', b) into one flat buffer.
fn fill_moment_functions(g: &mut [f64], u: f64, s: &DVector<f64>, b: &DVector<f64>, q: usize, r: usize) {
    let mut at = 0;
    g[at] = u;
    at += 1;
    for i in 0..r {
        g[at] = u * s[i];
        at += 1;
    }
    for j in 0..r {
        for i in 0..r {
            g[at] = u * s[i] * s[j];
            at += 1;
        }
    }
    for i in 0..q {
        g[at] = u * b[i];
        at += 1;
    }
    for j in 0..r {
        for i in 0..q {
            g[at] = u * b[i] * s[j];
            at += 1;
        }
    }
    for j in 0..q {
        for i in 0..q {
            g[at] = u * b[i] * b[j];
            at += 1;
        }
    }
    for i in 0..q {
        g[at] = b[i];
        at += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::e_step;
    use crate::inference::estimate_random_effects;
    use crate::model::{DeltaStructure, Family};
    use crate::mvdist::Dof;
    use nalgebra::{dmatrix, dvector};

    fn theta() -> Theta {
        Theta::new(
            dvector![0.5, 1.0],
            0.3,
            dmatrix![0.6, -0.1; -0.1, 0.4],
            DMatrix::from_row_slice(2, 2, &[0.6, 1.5, -1.0, 3.0]),
            Dof::Finite(6.0),
            Family::SkewT,
            DeltaStructure::Full,
        )
        .unwrap()
    }

    fn block() -> SubjectBlock {
        let x = DMatrix::from_columns(&[
            DVector::from_element(3, 1.0),
            dvector![-1.0, 0.0, 1.0],
        ]);
        SubjectBlock::new("s1", dvector![0.6, -0.2, 1.4], x.clone(), x).unwrap()
    }

    #[test]
    fn importance_sampler_certifies_the_e_step() {
        let theta = theta();
        let block = block();
        let analytic = e_step(&theta, &block).unwrap();
        let mc = latent_moments_is(&theta, &block, 800_000, 99).unwrap();
        assert!(mc.effective_draws > 10_000.0);

        let within = |est: f64, se: f64, truth: f64, label: &str| {
            assert!(
                (est - truth).abs() <= 3.5 * se + 1e-12,
                "{label}: analytic {truth} vs MC {est} (se {se})"
            );
        };
        within(mc.u.0, mc.u.1, analytic.u_hat, "u");
        for i in 0..2 {
            within(mc.us.0[i], mc.us.1[i], analytic.us_hat[i], "us");
            within(mc.ub.0[i], mc.ub.1[i], analytic.ub_hat[i], "ub");
            for j in 0..2 {
                within(mc.us2.0[(i, j)], mc.us2.1[(i, j)], analytic.us2_hat[(i, j)], "us2");
                within(mc.ubs.0[(i, j)], mc.ubs.1[(i, j)], analytic.ubs_hat[(i, j)], "ubs");
                within(mc.ub2.0[(i, j)], mc.ub2.1[(i, j)], analytic.ub2_hat[(i, j)], "ub2");
            }
        }
    }

    #[test]
    fn posterior_mean_matches_random_effect_estimator() {
        let theta = theta();
        let block = block();
        let bhat = estimate_random_effects(&theta, &block).unwrap();
        let mc = latent_moments_is(&theta, &block, 600_000, 7).unwrap();
        for i in 0..2 {
            assert!(
                (mc.b_mean.0[i] - bhat[i]).abs() <= 3.5 * mc.b_mean.1[i] + 1e-12,
                "b[{i}]: estimator {} vs MC {} (se {})",
                bhat[i],
                mc.b_mean.0[i],
                mc.b_mean.1[i]
            );
        }
    }
}
