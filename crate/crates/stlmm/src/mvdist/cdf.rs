//! Centered multivariate t / normal CDF at arbitrary points.
//!
//! Dispatch by dimension:
//! - r = 0: empty product, probability 1;
//! - r = 1: closed form (incomplete beta / erfc);
//! - r = 2: deterministic kernels — Drezner-Wesolowsky quadrature for the
//!   normal, the Dunnett-Sobel finite series for integer dof, and a
//!   Gamma-mixture quadrature over the normal kernel otherwise;
//! - r >= 3: separation-of-variables quasi-Monte Carlo (randomized Richtmyer
//!   lattice, 8192 points x 8 shifts) with a fixed internal seed, so repeated
//!   calls are bit-identical.
//!
//! Absolute accuracy is ~1e-14 for r <= 2 and well within 5e-5 for r in
//! {3, 4} at the default budget.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::spd_cholesky;
use crate::special::{chi2_quantile, ln_gamma, norm_cdf, norm_quantile, t_cdf};

use super::Dof;

/// P(T <= x) for T ~ t_r(0, sigma, nu); `Dof::Infinite` gives the Gaussian CDF.
///
/// The center is fixed at zero: every caller in this crate evaluates centered
/// CDFs, shifting the point instead.
pub fn mvt_cdf(x: &DVector<f64>, sigma: &DMatrix<f64>, nu: Dof) -> Result<f64> {
    let r = x.len();
    if r == 0 {
        return Ok(1.0);
    }
    if sigma.nrows() != r || sigma.ncols() != r {
        return Err(Error::DimensionMismatch {
            context: format!("cdf point has length {r}, scale is {}x{}", sigma.nrows(), sigma.ncols()),
        });
    }
    nu.validate()?;
    let mut sd = vec![0.0; r];
    for i in 0..r {
        let v = sigma[(i, i)];
        if !(v > 0.0) {
            return Err(Error::NotPositiveDefinite {
                context: "cdf scale has non-positive diagonal".into(),
            });
        }
        sd[i] = v.sqrt();
    }
    match r {
        1 => Ok(univariate_cdf(x[0] / sd[0], nu)),
        2 => {
            let rho = sigma[(0, 1)] / (sd[0] * sd[1]);
            if rho.abs() > 1.0 + 1e-8 {
                return Err(Error::NotPositiveDefinite {
                    context: format!("cdf scale implies correlation {rho}"),
                });
            }
            let rho = rho.clamp(-1.0, 1.0);
            Ok(bivariate_cdf(x[0] / sd[0], x[1] / sd[1], rho, nu))
        }
        _ => {
            let mut corr = DMatrix::zeros(r, r);
            for i in 0..r {
                for j in 0..r {
                    corr[(i, j)] = sigma[(i, j)] / (sd[i] * sd[j]);
                }
            }
            let chol = spd_cholesky(&corr, "cdf correlation matrix")?;
            let lower = chol.l_dirty().lower_triangle();
            let z = DVector::from_fn(r, |i, _| x[i] / sd[i]);
            Ok(qmc_cdf(&z, &lower, nu))
        }
    }
}

fn univariate_cdf(z: f64, nu: Dof) -> f64 {
    match nu {
        Dof::Infinite => norm_cdf(z),
        Dof::Finite(v) => t_cdf(z, v),
    }
}

fn bivariate_cdf(h: f64, k: f64, rho: f64, nu: Dof) -> f64 {
    let p = match nu {
        Dof::Infinite => bvn_cdf(h, k, rho),
        Dof::Finite(v) => {
            if let Some(n) = integer_dof(v) {
                bvt_dunnett_sobel(n, h, k, rho)
            } else if v > MAX_SERIES_DOF as f64 {
                // Indistinguishable from the Gaussian at this dof.
                bvn_cdf(h, k, rho)
            } else {
                bvt_gamma_mixture(v, h, k, rho)
            }
        }
    };
    p.clamp(0.0, 1.0)
}

const MAX_SERIES_DOF: u64 = 400;

fn integer_dof(v: f64) -> Option<u64> {
    let n = v.round();
    if (v - n).abs() < 1e-9 && n >= 1.0 && n <= MAX_SERIES_DOF as f64 {
        Some(n as u64)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Bivariate normal: Drezner-Wesolowsky / Genz quadrature.
// ---------------------------------------------------------------------------

/// P(X <= h, Y <= k) for standard bivariate normal with correlation rho.
pub(crate) fn bvn_cdf(h: f64, k: f64, rho: f64) -> f64 {
    bvn_upper(-h, -k, rho).clamp(0.0, 1.0)
}

// Gauss-Legendre half-rules used by the Drezner-Wesolowsky integration
// (weight, node) pairs; each node is used at asr*(1 -+ x).
const GL6: [(f64, f64); 3] = [
    (0.1713244923791705, -0.9324695142031522),
    (0.3607615730481384, -0.6612093864662647),
    (0.4679139345726904, -0.2386191860831970),
];
const GL12: [(f64, f64); 6] = [
    (0.04717533638651177, -0.9815606342467191),
    (0.1069393259953183, -0.9041172563704750),
    (0.1600783285433464, -0.7699026741943050),
    (0.2031674267230659, -0.5873179542866171),
    (0.2334925365383547, -0.3678314989981802),
    (0.2491470458134029, -0.1252334085114692),
];
const GL20: [(f64, f64); 10] = [
    (0.01761400713915212, -0.9931285991850949),
    (0.04060142980038694, -0.9639719272779138),
    (0.06267204833410906, -0.9122344282513259),
    (0.08327674157670475, -0.8391169718222188),
    (0.1019301198172404, -0.7463319064601508),
    (0.1181945319615184, -0.6360536807265150),
    (0.1316886384491766, -0.5108670019508271),
    (0.1420961093183821, -0.3737060887154196),
    (0.1491729864726037, -0.2277858511416451),
    (0.1527533871307259, -0.07652652113349733),
];

fn dw_quadrature(rho_abs: f64) -> &'static [(f64, f64)] {
    if rho_abs < 0.3 {
        &GL6
    } else if rho_abs < 0.75 {
        &GL12
    } else {
        &GL20
    }
}

/// P(X > dh, Y > dk) for standard bivariate normal with correlation r.
fn bvn_upper(dh: f64, dk: f64, r: f64) -> f64 {
    if r >= 1.0 - 1e-15 {
        return norm_cdf(-dh.max(dk));
    }
    if r <= -1.0 + 1e-15 {
        return (norm_cdf(-dh) - norm_cdf(dk)).max(0.0);
    }
    // The published expansion loses accuracy for strongly negative
    // correlation; map to the positive branch via the complement.
    if r < -0.925 {
        return (norm_cdf(-dh) - bvn_upper(dh, -dk, -r)).max(0.0);
    }
    let h = dh;
    let k = dk;
    let hk = h * k;
    let quad = dw_quadrature(r.abs());
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        if r.abs() > 0.0 {
            let hs = 0.5 * (h * h + k * k);
            let asr = 0.5 * r.asin();
            for &(w, x) in quad {
                for is in [-1.0, 1.0] {
                    let sn = (asr * (is * x + 1.0)).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / two_pi;
        }
        bvn + norm_cdf(-h) * norm_cdf(-k)
    } else {
        // 0.925 <= r < 1
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let b_s = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        let asr = -0.5 * (b_s / a_s + hk);
        if asr > -100.0 {
            bvn = a
                * asr.exp()
                * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        }
        if -hk < 100.0 {
            let b = b_s.sqrt();
            bvn -= (-0.5 * hk).exp()
                * two_pi.sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
        }
        a *= 0.5;
        for &(w, x) in quad {
            for is in [-1.0, 1.0] {
                let xs = (a * (is * x + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                let asr = -0.5 * (b_s / xs + hk);
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                            - (1.0 + c * xs * (1.0 + d * xs)));
                }
            }
        }
        bvn = -bvn / two_pi;
        bvn + norm_cdf(-h.max(k))
    }
}

// ---------------------------------------------------------------------------
// Bivariate t, integer dof: Dunnett-Sobel finite series (Genz's BVTL).
// ---------------------------------------------------------------------------

/// P(X <= dh, Y <= dk) for the standard bivariate t with integer dof.
fn bvt_dunnett_sobel(nu: u64, dh: f64, dk: f64, r: f64) -> f64 {
    let eps = 1e-13;
    if 1.0 - r <= eps {
        return t_cdf(dh.min(dk), nu as f64);
    }
    if r + 1.0 <= eps {
        return if dh > -dk {
            t_cdf(dh, nu as f64) - t_cdf(-dk, nu as f64)
        } else {
            0.0
        };
    }
    let pi = std::f64::consts::PI;
    let tpi = 2.0 * pi;
    let nuf = nu as f64;
    let snu = nuf.sqrt();
    let ors = 1.0 - r * r;
    let hrk = dh - r * dk;
    let krh = dk - r * dh;
    let (xnhk, xnkh) = if hrk.abs() + ors > 0.0 {
        (
            hrk * hrk / (hrk * hrk + ors * (nuf + dk * dk)),
            krh * krh / (krh * krh + ors * (nuf + dh * dh)),
        )
    } else {
        (0.0, 0.0)
    };
    let hs = (dh - r * dk).signum();
    let ks = (dk - r * dh).signum();
    let mut bvt;
    if nu % 2 == 0 {
        bvt = ors.sqrt().atan2(-r) / tpi;
        let mut gmph = dh / (16.0 * (nuf + dh * dh)).sqrt();
        let mut gmpk = dk / (16.0 * (nuf + dk * dk)).sqrt();
        let mut btnckh = 2.0 * xnkh.sqrt().atan2((1.0 - xnkh).sqrt()) / pi;
        let mut btpdkh = 2.0 * (xnkh * (1.0 - xnkh)).sqrt() / pi;
        let mut btnchk = 2.0 * xnhk.sqrt().atan2((1.0 - xnhk).sqrt()) / pi;
        let mut btpdhk = 2.0 * (xnhk * (1.0 - xnhk)).sqrt() / pi;
        for j in 1..=(nu / 2) {
            let jf = j as f64;
            bvt += gmph * (1.0 + ks * btnckh);
            bvt += gmpk * (1.0 + hs * btnchk);
            btnckh += btpdkh;
            btpdkh = 2.0 * jf * btpdkh * (1.0 - xnkh) / (2.0 * jf + 1.0);
            btnchk += btpdhk;
            btpdhk = 2.0 * jf * btpdhk * (1.0 - xnhk) / (2.0 * jf + 1.0);
            gmph *= (2.0 * jf - 1.0) / (2.0 * jf * (1.0 + dh * dh / nuf));
            gmpk *= (2.0 * jf - 1.0) / (2.0 * jf * (1.0 + dk * dk / nuf));
        }
    } else {
        let qhrk = (dh * dh + dk * dk - 2.0 * r * dh * dk + nuf * ors).sqrt();
        let hkrn = dh * dk + r * nuf;
        let hkn = dh * dk - nuf;
        let hpk = dh + dk;
        bvt = (-snu * (hkn * qhrk + hpk * hkrn)).atan2(hkn * hkrn - nuf * hpk * qhrk) / tpi;
        if bvt < -1e-15 {
            bvt += 1.0;
        }
        let mut gmph = dh / (tpi * snu * (1.0 + dh * dh / nuf));
        let mut gmpk = dk / (tpi * snu * (1.0 + dk * dk / nuf));
        let mut btnckh = xnkh.sqrt();
        let mut btpdkh = btnckh;
        let mut btnchk = xnhk.sqrt();
        let mut btpdhk = btnchk;
        for j in 1..=((nu - 1) / 2) {
            let jf = j as f64;
            bvt += gmph * (1.0 + ks * btnckh);
            bvt += gmpk * (1.0 + hs * btnchk);
            btpdkh = (2.0 * jf - 1.0) * btpdkh * (1.0 - xnkh) / (2.0 * jf);
            btnckh += btpdkh;
            btpdhk = (2.0 * jf - 1.0) * btpdhk * (1.0 - xnhk) / (2.0 * jf);
            btnchk += btpdhk;
            gmph *= 2.0 * jf / ((2.0 * jf + 1.0) * (1.0 + dh * dh / nuf));
            gmpk *= 2.0 * jf / ((2.0 * jf + 1.0) * (1.0 + dk * dk / nuf));
        }
    }
    bvt.clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Bivariate t, non-integer dof: mix the normal kernel over the Gamma scale.
// ---------------------------------------------------------------------------

fn bvt_gamma_mixture(nu: f64, h: f64, k: f64, rho: f64) -> f64 {
    let nodes = gamma_mixture_nodes(nu, 64);
    let mut num = 0.0;
    let mut den = 0.0;
    for &(g, w) in &nodes {
        let s = g.sqrt();
        num += w * bvn_cdf(s * h, s * k, rho);
        den += w;
    }
    num / den
}

/// Quadrature nodes (g, weight) for expectations over the mixing variable
/// G ~ Gamma(nu/2, rate nu/2), i.e. approximations of E[f(G)] = sum w*f(g).
///
/// Integrates in t = sqrt(g) with Gauss-Legendre between extreme quantiles;
/// the substitution keeps integrands smooth for small shapes. Weights include
/// the Gamma density and Jacobian, so they sum to ~1 (normalize for exactness).
/// The 1e-16 clip keeps 1/g-weighted integrands (truncated second moments)
/// accurate down to small shapes.
pub(crate) fn gamma_mixture_nodes(nu: f64, n: usize) -> Vec<(f64, f64)> {
    debug_assert!(nu > 0.0);
    let a = 0.5 * nu;
    let g_lo = (chi2_quantile(1e-16, nu) / nu).max(0.0);
    let g_hi = chi2_quantile(1.0 - 1e-13, nu) / nu;
    let t_lo = g_lo.sqrt();
    let t_hi = g_hi.sqrt();
    let ln_norm = a * a.ln() - ln_gamma(a);
    let (nodes, weights) = crate::special::gauss_legendre(n);
    let half = 0.5 * (t_hi - t_lo);
    let mid = 0.5 * (t_hi + t_lo);
    nodes
        .iter()
        .zip(weights)
        .map(|(&u, &w)| {
            let t = mid + half * u;
            let g = t * t;
            // Gamma(a, rate a) density times Jacobian dg = 2t dt.
            let ln_f = ln_norm + (a - 1.0) * g.ln() - a * g;
            let weight = w * half * ln_f.exp() * 2.0 * t;
            (g, weight)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// r >= 3: separation-of-variables quasi-Monte Carlo (Genz / Genz-Bretz).
// ---------------------------------------------------------------------------

const QMC_POINTS: usize = 8192;
const QMC_SHIFTS: usize = 8;
const QMC_SEED: u64 = 0x5354_4c4d_4d00_cdf1;

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn qmc_cdf(z: &DVector<f64>, lower: &DMatrix<f64>, nu: Dof) -> f64 {
    let r = z.len();
    let dim = match nu {
        Dof::Infinite => r - 1,
        Dof::Finite(_) => r,
    };
    if dim == 0 {
        return univariate_cdf(z[0] / lower[(0, 0)], nu);
    }
    let gens: Vec<f64> = PRIMES[..dim].iter().map(|&p| (p as f64).sqrt().fract()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(QMC_SEED);
    let mut total = 0.0;
    let mut w = vec![0.0; dim];
    for _ in 0..QMC_SHIFTS {
        let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let mut acc = 0.0;
        for point in 1..=QMC_POINTS {
            for (j, g) in gens.iter().enumerate() {
                w[j] = (point as f64 * g + shift[j]).fract();
            }
            acc += qmc_integrand(z, lower, nu, &w);
        }
        total += acc / QMC_POINTS as f64;
    }
    (total / QMC_SHIFTS as f64).clamp(0.0, 1.0)
}

fn qmc_integrand(z: &DVector<f64>, lower: &DMatrix<f64>, nu: Dof, w: &[f64]) -> f64 {
    let r = z.len();
    let (scale, w_norm) = match nu {
        Dof::Infinite => (1.0, w),
        Dof::Finite(v) => {
            let u0 = w[0].clamp(1e-15, 1.0 - 1e-15);
            ((chi2_quantile(u0, v) / v).sqrt(), &w[1..])
        }
    };
    let mut y = vec![0.0; r - 1];
    let mut prod = 1.0;
    for i in 0..r {
        let mut shifted = scale * z[i];
        for (j, yj) in y.iter().enumerate().take(i) {
            shifted -= lower[(i, j)] * yj;
        }
        let e = norm_cdf(shifted / lower[(i, i)]);
        prod *= e;
        if prod <= 1e-300 {
            return 0.0;
        }
        if i + 1 < r {
            let u = (w_norm[i] * e).clamp(1e-16, 1.0 - 1e-16);
            y[i] = norm_quantile(u);
        }
    }
    prod
}
