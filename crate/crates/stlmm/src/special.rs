//! Scalar special functions and quadrature rules used by the distribution kernels.
//!
//! Everything here is deterministic. The heavy lifting (error function,
//! regularized incomplete beta/gamma) is delegated to `statrs`.

use statrs::function::{beta, erf, gamma};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF, accurate in both tails via erfc.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / SQRT_2)
}

/// Standard normal quantile.
#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    -SQRT_2 * erf::erfc_inv(2.0 * p)
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

/// CDF of the univariate Student-t with `nu` degrees of freedom (standardized).
pub fn t_cdf(x: f64, nu: f64) -> f64 {
    debug_assert!(nu > 0.0);
    if !x.is_finite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    if x == 0.0 {
        return 0.5;
    }
    let z = nu / (nu + x * x);
    let half_tail = 0.5 * beta::beta_reg(0.5 * nu, 0.5, z);
    if x < 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

/// Log-density of the univariate Student-t (standardized).
pub fn t_logpdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

/// Quantile of the chi-squared distribution with `k` degrees of freedom.
///
/// Bracketed Newton iteration on the log-CDF (lower half) or log-survival
/// (upper half), which stays well conditioned deep into both tails. Used for
/// quadrature bounds and the quasi-Monte Carlo driver.
pub fn chi2_quantile(p: f64, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let a = 0.5 * k;
    let ln_norm = -a * std::f64::consts::LN_2 - ln_gamma(a);
    let ln_pdf = |x: f64| (a - 1.0) * x.ln() - 0.5 * x + ln_norm;

    // Initial guess: Wilson-Hilferty in the bulk, tail expansion when it
    // degenerates or the target probability is extreme.
    let z = norm_quantile(p);
    let c = 2.0 / (9.0 * k);
    let wh = k * (1.0 - c + z * c.sqrt()).powi(3);
    let small = 2.0 * ((p.ln() + ln_gamma(a + 1.0)) / a).exp();
    let mut x = if p < 0.05 {
        small
    } else if wh.is_finite() && wh > 0.0 {
        wh
    } else {
        k
    };
    if !x.is_finite() || x <= 0.0 {
        x = k;
    }

    let lower_target = p <= 0.5;
    let ln_target = if lower_target { p.ln() } else { (1.0 - p).ln() };
    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    for _ in 0..200 {
        let (h, dh) = if lower_target {
            let cdf = gamma::gamma_lr(a, 0.5 * x);
            if cdf <= 0.0 {
                lo = x;
                x = if hi.is_finite() { 0.5 * (x + hi) } else { 2.0 * x };
                continue;
            }
            (cdf.ln() - ln_target, (ln_pdf(x).exp()) / cdf)
        } else {
            let sf = gamma::gamma_ur(a, 0.5 * x);
            if sf <= 0.0 {
                hi = x;
                x = 0.5 * (lo + x);
                continue;
            }
            (sf.ln() - ln_target, -(ln_pdf(x).exp()) / sf)
        };
        // h is increasing in x for the lower-tail form, decreasing for the
        // survival form; update the bracket accordingly.
        if (lower_target && h > 0.0) || (!lower_target && h < 0.0) {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        if dh == 0.0 || !dh.is_finite() {
            x = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x };
            continue;
        }
        let step = h / dh;
        let mut next = x - step;
        if !(next > lo && (next < hi || hi.is_infinite())) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x };
        }
        if (next - x).abs() <= 1e-13 * x.abs() {
            return next;
        }
        x = next;
    }
    x
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
///
/// Computed by Newton iteration on the Legendre recurrence; results are
/// accurate to machine precision and cached for the sizes the crate uses.
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    use std::sync::OnceLock;
    static CACHE_32: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static CACHE_48: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static CACHE_64: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match n {
        32 => CACHE_32.get_or_init(|| compute_gauss_legendre(32)),
        48 => CACHE_48.get_or_init(|| compute_gauss_legendre(48)),
        64 => CACHE_64.get_or_init(|| compute_gauss_legendre(64)),
        _ => panic!("gauss_legendre: unsupported rule size {n}"),
    }
}

fn compute_gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root (descending order).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            let step = p / d;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
