//! Reproducible generators for the illustrative scenarios and the two
//! simulation studies, plus a Monte Carlo runner that aggregates
//! MC-AV / MC-SD / SE-L / SE-N summary tables.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit, FitConfig, InitStrategy};
use crate::inference;
use crate::model::{DeltaStructure, Family, LongDataset, SubjectBlock, Theta};
use crate::mvdist::Dof;
use crate::par;
use crate::skew::{b_constant, cfust_sample, logpdf, CfustParams};

/// One of the named data-generating designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// Random-effect-distribution showcases; the letter picks the shape
    /// matrix, `nu` records which dof interpretation is generated.
    Illustrative { variant: u8, nu: u32 },
    Study1,
    Study2,
}

/// A fully specified generator: design constants, number of subjects, and
/// the base seed all replica seeds derive from.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub n_subjects: usize,
    pub seed: u64,
}

pub const SCENARIO_NAMES: &[&str] = &[
    "illus-a", "illus-b", "illus-c", "illus-d",
    "illus-a-nu5", "illus-b-nu5", "illus-c-nu5", "illus-d-nu5",
    "study1", "study2",
];

impl Scenario {
    /// Parses a scenario name. The illustrative scenarios default to the
    /// printed nu = 10; the `-nu5` suffix selects the dof consistent with
    /// the printed centering constant b = -0.949.
    pub fn from_name(name: &str, n_subjects: Option<usize>, seed: u64) -> Result<Self> {
        let kind = match name {
            "study1" => ScenarioKind::Study1,
            "study2" => ScenarioKind::Study2,
            _ => {
                let rest = name.strip_prefix("illus-").ok_or_else(|| unknown_scenario(name))?;
                let (variant, nu) = match rest {
                    "a" | "a-nu10" => (b'a', 10),
                    "b" | "b-nu10" => (b'b', 10),
                    "c" | "c-nu10" => (b'c', 10),
                    "d" | "d-nu10" => (b'd', 10),
                    "a-nu5" => (b'a', 5),
                    "b-nu5" => (b'b', 5),
                    "c-nu5" => (b'c', 5),
                    "d-nu5" => (b'd', 5),
                    _ => return Err(unknown_scenario(name)),
                };
                ScenarioKind::Illustrative { variant, nu }
            }
        };
        let default_n = match kind {
            ScenarioKind::Illustrative { .. } => 200,
            ScenarioKind::Study1 => 100,
            ScenarioKind::Study2 => 200,
        };
        Ok(Self { kind, n_subjects: n_subjects.unwrap_or(default_n), seed })
    }

    /// The shape matrix printed for this design.
    pub fn delta(&self) -> DMatrix<f64> {
        match self.kind {
            ScenarioKind::Illustrative { variant: b'a', .. } | ScenarioKind::Study1 => {
                // Study 1 uses the location-consistent orientation: the
                // printed location (-1.993, -1.898) equals b(5) * (2.1, 2.0),
                // the row sums of this matrix.
                DMatrix::from_row_slice(2, 2, &[0.6, 1.5, -1.0, 3.0])
            }
            ScenarioKind::Illustrative { variant: b'b', .. } | ScenarioKind::Study2 => {
                DMatrix::from_row_slice(2, 2, &[1.7, 0.7, 3.9, -0.8])
            }
            ScenarioKind::Illustrative { variant: b'c', .. } => {
                DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -2.0])
            }
            ScenarioKind::Illustrative { variant: b'd', .. } => {
                DMatrix::from_row_slice(2, 2, &[2.0, 0.0, -2.0, 0.0])
            }
            ScenarioKind::Illustrative { .. } => unreachable!("validated at parse"),
        }
    }

    fn d_matrix(&self) -> DMatrix<f64> {
        match self.kind {
            ScenarioKind::Study2 => DMatrix::from_row_slice(2, 2, &[0.1, -0.1, -0.1, 0.5]),
            _ => DMatrix::from_row_slice(2, 2, &[0.5, -0.2, -0.2, 0.5]),
        }
    }

    pub fn nu(&self) -> Dof {
        match self.kind {
            ScenarioKind::Illustrative { nu, .. } => Dof::Finite(nu as f64),
            ScenarioKind::Study1 | ScenarioKind::Study2 => Dof::Finite(5.0),
        }
    }

    /// The CFUST law of the random effects b_i, centered so E[b_i] = 0.
    pub fn random_effect_params(&self) -> CfustParams {
        let delta = self.delta();
        let nu = self.nu();
        let b = b_constant(nu).expect("scenario dof is > 1");
        let mu = b * (&delta * DVector::from_element(2, 1.0));
        CfustParams::new(mu, self.d_matrix(), delta, nu).expect("printed constants are valid")
    }

    /// True model parameters (the studies only; illustrative scenarios have
    /// no regression design).
    pub fn true_theta(&self) -> Result<Theta> {
        let (beta, sigma2) = match self.kind {
            ScenarioKind::Study1 => (DVector::from_vec(vec![1.0, 3.0]), 0.25),
            ScenarioKind::Study2 => (DVector::from_vec(vec![2.7, -1.0, 6.8]), 0.21),
            ScenarioKind::Illustrative { .. } => {
                return Err(Error::InvalidParameter(
                    "illustrative scenarios have no regression design".into(),
                ))
            }
        };
        Theta::new(
            beta,
            sigma2,
            self.d_matrix(),
            self.delta(),
            Dof::Finite(5.0),
            Family::SkewT,
            DeltaStructure::Full,
        )
    }

    /// Within-subject design (X_i, Z_i), shared across subjects.
    pub fn design(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match self.kind {
            ScenarioKind::Study1 => {
                let x = DVector::from_vec(vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
                let design = DMatrix::from_columns(&[DVector::from_element(5, 1.0), x]);
                Ok((design.clone(), design))
            }
            ScenarioKind::Study2 => {
                let x = DVector::from_vec(vec![-0.3, -0.15, 0.0, 0.15, 0.3]);
                let x2 = x.map(|v| v * v);
                let ones = DVector::from_element(5, 1.0);
                let fixed = DMatrix::from_columns(&[ones.clone(), x.clone(), x2]);
                let random = DMatrix::from_columns(&[ones, x]);
                Ok((fixed, random))
            }
            ScenarioKind::Illustrative { .. } => Err(Error::InvalidParameter(
                "illustrative scenarios have no regression design".into(),
            )),
        }
    }
}

fn unknown_scenario(name: &str) -> Error {
    Error::InvalidParameter(format!(
        "unknown scenario {name:?}; valid names: {}",
        SCENARIO_NAMES.join(", ")
    ))
}

/// Deterministic per-replica seed derivation (splitmix64 finalizer).
pub fn replica_seed(base: u64, replica: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(replica.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates one replica of a study dataset together with its true theta.
///
/// The pair (b_i, e_i) is drawn from the joint CFUST law of the model (one
/// shared mixing variable per subject), so b_i marginally follows the
/// printed skew-t law and e_i the printed t law.
pub fn generate_dataset(scenario: &Scenario, replica: u64) -> Result<(LongDataset, Theta)> {
    let theta = scenario.true_theta()?;
    let (x, z) = scenario.design()?;
    let n = x.nrows();
    let q = theta.q();
    let r = theta.r();

    // Joint (b, e) law: location (b Delta 1_r, 0), scale blockdiag(D,
    // sigma^2 I), shape (Delta; 0).
    let mut mu = DVector::zeros(q + n);
    mu.rows_mut(0, q)
        .copy_from(&(theta.b() * (&theta.delta * DVector::from_element(r, 1.0))));
    let mut omega = DMatrix::zeros(q + n, q + n);
    omega.view_mut((0, 0), (q, q)).copy_from(&theta.d);
    for i in 0..n {
        omega[(q + i, q + i)] = theta.sigma2;
    }
    let mut delta = DMatrix::zeros(q + n, r);
    delta.view_mut((0, 0), (q, r)).copy_from(&theta.delta);
    let joint = CfustParams::new(mu, omega, delta, theta.nu)?;

    let seed = replica_seed(scenario.seed, replica);
    let draws = cfust_sample(&joint, scenario.n_subjects, seed);
    let width = scenario.n_subjects.to_string().len().max(4);
    let subjects: Vec<SubjectBlock> = draws
        .iter()
        .enumerate()
        .map(|(i, joint_draw)| {
            let b = joint_draw.rows(0, q).into_owned();
            let e = joint_draw.rows(q, n).into_owned();
            let y = &x * &theta.beta + &z * b + e;
            SubjectBlock::new(format!("s{i:0width$}"), y, x.clone(), z.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let data = LongDataset::new(subjects, None)?;
    Ok((data, theta))
}

/// Per-parameter Monte Carlo summary row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub true_value: f64,
    pub mc_av: f64,
    /// Absent when fewer than two replicas succeeded.
    pub mc_sd: Option<f64>,
    pub se_l_mean: Option<f64>,
    pub se_n_mean: Option<f64>,
    pub n_ok: usize,
}

/// Aggregated Monte Carlo study results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McSummary {
    pub rows: Vec<ParamSummary>,
    pub replicas_requested: usize,
    pub n_ok: usize,
    pub n_fit_failures: usize,
    pub n_nonconverged: usize,
    /// Replicas whose numerical Hessian failed (only counted when SE-N
    /// computation was requested).
    pub n_hessian_failures: usize,
}

impl McSummary {
    /// Writes the summary as CSV with the stable column set.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "parameter,true,mc_av,mc_sd,se_l_mean,se_n_mean,n_ok")?;
        for row in &self.rows {
            let fmt = |v: &Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:.17e},{:.17e},{},{},{},{}",
                row.name,
                row.true_value,
                row.mc_av,
                fmt(&row.mc_sd),
                fmt(&row.se_l_mean),
                fmt(&row.se_n_mean),
                row.n_ok
            )?;
        }
        Ok(())
    }
}

/// Monte Carlo runner configuration.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub fit: FitConfig,
    pub compute_se_louis: bool,
    /// Numerical-Hessian standard errors dominate runtime; off by default.
    pub compute_se_numeric: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::new(Family::SkewT).with_rank(2),
            compute_se_louis: true,
            compute_se_numeric: false,
        }
    }
}

struct ReplicaOutcome {
    estimates: Option<DVector<f64>>,
    se_l: Option<DVector<f64>>,
    se_n: Option<DVector<f64>>,
    converged: bool,
    hessian_failed: bool,
}

/// Fits `replicas` independently generated datasets and aggregates the
/// estimates. Replicas run in parallel with counter-derived seeds; failed
/// replicas are recorded, not fatal.
pub fn run_monte_carlo(scenario: &Scenario, replicas: usize, config: &McConfig) -> Result<McSummary> {
    let truth = scenario.true_theta()?;
    let names = {
        let mut n = inference::parameter_names(&truth);
        if truth.family.estimates_nu() {
            n.push("nu".into());
        }
        n
    };
    let true_values = {
        let mut v = inference::pack_params(&truth).as_slice().to_vec();
        if truth.family.estimates_nu() {
            v.push(truth.nu.value());
        }
        DVector::from_vec(v)
    };

    let outcomes: Vec<ReplicaOutcome> = par::map_range(replicas, |rep| {
        run_one_replica(scenario, rep as u64, config, &truth)
    });

    let dim = names.len();
    let mut sums: DVector<f64> = DVector::zeros(dim);
    let mut sums_sq: DVector<f64> = DVector::zeros(dim);
    let mut se_l_sum: DVector<f64> = DVector::zeros(dim);
    let mut se_n_sum: DVector<f64> = DVector::zeros(dim);
    let (mut n_ok, mut n_fail, mut n_nonconv, mut n_hess, mut n_se_l, mut n_se_n) =
        (0usize, 0usize, 0usize, 0usize, 0usize, 0usize);
    for o in &outcomes {
        match &o.estimates {
            Some(est) => {
                n_ok += 1;
                if !o.converged {
                    n_nonconv += 1;
                }
                sums += est;
                sums_sq += est.component_mul(est);
                if let Some(se) = &o.se_l {
                    n_se_l += 1;
                    for i in 0..dim.min(se.len()) {
                        se_l_sum[i] += se[i];
                    }
                }
                if let Some(se) = &o.se_n {
                    n_se_n += 1;
                    for i in 0..dim.min(se.len()) {
                        se_n_sum[i] += se[i];
                    }
                }
                if o.hessian_failed {
                    n_hess += 1;
                }
            }
            None => n_fail += 1,
        }
    }
    if n_ok == 0 {
        return Err(Error::Data("every Monte Carlo replica failed".into()));
    }
    let nf = n_ok as f64;
    let rows = (0..dim)
        .map(|i| {
            let mean = sums[i] / nf;
            let mc_sd = if n_ok >= 2 {
                let var = (sums_sq[i] - nf * mean * mean) / (nf - 1.0);
                Some(var.max(0.0).sqrt())
            } else {
                None
            };
            // SE vectors exclude nu (it is grid-searched, not scored).
            let se_available = i < dim - usize::from(truth.family.estimates_nu());
            ParamSummary {
                name: names[i].clone(),
                true_value: true_values[i],
                mc_av: mean,
                mc_sd,
                se_l_mean: (se_available && n_se_l > 0).then(|| se_l_sum[i] / n_se_l as f64),
                se_n_mean: (se_available && n_se_n > 0).then(|| se_n_sum[i] / n_se_n as f64),
                n_ok,
            }
        })
        .collect();
    Ok(McSummary {
        rows,
        replicas_requested: replicas,
        n_ok,
        n_fit_failures: n_fail,
        n_nonconverged: n_nonconv,
        n_hessian_failures: n_hess,
    })
}

fn run_one_replica(
    scenario: &Scenario,
    rep: u64,
    config: &McConfig,
    truth: &Theta,
) -> ReplicaOutcome {
    let failed = ReplicaOutcome {
        estimates: None,
        se_l: None,
        se_n: None,
        converged: false,
        hessian_failed: false,
    };
    let Ok((data, _)) = generate_dataset(scenario, rep) else {
        return failed;
    };
    let mut fit_config = config.fit.clone();
    fit_config.seed = replica_seed(scenario.seed ^ 0xF17, rep);
    if fit_config.init == InitStrategy::TrueValues {
        fit_config.true_theta = Some(truth.clone());
    }
    let Ok(result) = fit(&data, &fit_config) else {
        return failed;
    };
    let mut theta_hat = result.theta.clone();
    align_delta_columns(&mut theta_hat, truth);
    let mut estimates = inference::pack_params(&theta_hat).as_slice().to_vec();
    if theta_hat.family.estimates_nu() {
        estimates.push(theta_hat.nu.value());
    }
    let se_l = if config.compute_se_louis {
        inference::louis_information(&theta_hat, &data)
            .ok()
            .and_then(|info| info.se)
    } else {
        None
    };
    let (se_n, hessian_failed) = if config.compute_se_numeric {
        match inference::numerical_hessian_se(&theta_hat, &data) {
            Ok(se) => (Some(se), false),
            Err(_) => (None, true),
        }
    } else {
        (None, false)
    };
    ReplicaOutcome {
        estimates: Some(DVector::from_vec(estimates)),
        se_l,
        se_n,
        converged: result.converged,
        hessian_failed,
    }
}

/// Puts the fitted shape matrix into the truth's column labeling: the
/// marginal likelihood is invariant under column permutations of Delta, so
/// replica estimates are aligned (minimum Frobenius distance over
/// permutations) before averaging. Signs are identified by the model and are
/// left alone; the diagonal structure ties columns to coordinates and needs
/// no alignment.
fn align_delta_columns(fitted: &mut Theta, truth: &Theta) {
    let r = fitted.r();
    if fitted.structure != DeltaStructure::Full || r < 2 || truth.delta.ncols() != r {
        return;
    }
    let mut best_perm: Vec<usize> = (0..r).collect();
    let mut best_cost = f64::INFINITY;
    let mut perm: Vec<usize> = (0..r).collect();
    permute_columns_search(&mut perm, 0, &fitted.delta, &truth.delta, &mut best_perm, &mut best_cost);
    if best_perm.iter().enumerate().all(|(i, &p)| i == p) {
        return;
    }
    let reordered = DMatrix::from_fn(fitted.delta.nrows(), r, |i, j| fitted.delta[(i, best_perm[j])]);
    fitted.delta = reordered;
}

fn permute_columns_search(
    perm: &mut Vec<usize>,
    at: usize,
    fitted: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    best_perm: &mut Vec<usize>,
    best_cost: &mut f64,
) {
    let r = perm.len();
    if at == r {
        let mut cost = 0.0;
        for j in 0..r {
            for i in 0..fitted.nrows() {
                let diff = fitted[(i, perm[j])] - truth[(i, j)];
                cost += diff * diff;
            }
        }
        if cost < *best_cost {
            *best_cost = cost;
            best_perm.clone_from(perm);
        }
        return;
    }
    for k in at..r {
        perm.swap(at, k);
        permute_columns_search(perm, at + 1, fitted, truth, best_perm, best_cost);
        perm.swap(at, k);
    }
}

/// Rectangular evaluation grid for a bivariate density.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn cell_area(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64 * (self.y_max - self.y_min) / self.ny as f64
    }
}

/// Evaluates the density of a bivariate CFUST law at the cell centers of the
/// grid; entry (i, j) is the density at the i-th x and j-th y coordinate.
pub fn contour_grid(params: &CfustParams, grid: &GridSpec) -> Result<DMatrix<f64>> {
    if params.dim() != 2 {
        return Err(Error::DimensionMismatch {
            context: format!("contour grid needs a bivariate law, got dimension {}", params.dim()),
        });
    }
    if grid.nx == 0 || grid.ny == 0 {
        return Err(Error::InvalidParameter("grid must have positive extent".into()));
    }
    let dx = (grid.x_max - grid.x_min) / grid.nx as f64;
    let dy = (grid.y_max - grid.y_min) / grid.ny as f64;
    let rows = par::map_range(grid.nx, |i| {
        let x = grid.x_min + (i as f64 + 0.5) * dx;
        let mut row = vec![0.0; grid.ny];
        for (j, cell) in row.iter_mut().enumerate() {
            let y = grid.y_min + (j as f64 + 0.5) * dy;
            let point = DVector::from_vec(vec![x, y]);
            *cell = logpdf(&point, params).map(f64::exp).unwrap_or(f64::NAN);
        }
        row
    });
    let mut out = DMatrix::zeros(grid.nx, grid.ny);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scenario_names_parse() {
        for name in SCENARIO_NAMES {
            assert!(Scenario::from_name(name, None, 1).is_ok(), "{name}");
        }
        let err = Scenario::from_name("study3", None, 1).unwrap_err();
        assert!(err.to_string().contains("study1"));
    }

    #[test]
    fn study_locations_match_printed_values() {
        // b(5) * row sums reproduces the printed locations to 3 decimals.
        let s1 = Scenario::from_name("study1", None, 0).unwrap();
        let p1 = s1.random_effect_params();
        assert_relative_eq!(p1.mu()[0], -1.993, epsilon = 5e-4);
        assert_relative_eq!(p1.mu()[1], -1.898, epsilon = 5e-4);

        let s2 = Scenario::from_name("study2", None, 0).unwrap();
        let p2 = s2.random_effect_params();
        assert_relative_eq!(p2.mu()[0], -2.278, epsilon = 5e-4);
        assert_relative_eq!(p2.mu()[1], -2.942, epsilon = 5e-4);
    }

    #[test]
    fn random_effects_are_centered() {
        let s1 = Scenario::from_name("study1", None, 0).unwrap();
        let m = crate::skew::cfust_moments(&s1.random_effect_params()).unwrap();
        assert!(m.mean.amax() < 1e-12);
        // sampling agrees within 3 MC standard errors
        let n = 1_000_000;
        let draws = cfust_sample(&s1.random_effect_params(), n, 5);
        let mean = draws.iter().sum::<DVector<f64>>() / n as f64;
        for i in 0..2 {
            let sd = (m.variance[(i, i)] / n as f64).sqrt();
            assert!(mean[i].abs() < 3.5 * sd, "mean[{i}] = {}", mean[i]);
        }
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let s = Scenario::from_name("study1", Some(23), 42).unwrap();
        let (data, theta) = generate_dataset(&s, 0).unwrap();
        assert_eq!(data.n_subjects(), 23);
        assert_eq!(data.n_obs(), 23 * 5);
        assert_eq!(theta.p(), 2);
        assert_eq!(theta.q(), 2);
        let (data2, _) = generate_dataset(&s, 0).unwrap();
        for (a, b) in data.subjects().iter().zip(data2.subjects()) {
            assert_eq!(a.y, b.y);
        }
        let (data3, _) = generate_dataset(&s, 1).unwrap();
        assert!(data.subjects()[0].y != data3.subjects()[0].y);
    }

    #[test]
    fn study2_design_has_quadratic_column() {
        let s = Scenario::from_name("study2", Some(5), 1).unwrap();
        let (x, z) = s.design().unwrap();
        assert_eq!(x.ncols(), 3);
        assert_eq!(z.ncols(), 2);
        assert_relative_eq!(x[(0, 2)], 0.09, epsilon = 1e-15);
    }

    #[test]
    fn contour_grid_normalizes_for_scenario_a() {
        let s = Scenario::from_name("illus-a", None, 0).unwrap();
        let params = s.random_effect_params();
        let m = crate::skew::cfust_moments(&params).unwrap();
        let sx = m.variance[(0, 0)].sqrt();
        let sy = m.variance[(1, 1)].sqrt();
        let grid = GridSpec {
            x_min: m.mean[0] - 14.0 * sx,
            x_max: m.mean[0] + 14.0 * sx,
            y_min: m.mean[1] - 14.0 * sy,
            y_max: m.mean[1] + 14.0 * sy,
            nx: 500,
            ny: 500,
        };
        let values = contour_grid(&params, &grid).unwrap();
        let integral = values.sum() * grid.cell_area();
        assert_relative_eq!(integral, 1.0, epsilon = 2e-3);
    }

    #[test]
    fn contour_grid_symmetric_when_delta_zero() {
        let params = CfustParams::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.5, -0.2, -0.2, 0.5]),
            DMatrix::zeros(2, 2),
            Dof::Finite(10.0),
        )
        .unwrap();
        let grid = GridSpec { x_min: -3.0, x_max: 3.0, y_min: -3.0, y_max: 3.0, nx: 21, ny: 21 };
        let values = contour_grid(&params, &grid).unwrap();
        for i in 0..21 {
            for j in 0..21 {
                assert_relative_eq!(
                    values[(i, j)],
                    values[(20 - i, 20 - j)],
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn sdb_scenario_shifts_mode_into_signed_quadrant() {
        // Scenario (c): diagonal Delta = diag(2, -2) pulls the density mode
        // toward (+, -) relative to the symmetric case's mode at mu.
        let s = Scenario::from_name("illus-c", None, 0).unwrap();
        let params = s.random_effect_params();
        let grid = GridSpec { x_min: -6.0, x_max: 6.0, y_min: -6.0, y_max: 6.0, nx: 121, ny: 121 };
        let values = contour_grid(&params, &grid).unwrap();
        let mut best = (0usize, 0usize);
        for i in 0..121 {
            for j in 0..121 {
                if values[(i, j)] > values[best] {
                    best = (i, j);
                }
            }
        }
        let x_mode = -6.0 + (best.0 as f64 + 0.5) * (12.0 / 121.0);
        let y_mode = -6.0 + (best.1 as f64 + 0.5) * (12.0 / 121.0);
        let mu = params.mu();
        assert!(x_mode > mu[0], "mode x {x_mode} should sit right of mu {}", mu[0]);
        assert!(y_mode < mu[1], "mode y {y_mode} should sit left of mu {}", mu[1]);
    }

    #[test]
    fn replica_seeds_are_spread() {
        let a = replica_seed(1, 0);
        let b = replica_seed(1, 1);
        let c = replica_seed(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn tiny_monte_carlo_smoke() {
        let scenario = Scenario::from_name("study1", Some(40), 11).unwrap();
        let mut config = McConfig::default();
        config.fit.max_iter = 60;
        config.fit.tolerance = 1e-4;
        config.compute_se_louis = false;
        let summary = run_monte_carlo(&scenario, 2, &config).unwrap();
        assert_eq!(summary.rows.len(), 11); // beta0 beta1 sigma2 D(3) Delta(4) nu
        assert!(summary.n_ok >= 1);
        assert!(summary.rows.iter().all(|r| r.mc_av.is_finite()));
        // single replica: SD defined only with >= 2 successes
        let single = run_monte_carlo(&scenario, 1, &config).unwrap();
        assert!(single.rows[0].mc_sd.is_none());
    }
}
