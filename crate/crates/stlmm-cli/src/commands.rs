//! Command implementations and their file outputs. All outputs go through
//! an atomic temp-file-plus-rename write.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use stlmm::inference;
use stlmm::model::LongDataset;
use stlmm::mvdist::Dof;
use stlmm::sim::{contour_grid, generate_dataset, GridSpec, McConfig, McSummary, Scenario};
use stlmm::skew::{cfust_moments, cfust_sample, CfustParams};
use stlmm::{fit, FitConfig, FitResult};

use crate::config::init_name;

/// Exit status the caller maps to a process exit code.
pub enum Outcome {
    Success,
    DidNotConverge,
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), String> {
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes).map_err(|e| format!("cannot write {}: {e}", tmp.display()))?;
    std::fs::rename(&tmp, path).map_err(|e| format!("cannot move output into {}: {e}", path.display()))?;
    Ok(())
}

/// Machine-readable fit report. Field names are a stable public contract;
/// numbers round-trip exactly through their shortest decimal form.
#[derive(Debug, Serialize)]
pub struct FitReport {
    pub family: String,
    pub structure: String,
    pub r: usize,
    pub p: usize,
    pub q: usize,
    pub n_subjects: usize,
    pub n_obs: usize,
    pub estimates: BTreeMap<String, f64>,
    pub se_louis: Option<BTreeMap<String, f64>>,
    pub se_numeric: Option<BTreeMap<String, f64>>,
    pub loglik: f64,
    pub aic: f64,
    pub npar: usize,
    pub iterations: usize,
    pub converged: bool,
    pub init_strategy: String,
    pub seed: u64,
    pub random_effects: Option<BTreeMap<String, Vec<f64>>>,
}

pub struct FitFlags {
    pub se_louis: bool,
    pub se_numeric: bool,
    pub random_effects: bool,
}

pub fn cmd_fit(
    data: &LongDataset,
    config: &FitConfig,
    flags: &FitFlags,
    output: &Path,
) -> Result<Outcome, String> {
    let result = fit(data, config).map_err(|e| format!("fit failed: {e}"))?;
    let report = build_report(data, config, &result, flags)?;
    let mut json = serde_json::to_vec_pretty(&report).map_err(|e| e.to_string())?;
    json.push(b'\n');
    atomic_write(output, &json)?;
    if result.converged {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::DidNotConverge)
    }
}

fn build_report(
    data: &LongDataset,
    config: &FitConfig,
    result: &FitResult,
    flags: &FitFlags,
) -> Result<FitReport, String> {
    let theta = &result.theta;
    let names = inference::parameter_names(theta);
    let packed = inference::pack_params(theta);
    let mut estimates: BTreeMap<String, f64> =
        names.iter().cloned().zip(packed.iter().copied()).collect();
    if theta.family.estimates_nu() {
        estimates.insert("nu".into(), theta.nu.value());
    }
    let se_louis = if flags.se_louis {
        let info = inference::louis_information(theta, data).map_err(|e| e.to_string())?;
        info.se
            .map(|se| names.iter().cloned().zip(se.iter().copied()).collect())
    } else {
        None
    };
    let se_numeric = if flags.se_numeric {
        match inference::numerical_hessian_se(theta, data) {
            Ok(se) => Some(names.iter().cloned().zip(se.iter().copied()).collect()),
            Err(e) => {
                eprintln!("warning: numerical Hessian unavailable: {e}");
                None
            }
        }
    } else {
        None
    };
    let random_effects = flags.random_effects.then(|| {
        result
            .random_effects
            .iter()
            .map(|(id, b)| (id.clone(), b.as_slice().to_vec()))
            .collect()
    });
    Ok(FitReport {
        family: theta.family.label().to_string(),
        structure: match theta.structure {
            stlmm::model::DeltaStructure::Full => "full".into(),
            stlmm::model::DeltaStructure::Diagonal => "sdb".into(),
        },
        r: theta.r(),
        p: theta.p(),
        q: theta.q(),
        n_subjects: data.n_subjects(),
        n_obs: data.n_obs(),
        estimates,
        se_louis,
        se_numeric,
        loglik: result.loglik(),
        aic: result.aic,
        npar: theta.npar(),
        iterations: result.n_iter,
        converged: result.converged,
        init_strategy: init_name(result.init_strategy_chosen).to_string(),
        seed: config.seed,
        random_effects,
    })
}

/// Truth sidecar written next to simulated datasets.
#[derive(Debug, Serialize)]
struct TruthSidecar {
    scenario: String,
    n_subjects: usize,
    seed: u64,
    replica: u64,
    beta: Option<Vec<f64>>,
    sigma2: Option<f64>,
    d: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    nu: f64,
    location: Vec<f64>,
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn cmd_simulate(
    name: &str,
    scenario: &Scenario,
    replica: u64,
    output: &Path,
    truth_output: Option<&Path>,
) -> Result<(), String> {
    let mut csv_bytes = Vec::new();
    let sidecar;
    match scenario.true_theta() {
        Ok(theta) => {
            let (data, _) = generate_dataset(scenario, replica).map_err(|e| e.to_string())?;
            // covariate columns: x always, x2 for the quadratic design
            let has_x2 = theta.p() == 3;
            write!(csv_bytes, "subject,y,x{}", if has_x2 { ",x2" } else { "" }).unwrap();
            csv_bytes.push(b'\n');
            for block in data.subjects() {
                for k in 0..block.n_obs() {
                    let x = block.x[(k, 1)];
                    if has_x2 {
                        writeln!(csv_bytes, "{},{:.17e},{:.17e},{:.17e}", block.id, block.y[k], x, block.x[(k, 2)]).unwrap();
                    } else {
                        writeln!(csv_bytes, "{},{:.17e},{:.17e}", block.id, block.y[k], x).unwrap();
                    }
                }
            }
            sidecar = TruthSidecar {
                scenario: name.to_string(),
                n_subjects: scenario.n_subjects,
                seed: scenario.seed,
                replica,
                beta: Some(theta.beta.as_slice().to_vec()),
                sigma2: Some(theta.sigma2),
                d: matrix_rows(&theta.d),
                delta: matrix_rows(&theta.delta),
                nu: theta.nu.value(),
                location: scenario.random_effect_params().mu().as_slice().to_vec(),
            };
        }
        Err(_) => {
            // illustrative scenario: one sample of random effects
            let params = scenario.random_effect_params();
            let draws = cfust_sample(&params, scenario.n_subjects, stlmm::sim::replica_seed(scenario.seed, replica));
            csv_bytes.extend_from_slice(b"subject,b1,b2\n");
            let width = scenario.n_subjects.to_string().len().max(4);
            for (i, b) in draws.iter().enumerate() {
                writeln!(csv_bytes, "s{i:0width$},{:.17e},{:.17e}", b[0], b[1]).unwrap();
            }
            sidecar = TruthSidecar {
                scenario: name.to_string(),
                n_subjects: scenario.n_subjects,
                seed: scenario.seed,
                replica,
                beta: None,
                sigma2: None,
                d: matrix_rows(params.omega()),
                delta: matrix_rows(params.delta()),
                nu: params.nu().value(),
                location: params.mu().as_slice().to_vec(),
            };
        }
    }
    atomic_write(output, &csv_bytes)?;
    if let Some(path) = truth_output {
        let mut json = serde_json::to_vec_pretty(&sidecar).map_err(|e| e.to_string())?;
        json.push(b'\n');
        atomic_write(path, &json)?;
    }
    Ok(())
}

pub fn cmd_mc_study(
    scenario: &Scenario,
    replicas: usize,
    config: &McConfig,
    output: &Path,
) -> Result<McSummary, String> {
    let summary = stlmm::sim::run_monte_carlo(scenario, replicas, config).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    summary.write_csv(&mut bytes).map_err(|e| e.to_string())?;
    atomic_write(output, &bytes)?;
    Ok(summary)
}

pub fn cmd_density_grid(
    params: &CfustParams,
    grid: Option<GridSpec>,
    nx: usize,
    ny: usize,
    output: &Path,
) -> Result<(), String> {
    let grid = match grid {
        Some(g) => g,
        None => {
            let m = cfust_moments(params).map_err(|e| e.to_string())?;
            let sx = m.variance[(0, 0)].sqrt();
            let sy = m.variance[(1, 1)].sqrt();
            GridSpec {
                x_min: m.mean[0] - 8.0 * sx,
                x_max: m.mean[0] + 8.0 * sx,
                y_min: m.mean[1] - 8.0 * sy,
                y_max: m.mean[1] + 8.0 * sy,
                nx,
                ny,
            }
        }
    };
    let values = contour_grid(params, &grid).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    for i in 0..grid.nx {
        let row: Vec<String> = (0..grid.ny).map(|j| format!("{:.17e}", values[(i, j)])).collect();
        writeln!(bytes, "{}", row.join(",")).unwrap();
    }
    atomic_write(output, &bytes)?;
    Ok(())
}

/// Parameters for density-grid loaded from a JSON file:
/// `{"mu": [..], "omega": [[..]], "delta": [[..]], "nu": 5.0 | null}`.
#[derive(Debug, serde::Deserialize)]
pub struct ParamsFile {
    pub mu: Vec<f64>,
    pub omega: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub nu: Option<f64>,
}

impl ParamsFile {
    pub fn into_params(self) -> Result<CfustParams, String> {
        let p = self.mu.len();
        let omega_rows: Vec<f64> = self.omega.iter().flatten().copied().collect();
        let delta_cols = self.delta.first().map(|r| r.len()).unwrap_or(0);
        let delta_rows: Vec<f64> = self.delta.iter().flatten().copied().collect();
        if omega_rows.len() != p * p || (p > 0 && delta_rows.len() != p * delta_cols) {
            return Err("params file has inconsistent matrix shapes".into());
        }
        let nu = match self.nu {
            Some(v) => Dof::Finite(v),
            None => Dof::Infinite,
        };
        CfustParams::new(
            nalgebra::DVector::from_vec(self.mu),
            nalgebra::DMatrix::from_row_slice(p, p, &omega_rows),
            nalgebra::DMatrix::from_row_slice(p, delta_cols, &delta_rows),
            nu,
        )
        .map_err(|e| e.to_string())
    }
}
