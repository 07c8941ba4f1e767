//! Run configuration: a JSON config file merged with command-line flag
//! overrides (flags win), resolved into the concrete settings each command
//! needs.

use serde::{Deserialize, Serialize};
use stlmm::model::{DeltaStructure, Family};
use stlmm::{FitConfig, InitStrategy};

/// On-disk configuration. Every field is optional; command-line flags
/// override whatever the file provides.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<String>,
    pub output: Option<String>,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub fitter: FitterBlock,
    #[serde(default)]
    pub flags: FlagBlock,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    /// One of n, t, sn, st.
    pub family: Option<String>,
    /// Skewness rank (ignored for n/t; forced to q by the sdb structure).
    pub r: Option<usize>,
    /// full or sdb.
    pub structure: Option<String>,
    pub response: Option<String>,
    pub fixed: Option<Vec<String>>,
    pub random: Option<Vec<String>>,
    pub subject: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitterBlock {
    pub tolerance: Option<f64>,
    pub max_iter: Option<usize>,
    pub nu_min: Option<u32>,
    pub nu_max: Option<u32>,
    /// true-values | normal-plus-grid | sn-warmstart | hybrid | best-of
    pub init: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagBlock {
    pub se_louis: Option<bool>,
    pub se_numeric: Option<bool>,
    pub random_effects: Option<bool>,
}

pub fn parse_family(name: &str) -> Result<Family, String> {
    match name {
        "n" | "normal" => Ok(Family::Normal),
        "t" => Ok(Family::T),
        "sn" | "skew-normal" => Ok(Family::SkewNormal),
        "st" | "skew-t" => Ok(Family::SkewT),
        other => Err(format!("unknown family {other:?} (expected n, t, sn, st)")),
    }
}

pub fn parse_structure(name: &str) -> Result<DeltaStructure, String> {
    match name {
        "full" => Ok(DeltaStructure::Full),
        "sdb" | "diagonal" => Ok(DeltaStructure::Diagonal),
        other => Err(format!("unknown structure {other:?} (expected full or sdb)")),
    }
}

pub fn parse_init(name: &str) -> Result<InitStrategy, String> {
    match name {
        "true-values" => Ok(InitStrategy::TrueValues),
        "normal-plus-grid" => Ok(InitStrategy::NormalPlusGrid),
        "sn-warmstart" => Ok(InitStrategy::SnWarmstart),
        "hybrid" => Ok(InitStrategy::Hybrid),
        "best-of" => Ok(InitStrategy::BestOf),
        other => Err(format!(
            "unknown init strategy {other:?} (expected true-values, normal-plus-grid, sn-warmstart, hybrid, best-of)"
        )),
    }
}

pub fn init_name(init: InitStrategy) -> &'static str {
    match init {
        InitStrategy::TrueValues => "true-values",
        InitStrategy::NormalPlusGrid => "normal-plus-grid",
        InitStrategy::SnWarmstart => "sn-warmstart",
        InitStrategy::Hybrid => "hybrid",
        InitStrategy::BestOf => "best-of",
    }
}

/// Builds the fitter configuration from the merged settings.
pub fn build_fit_config(
    family: Family,
    structure: DeltaStructure,
    r: usize,
    fitter: &FitterBlock,
    seed: u64,
) -> FitConfig {
    let mut config = FitConfig::new(family).with_rank(r).with_structure(structure);
    if let Some(t) = fitter.tolerance {
        config.tolerance = t;
    }
    if let Some(m) = fitter.max_iter {
        config.max_iter = m;
    }
    let lo = fitter.nu_min.unwrap_or(2);
    let hi = fitter.nu_max.unwrap_or(100);
    config.nu_grid = lo..=hi;
    config.seed = seed;
    config
}
