//! Skew-t linear mixed models for longitudinal data.
//!
//! The crate implements the canonical fundamental skew-normal (CFUSN) and
//! skew-t (CFUST) distributions, a linear mixed model whose random effects
//! and errors jointly follow a CFUST law, maximum-likelihood estimation via
//! a closed-form ECME algorithm, empirical-Bayes random-effect prediction,
//! Louis-method standard errors, and AIC-based selection across the nested
//! family (normal, Student-t, skew-normal, skew-t; skewness ranks r = 1,
//! diagonal, full).
//!
//! Per-subject computations are data-parallel; build with the default
//! `parallel` feature for a rayon-backed implementation, or without it for a
//! fully sequential build. Results are bit-identical either way because all
//! reductions run in a deterministic order.

pub mod error;
pub mod fit;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod mvdist;
pub mod oracle;
pub mod par;
pub mod sim;
pub mod skew;
pub mod special;
pub mod truncmom;

pub use error::{Error, Result};
pub use fit::{e_step, fit, EStepMoments, FitConfig, FitResult, InitStrategy};
pub use inference::{
    aic, estimate_random_effects, louis_information, model_select, numerical_hessian_se,
};
pub use model::{
    loglik, subject_marginal_logpdf, subject_marginal_logpdf_joint, ColumnMeta, DeltaStructure,
    Family, LongDataset, SubjectBlock, Theta,
};
pub use mvdist::{
    mvn_logpdf, mvt_cdf, mvt_logpdf, sample_mvn, sample_mvt, Dof, GaussianParams, TParams,
};
pub use skew::{
    affine_transform, b_constant, cfusn_logpdf, cfust_logpdf, cfust_moments, cfust_sample,
    CfustMoments, CfustParams,
};
pub use truncmom::{rejection_oracle, trunc_t_mean_and_second_moment, TruncTSpec};
