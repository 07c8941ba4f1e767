//! The skew-t linear mixed model: per-subject design blocks, the marginal
//! subject density, and the observed-data log-likelihood.
//!
//! For subject i with n_i observations,
//!
//!   y_i = X_i beta + Z_i b_i + e_i,
//!
//! where (b_i, e_i) jointly follow a CFUST law sharing one mixing variable:
//! b_i is skew-t with scale D and shape Delta (centered through b(nu)), e_i
//! is t with scale sigma^2 I. Marginally y_i is CFUST with location
//! X_i beta + b(nu) Z_i Delta 1_r, scale Psi_i = Z_i D Z_i' + sigma^2 I, and
//! shape Z_i Delta.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, spd_cholesky};
use crate::mvdist::Dof;
use crate::par;
use crate::skew::{self, affine_transform, b_constant, CfustParams};
use crate::truncmom::MAX_RANK;

/// Distribution family of the joint random-effect / error law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Gaussian effects and errors: Delta = 0, nu infinite.
    Normal,
    /// Student-t effects and errors: Delta = 0, integer nu.
    T,
    /// Skew-normal: free Delta, nu infinite.
    SkewNormal,
    /// Skew-t: free Delta, integer nu.
    SkewT,
}

impl Family {
    pub fn is_skewed(self) -> bool {
        matches!(self, Family::SkewNormal | Family::SkewT)
    }

    pub fn estimates_nu(self) -> bool {
        matches!(self, Family::T | Family::SkewT)
    }

    pub fn label(self) -> &'static str {
        match self {
            Family::Normal => "n",
            Family::T => "t",
            Family::SkewNormal => "sn",
            Family::SkewT => "st",
        }
    }
}

/// Structure imposed on the q x r shape matrix Delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeltaStructure {
    /// All q*r entries free.
    Full,
    /// The Sahu-Dey-Branco special case: r = q and Delta diagonal.
    Diagonal,
}

/// Full parameter vector theta = (beta, sigma^2, D, Delta, nu) plus family
/// flags. Fields are public; call [`Theta::validate`] after hand edits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theta {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub d: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub nu: Dof,
    pub family: Family,
    pub structure: DeltaStructure,
}

impl Theta {
    pub fn new(
        beta: DVector<f64>,
        sigma2: f64,
        d: DMatrix<f64>,
        delta: DMatrix<f64>,
        nu: Dof,
        family: Family,
        structure: DeltaStructure,
    ) -> Result<Self> {
        let theta = Self { beta, sigma2, d, delta, nu, family, structure };
        theta.validate()?;
        Ok(theta)
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn q(&self) -> usize {
        self.d.nrows()
    }

    /// Skewness rank (columns of Delta).
    pub fn r(&self) -> usize {
        self.delta.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        check_symmetric(&self.d, "random-effect scale D")?;
        spd_cholesky(&self.d, "random-effect scale D")?;
        let q = self.q();
        if self.delta.nrows() != q {
            return Err(Error::DimensionMismatch {
                context: format!("delta has {} rows, D is {q}x{q}", self.delta.nrows()),
            });
        }
        match self.nu {
            Dof::Infinite => {}
            Dof::Finite(v) => {
                if !(v >= 2.0) || (v - v.round()).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "model nu must be an integer >= 2 or infinite, got {v}"
                    )));
                }
            }
        }
        let delta_zero = self.delta.iter().all(|&v| v == 0.0);
        match self.family {
            Family::Normal => {
                if !delta_zero || self.nu.is_finite() {
                    return Err(Error::InvalidParameter(
                        "family n requires Delta = 0 and infinite nu".into(),
                    ));
                }
            }
            Family::T => {
                if !delta_zero {
                    return Err(Error::InvalidParameter("family t requires Delta = 0".into()));
                }
                if !self.nu.is_finite() {
                    return Err(Error::InvalidParameter("family t requires finite nu".into()));
                }
            }
            Family::SkewNormal => {
                if self.nu.is_finite() {
                    return Err(Error::InvalidParameter("family sn requires infinite nu".into()));
                }
            }
            Family::SkewT => {
                if !self.nu.is_finite() {
                    return Err(Error::InvalidParameter("family st requires finite nu".into()));
                }
            }
        }
        if self.family.is_skewed() {
            let r = self.r();
            if r == 0 || r > MAX_RANK {
                return Err(Error::UnsupportedRank(r));
            }
        }
        if self.structure == DeltaStructure::Diagonal {
            if self.r() != q {
                return Err(Error::InvalidParameter(format!(
                    "diagonal structure requires r = q, got r = {}, q = {q}",
                    self.r()
                )));
            }
            for i in 0..q {
                for j in 0..q {
                    if i != j && self.delta[(i, j)] != 0.0 {
                        return Err(Error::InvalidParameter(
                            "diagonal structure requires zero off-diagonal Delta entries".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Free entries of Delta under the family and structure constraints.
    pub fn delta_free_entries(&self) -> usize {
        if !self.family.is_skewed() {
            return 0;
        }
        match self.structure {
            DeltaStructure::Full => self.q() * self.r(),
            DeltaStructure::Diagonal => self.q(),
        }
    }

    /// Number of estimated parameters: p + 1 + q(q+1)/2 + free Delta entries
    /// + 1 when nu is searched over.
    pub fn npar(&self) -> usize {
        let q = self.q();
        self.p() + 1 + q * (q + 1) / 2
            + self.delta_free_entries()
            + usize::from(self.family.estimates_nu())
    }

    /// The centering constant b(nu) for the current dof.
    pub fn b(&self) -> f64 {
        b_constant(self.nu).expect("validated theta has nu >= 2")
    }
}

/// One subject's response and design blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectBlock {
    pub id: String,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl SubjectBlock {
    pub fn new(id: impl Into<String>, y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let id = id.into();
        let n = y.len();
        if n == 0 {
            return Err(Error::Data(format!("subject {id} has no observations")));
        }
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "subject {id}: y has {n} rows, X has {}, Z has {}",
                    x.nrows(),
                    z.nrows()
                ),
            });
        }
        Ok(Self { id, y, x, z })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }
}

/// Column names behind a dataset ingested from a file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub subject: String,
    pub response: String,
    pub fixed: Vec<String>,
    pub random: Vec<String>,
}

/// An ordered collection of subject blocks with constant design widths.
/// Subjects are kept sorted by id so that reductions have a deterministic
/// order regardless of thread count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LongDataset {
    subjects: Vec<SubjectBlock>,
    pub columns: Option<ColumnMeta>,
}

impl LongDataset {
    pub fn new(mut subjects: Vec<SubjectBlock>, columns: Option<ColumnMeta>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Data("dataset has no subjects".into()));
        }
        subjects.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in subjects.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Data(format!("duplicate subject id {}", pair[0].id)));
            }
        }
        let p = subjects[0].x.ncols();
        let q = subjects[0].z.ncols();
        for s in &subjects {
            if s.x.ncols() != p || s.z.ncols() != q {
                return Err(Error::DimensionMismatch {
                    context: format!(
                        "subject {}: X has {} columns (expected {p}), Z has {} (expected {q})",
                        s.id,
                        s.x.ncols(),
                        s.z.ncols()
                    ),
                });
            }
        }
        Ok(Self { subjects, columns })
    }

    pub fn subjects(&self) -> &[SubjectBlock] {
        &self.subjects
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_obs(&self) -> usize {
        self.subjects.iter().map(|s| s.n_obs()).sum()
    }

    pub fn p(&self) -> usize {
        self.subjects[0].x.ncols()
    }

    pub fn q(&self) -> usize {
        self.subjects[0].z.ncols()
    }
}

/// The marginal CFUST law of one subject's response under `theta`.
pub fn subject_marginal_params(block: &SubjectBlock, theta: &Theta) -> Result<CfustParams> {
    let n = block.n_obs();
    if block.x.ncols() != theta.p() {
        return Err(Error::DimensionMismatch {
            context: format!("X has {} columns, beta has length {}", block.x.ncols(), theta.p()),
        });
    }
    if block.z.ncols() != theta.q() {
        return Err(Error::DimensionMismatch {
            context: format!("Z has {} columns, D is {q}x{q}", block.z.ncols(), q = theta.q()),
        });
    }
    let z_delta = &block.z * &theta.delta;
    let ones = DVector::from_element(theta.r(), 1.0);
    let mu = &block.x * &theta.beta + theta.b() * (&z_delta * ones);
    let mut psi = &block.z * &theta.d * block.z.transpose();
    for i in 0..n {
        psi[(i, i)] += theta.sigma2;
    }
    CfustParams::new(mu, psi, z_delta, theta.nu)
}

/// Log of the marginal density of y_i, evaluated through the printed
/// closed form (t density times a rescaled t CDF).
pub fn subject_marginal_logpdf(block: &SubjectBlock, theta: &Theta) -> Result<f64> {
    let params = subject_marginal_params(block, theta)?;
    skew::logpdf(&block.y, &params)
}

/// Same quantity through the second route: the joint (b_i, e_i) CFUST law
/// pushed through y_i = X_i beta + (Z_i I) (b_i', e_i')'. Used to
/// cross-validate the direct formula.
pub fn subject_marginal_logpdf_joint(block: &SubjectBlock, theta: &Theta) -> Result<f64> {
    let n = block.n_obs();
    let q = theta.q();
    let r = theta.r();
    let ones = DVector::from_element(r, 1.0);
    let mut mu_joint = DVector::zeros(q + n);
    mu_joint.rows_mut(0, q).copy_from(&(theta.b() * (&theta.delta * ones)));
    let mut omega_joint = DMatrix::zeros(q + n, q + n);
    omega_joint.view_mut((0, 0), (q, q)).copy_from(&theta.d);
    for i in 0..n {
        omega_joint[(q + i, q + i)] = theta.sigma2;
    }
    let mut delta_joint = DMatrix::zeros(q + n, r);
    delta_joint.view_mut((0, 0), (q, r)).copy_from(&theta.delta);
    let joint = CfustParams::new(mu_joint, omega_joint, delta_joint, theta.nu)?;

    let mut a = DMatrix::zeros(n, q + n);
    a.view_mut((0, 0), (n, q)).copy_from(&block.z);
    a.view_mut((0, q), (n, n)).copy_from(&DMatrix::identity(n, n));
    let c = &block.x * &theta.beta;
    let marginal = affine_transform(&joint, &a, &c)?;
    skew::logpdf(&block.y, &marginal)
}

/// Observed-data log-likelihood: the sum of subject marginal log-densities.
/// Subject terms are evaluated in parallel and summed in subject order.
pub fn loglik(theta: &Theta, data: &LongDataset) -> Result<f64> {
    let terms = par::map_collect(data.subjects(), |block| {
        subject_marginal_logpdf(block, theta).map_err(|e| e.for_subject(&block.id))
    });
    let mut total = 0.0;
    for term in terms {
        total += term?;
    }
    Ok(total)
}
