//! Conditional independence tests between column groups.
//!
//! Two backends share one interface: a kernel test on random Fourier
//! features with a moment-matched gamma null ([`rcot`]), and a partial
//! correlation test with the Fisher transform for linear settings
//! ([`fisherz`]). Both take dense column groups; discrete labels enter
//! through [`one_hot`].

pub mod fisherz;
pub mod rcot;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fisherz::fisher_z_pvalue;
pub use rcot::{rcot_pvalue, NullMethod, RcotParams};

/// Errors raised by the independence tests.
#[derive(Debug, Error)]
pub enum CiError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("row counts differ: {0} vs {1}")]
    RowMismatch(usize, usize),
    #[error("a tested group has zero columns")]
    EmptyGroup,
    #[error("non-finite value in tested data")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// Which independence test backend to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiTestKind {
    Rcot,
    FisherZ,
}

/// A configured tester, dispatching on the backend kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiTester {
    pub kind: CiTestKind,
    pub rcot: RcotParams,
}

impl Default for CiTester {
    fn default() -> Self {
        Self {
            kind: CiTestKind::Rcot,
            rcot: RcotParams::default(),
        }
    }
}

impl CiTester {
    /// P-value for the hypothesis that `a` and `b` are independent given
    /// `cond`; pass a zero-column `cond` for marginal independence.
    pub fn pvalue(
        &self,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        cond: &DMatrix<f64>,
        seed: u64,
    ) -> Result<f64, CiError> {
        match self.kind {
            CiTestKind::Rcot => rcot_pvalue(a, b, cond, &self.rcot, seed),
            CiTestKind::FisherZ => fisher_z_pvalue(a, b, cond),
        }
    }
}

/// Indicator columns for integer labels, dropping level zero as reference.
///
/// Returns an `n` by `num_levels - 1` matrix whose column `k - 1` is one
/// exactly where the label equals `k`.
pub fn one_hot(labels: &[u32], num_levels: u32) -> Result<DMatrix<f64>, CiError> {
    if num_levels < 2 {
        return Err(CiError::BadParameter(format!(
            "one_hot needs at least two levels, got {num_levels}"
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= num_levels) {
        return Err(CiError::BadParameter(format!(
            "label {bad} outside 0..{num_levels}"
        )));
    }
    let mut out = DMatrix::zeros(labels.len(), num_levels as usize - 1);
    for (i, &label) in labels.iter().enumerate() {
        if label > 0 {
            out[(i, label as usize - 1)] = 1.0;
        }
    }
    Ok(out)
}

/// Common argument checks shared by the backends.
pub(crate) fn check_groups(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cond: &DMatrix<f64>,
) -> Result<(), CiError> {
    if a.nrows() != b.nrows() {
        return Err(CiError::RowMismatch(a.nrows(), b.nrows()));
    }
    if cond.ncols() > 0 && cond.nrows() != a.nrows() {
        return Err(CiError::RowMismatch(a.nrows(), cond.nrows()));
    }
    if a.ncols() == 0 || b.ncols() == 0 {
        return Err(CiError::EmptyGroup);
    }
    for m in [a, b, cond] {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(CiError::NonFinite);
        }
    }
    Ok(())
}

/// Standardizes each column to zero mean and unit sample variance; columns
/// with no variation become all zero.
pub(crate) fn standardize_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        if n > 1 {
            let std = (col.iter().map(|v| v * v).sum::<f64>() / (n as f64 - 1.0)).sqrt();
            if std > 1e-12 {
                col /= std;
            } else {
                col.fill(0.0);
            }
        }
    }
    out
}

/// Subtracts the mean of each column in place.
pub(crate) fn center_columns(x: &mut DMatrix<f64>) {
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
}
