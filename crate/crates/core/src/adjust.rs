//! Treatment effect estimation by per-arm ridge outcome regression.
//!
//! For an adjustment set Z, one ridge model per treatment arm is fit on
//! training rows (intercept unpenalized, penalty strength chosen by
//! k-fold cross-validation) and both models are evaluated on every row;
//! the effect estimate is the mean predicted outcome difference. An empty
//! Z degenerates to the difference of arm means.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{NodeId, NodeRole};
use crate::rng::derive_rng;
use crate::scm::dataset::{DataError, Dataset};

const TAG_ADJUST: u64 = 0x61_646a_7573_74;

/// Errors raised during effect estimation.
#[derive(Debug, Error)]
pub enum AdjustError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("treatment arm {arm} has no training rows")]
    EmptyArm { arm: u8 },
    #[error("treatment arm {arm} has {got} training rows, need {needed}")]
    TooFewRows { arm: u8, needed: usize, got: usize },
    #[error("design matrix is singular; use a positive penalty")]
    SingularDesign,
    #[error("adjustment set entry `{0}` has role `{1}`, expected a feature")]
    NotAFeature(NodeId, NodeRole),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("non-finite value during fitting")]
    NonFinite,
}

/// Cross-validation settings for the per-arm ridge fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeParams {
    /// Penalty grid, searched in order; ties keep the earliest entry.
    pub alphas: Vec<f64>,
    pub folds: usize,
}

impl Default for RidgeParams {
    fn default() -> Self {
        Self {
            alphas: vec![0.001, 0.01, 0.1, 1.0],
            folds: 5,
        }
    }
}

impl RidgeParams {
    fn validate(&self) -> Result<(), AdjustError> {
        if self.alphas.is_empty() {
            return Err(AdjustError::BadParameter("empty penalty grid".into()));
        }
        if self.alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(AdjustError::BadParameter("penalties must be >= 0".into()));
        }
        if self.folds < 2 {
            return Err(AdjustError::BadParameter("need at least two folds".into()));
        }
        Ok(())
    }
}

/// A fitted ridge model with an unpenalized intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeFit {
    pub intercept: f64,
    pub coefficients: DVector<f64>,
    pub alpha: f64,
}

impl RidgeFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut out = x * &self.coefficients;
        out.add_scalar_mut(self.intercept);
        out
    }
}

/// Ridge fit on centered normal equations; the intercept absorbs the means
/// and carries no penalty.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> Result<RidgeFit, AdjustError> {
    let (n, p) = (x.nrows(), x.ncols());
    if n == 0 || n != y.nrows() {
        return Err(AdjustError::BadParameter(format!(
            "{n} design rows for {} responses",
            y.nrows()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(AdjustError::NonFinite);
    }
    let x_mean = x.row_mean();
    let y_mean = y.mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let yc = y.map(|v| v - y_mean);
    let mut gram = xc.transpose() * &xc;
    for i in 0..p {
        gram[(i, i)] += alpha;
    }
    let coefficients = gram
        .cholesky()
        .ok_or(AdjustError::SingularDesign)?
        .solve(&(xc.transpose() * yc));
    if coefficients.iter().any(|v| !v.is_finite()) {
        return Err(AdjustError::NonFinite);
    }
    let intercept = y_mean - (x_mean * &coefficients)[(0, 0)];
    Ok(RidgeFit {
        intercept,
        coefficients,
        alpha,
    })
}

/// Contiguous fold slices over a shuffled index range.
fn fold_assignments(n: usize, folds: usize, rng: &mut rand_chacha::ChaCha12Rng) -> Vec<Vec<usize>> {
    use rand::RngExt;
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    (0..folds)
        .map(|k| order[k * n / folds..(k + 1) * n / folds].to_vec())
        .collect()
}

/// Mean squared validation error of each penalty in grid order.
pub(crate) fn cv_validation_errors(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: &RidgeParams,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<Vec<f64>, AdjustError> {
    let n = x.nrows();
    let assignments = fold_assignments(n, params.folds, rng);
    let mut errors = vec![0.0; params.alphas.len()];
    for holdout in &assignments {
        let train: Vec<usize> = {
            let held: BTreeSet<usize> = holdout.iter().copied().collect();
            (0..n).filter(|i| !held.contains(i)).collect()
        };
        let x_train = x.select_rows(train.iter());
        let y_train = y.select_rows(train.iter());
        let x_val = x.select_rows(holdout.iter());
        let y_val = y.select_rows(holdout.iter());
        for (slot, alpha) in params.alphas.iter().enumerate() {
            let fit = ridge_fit(&x_train, &y_train, *alpha)?;
            let residual = fit.predict(&x_val) - &y_val;
            errors[slot] += residual.norm_squared();
        }
    }
    for e in &mut errors {
        *e /= n as f64;
    }
    Ok(errors)
}

/// Ridge fit with the penalty chosen by k-fold cross-validation; on ties
/// the earliest grid entry wins.
pub fn ridge_cv_fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: &RidgeParams,
    seed: u64,
) -> Result<RidgeFit, AdjustError> {
    params.validate()?;
    let n = x.nrows();
    if n < params.folds {
        return Err(AdjustError::TooFewRows {
            arm: u8::MAX,
            needed: params.folds,
            got: n,
        });
    }
    let mut rng = derive_rng(seed, &[TAG_ADJUST]);
    let errors = cv_validation_errors(x, y, params, &mut rng)?;
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e < errors[best] {
            best = i;
        }
    }
    ridge_fit(x, y, params.alphas[best])
}

/// Checks that every entry of `z` is a feature column of the dataset.
fn check_adjustment_set(data: &Dataset, z: &BTreeSet<NodeId>) -> Result<(), AdjustError> {
    for id in z {
        let role = data.role(id)?;
        if role != NodeRole::Feature {
            return Err(AdjustError::NotAFeature(id.clone(), role));
        }
    }
    Ok(())
}

/// Effect estimate from per-arm models fit on `train_rows` and evaluated
/// on every row of the dataset.
pub fn ate_adjusted_split(
    data: &Dataset,
    z: &BTreeSet<NodeId>,
    train_rows: &[usize],
    params: &RidgeParams,
    seed: u64,
) -> Result<f64, AdjustError> {
    params.validate()?;
    check_adjustment_set(data, z)?;
    let t = data.treatment_values()?;
    let y_id = data.outcome_id()?.clone();
    let y_col = data.column(&y_id)?;
    let mut arms: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for &row in train_rows {
        arms[usize::from(t[row] == 1.0)].push(row);
    }
    for (arm, rows) in arms.iter().enumerate() {
        if rows.is_empty() {
            return Err(AdjustError::EmptyArm { arm: arm as u8 });
        }
    }

    if z.is_empty() {
        let mean_of = |rows: &[usize]| {
            rows.iter().map(|&i| y_col[(i, 0)]).sum::<f64>() / rows.len() as f64
        };
        return Ok(mean_of(&arms[1]) - mean_of(&arms[0]));
    }

    let ids: Vec<NodeId> = z.iter().cloned().collect();
    let (design, _) = data.design_matrix(&ids)?;
    let mut predictions = [DVector::zeros(0), DVector::zeros(0)];
    for (arm, rows) in arms.iter().enumerate() {
        if rows.len() < params.folds {
            return Err(AdjustError::TooFewRows {
                arm: arm as u8,
                needed: params.folds,
                got: rows.len(),
            });
        }
        let x_arm = design.select_rows(rows.iter());
        let y_arm = DVector::from_fn(rows.len(), |i, _| y_col[(rows[i], 0)]);
        let fit = ridge_cv_fit(&x_arm, &y_arm, params, derive_seed(seed, arm as u64))?;
        predictions[arm] = fit.predict(&design);
    }
    Ok((&predictions[1] - &predictions[0]).mean())
}

/// Effect estimate with models fit and evaluated on the full dataset.
pub fn ate_adjusted(
    data: &Dataset,
    z: &BTreeSet<NodeId>,
    params: &RidgeParams,
    seed: u64,
) -> Result<f64, AdjustError> {
    let all: Vec<usize> = (0..data.n()).collect();
    ate_adjusted_split(data, z, &all, params, seed)
}

fn derive_seed(seed: u64, tag: u64) -> u64 {
    use rand::RngExt;
    derive_rng(seed, &[TAG_ADJUST, tag]).random()
}
