//! Invariant risk minimization within one treatment arm.
//!
//! Rows of the chosen arm are grouped by environment label and a linear
//! representation `phi` is trained to minimize the pooled squared-error
//! risk plus a penalty on the per-environment risk gradient with respect
//! to a frozen unit classifier: sum_e risk_e(phi) + lambda * sum_e
//! (d/dw risk_e(w * phi) at w=1)^2. Columns whose fitted coefficient lands
//! in the low cluster of |phi| are pruned; the remaining features form the
//! adjustment set for effect estimation.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::RngExt;

use crate::adjust::{ate_adjusted_split, AdjustError, RidgeParams};
use crate::citest::standardize_columns;
use crate::envgen::EnvAssignment;
use crate::graph::{NodeId, NodeRole};
use crate::rng::derive_rng;
use crate::scm::dataset::{ColumnRef, DataError, Dataset};
use crate::search::train_split;

/// Seed tag for the adjusted-estimation stage, ASCII "irm_est".
const TAG_IRM_EST: u64 = 0x69_726d_5f65_7374;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Penalty values are recorded every this many iterations.
const TRAJECTORY_STRIDE: usize = 100;
/// Cluster means closer than this count as one cluster; all columns stay.
const CLUSTER_TIE_EPS: f64 = 1e-9;

/// Errors raised during IRM fitting and selection.
#[derive(Debug, Error)]
pub enum IrmError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Adjust(#[from] AdjustError),
    #[error("treatment arm {arm} has no rows to fit on")]
    EmptyArm { arm: u8 },
    #[error("need at least two environments in the arm, got {got}")]
    TooFewEnvironments { got: usize },
    #[error("need at least two candidate columns, got {got}")]
    TooFewColumns { got: usize },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("optimization produced a non-finite coefficient")]
    NonFinite,
}

/// Hyperparameter grid and training schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrmHyper {
    pub learning_rates: Vec<f64>,
    /// Penalty weights, one grid axis.
    pub lambdas: Vec<f64>,
    pub iterations: usize,
    /// The learning rate halves after every this many iterations.
    pub decay_every: usize,
}

impl Default for IrmHyper {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.01, 0.001],
            lambdas: vec![0.1, 0.001],
            iterations: 15_000,
            decay_every: 5_000,
        }
    }
}

impl IrmHyper {
    fn validate(&self) -> Result<(), IrmError> {
        if self.learning_rates.is_empty() || self.lambdas.is_empty() {
            return Err(IrmError::BadParameter("empty hyperparameter grid".into()));
        }
        let bad_rate = self.learning_rates.iter().any(|r| !(*r > 0.0 && r.is_finite()));
        let bad_lambda = self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite()));
        if bad_rate || bad_lambda {
            return Err(IrmError::BadParameter(
                "learning rates must be > 0 and penalty weights >= 0".into(),
            ));
        }
        if self.iterations == 0 || self.decay_every == 0 {
            return Err(IrmError::BadParameter(
                "iterations and decay interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The IRMv1 objective over per-environment samples.
///
/// [`IrmObjective::value`] evaluates the loss directly on the raw samples
/// while [`IrmObjective::gradient`] uses precomputed second moments; the two
/// routes are algebraically equal, so finite differences of the former
/// validate the latter.
pub struct IrmObjective {
    x: Vec<DMatrix<f64>>,
    y: Vec<DVector<f64>>,
    /// Per environment: x' x / n, x' y / n, y' y / n.
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    q: Vec<f64>,
    pub lambda: f64,
}

impl IrmObjective {
    pub fn new(
        x: Vec<DMatrix<f64>>,
        y: Vec<DVector<f64>>,
        lambda: f64,
    ) -> Result<Self, IrmError> {
        if x.is_empty() || x.len() != y.len() {
            return Err(IrmError::BadParameter(format!(
                "{} design blocks for {} outcome blocks",
                x.len(),
                y.len()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(IrmError::BadParameter(format!(
                "penalty weight {lambda} must be finite and >= 0"
            )));
        }
        let p = x[0].ncols();
        for (xe, ye) in x.iter().zip(&y) {
            if xe.nrows() == 0 || xe.nrows() != ye.nrows() || xe.ncols() != p {
                return Err(IrmError::BadParameter(
                    "environment blocks must be non-empty with matching shapes".into(),
                ));
            }
            if xe.iter().chain(ye.iter()).any(|v| !v.is_finite()) {
                return Err(IrmError::BadParameter("non-finite sample".into()));
            }
        }
        let mut a = Vec::with_capacity(x.len());
        let mut b = Vec::with_capacity(x.len());
        let mut q = Vec::with_capacity(x.len());
        for (xe, ye) in x.iter().zip(&y) {
            let n = xe.nrows() as f64;
            a.push(xe.transpose() * xe / n);
            b.push(xe.transpose() * ye / n);
            q.push(ye.dot(ye) / n);
        }
        Ok(Self { x, y, a, b, q, lambda })
    }

    pub fn num_envs(&self) -> usize {
        self.x.len()
    }

    pub fn num_columns(&self) -> usize {
        self.x[0].ncols()
    }

    /// Loss evaluated on the raw samples.
    pub fn value(&self, phi: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for (xe, ye) in self.x.iter().zip(&self.y) {
            let n = xe.nrows() as f64;
            let fitted = xe * phi;
            let residual = &fitted - ye;
            let risk = residual.norm_squared() / n;
            let dw = 2.0 * residual.dot(&fitted) / n;
            total += risk + self.lambda * dw * dw;
        }
        total
    }

    /// Squared-error risk of `phi` on environment `env`, from the moments.
    pub fn risk(&self, env: usize, phi: &DVector<f64>) -> f64 {
        phi.dot(&(&self.a[env] * phi)) - 2.0 * phi.dot(&self.b[env]) + self.q[env]
    }

    /// Penalty term: squared risk derivative in the frozen classifier,
    /// summed over environments.
    pub fn penalty(&self, phi: &DVector<f64>) -> f64 {
        (0..self.x.len())
            .map(|e| {
                let u = &self.a[e] * phi - &self.b[e];
                let dw = 2.0 * phi.dot(&u);
                dw * dw
            })
            .sum()
    }

    /// Closed-form gradient of [`IrmObjective::value`].
    pub fn gradient(&self, phi: &DVector<f64>) -> DVector<f64> {
        let mut grad = DVector::zeros(phi.nrows());
        for e in 0..self.x.len() {
            // u = A phi - b; risk gradient 2u; penalty gradient
            // 4 dw (2 A phi - b) with dw = 2 phi . u.
            let u = &self.a[e] * phi - &self.b[e];
            let dw = 2.0 * phi.dot(&u);
            grad += 2.0 * &u + 4.0 * self.lambda * dw * (2.0 * &u + &self.b[e]);
        }
        grad
    }
}

/// Adam with a step-halving schedule from a zero start; returns the iterate
/// and the penalty recorded every [`TRAJECTORY_STRIDE`] iterations.
fn adam_minimize(
    objective: &IrmObjective,
    rate: f64,
    iterations: usize,
    decay_every: usize,
) -> Result<(DVector<f64>, Vec<f64>), IrmError> {
    let p = objective.num_columns();
    let mut phi = DVector::zeros(p);
    let mut m: DVector<f64> = DVector::zeros(p);
    let mut v: DVector<f64> = DVector::zeros(p);
    let mut trajectory = Vec::with_capacity(iterations / TRAJECTORY_STRIDE);
    for iter in 0..iterations {
        let lr = rate * 0.5f64.powi((iter / decay_every) as i32);
        let grad = objective.gradient(&phi);
        let t = (iter + 1) as i32;
        m = ADAM_BETA1 * &m + (1.0 - ADAM_BETA1) * &grad;
        v.zip_apply(&grad, |vi, gi| *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi);
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..p {
            phi[i] -= lr * (m[i] / bias1) / ((v[i] / bias2).sqrt() + ADAM_EPS);
        }
        if (iter + 1) % TRAJECTORY_STRIDE == 0 {
            trajectory.push(objective.penalty(&phi));
        }
    }
    if phi.iter().any(|c| !c.is_finite()) {
        return Err(IrmError::NonFinite);
    }
    Ok((phi, trajectory))
}

/// A fitted linear representation with the grid choice that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrmFit {
    /// Scalar design columns, aligned with `phi`.
    pub columns: Vec<ColumnRef>,
    pub phi: Vec<f64>,
    pub learning_rate: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub decay_every: usize,
    pub train_envs: Vec<u32>,
    pub validation_env: u32,
    /// Squared-error risk on the held-out environment.
    pub validation_risk: f64,
    /// Penalty every [`TRAJECTORY_STRIDE`] iterations of the winning fit.
    pub penalty_trajectory: Vec<f64>,
}

/// Fits the linear IRMv1 representation on one treatment arm.
///
/// Columns are standardized and the outcome centered over the fitted rows.
/// Every grid cell (held-out environment rotation x penalty weight x
/// learning rate) trains on the remaining environments; the fit with the
/// smallest held-out risk wins. No randomness is involved: the start is
/// zero and the schedule fixed, so refits are bit-identical.
pub fn irmv1_fit_linear(
    data: &Dataset,
    rows: &[usize],
    labels: &[u32],
    candidates: &[NodeId],
    hyper: &IrmHyper,
) -> Result<IrmFit, IrmError> {
    hyper.validate()?;
    if labels.len() != data.n() {
        return Err(IrmError::BadParameter(format!(
            "{} environment labels for {} rows",
            labels.len(),
            data.n()
        )));
    }
    if rows.is_empty() {
        return Err(IrmError::BadParameter("no rows to fit on".into()));
    }
    let (design_all, columns) = data.design_matrix(candidates)?;
    if columns.len() < 2 {
        return Err(IrmError::TooFewColumns { got: columns.len() });
    }
    let y_id = data.outcome_id()?.clone();
    let y_all = data.column(&y_id)?;
    if y_all.ncols() != 1 {
        return Err(IrmError::BadParameter(format!(
            "outcome has {} components, need a scalar",
            y_all.ncols()
        )));
    }

    let design = standardize_columns(&design_all.select_rows(rows.iter()));
    let mut y = DVector::from_fn(rows.len(), |i, _| y_all[(rows[i], 0)]);
    let y_mean = y.mean();
    y.add_scalar_mut(-y_mean);

    let mut env_rows: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, &row) in rows.iter().enumerate() {
        env_rows.entry(labels[row]).or_default().push(i);
    }
    if env_rows.len() < 2 {
        return Err(IrmError::TooFewEnvironments { got: env_rows.len() });
    }
    let envs: Vec<u32> = env_rows.keys().copied().collect();
    let x_blocks: Vec<DMatrix<f64>> = envs
        .iter()
        .map(|e| design.select_rows(env_rows[e].iter()))
        .collect();
    let y_blocks: Vec<DVector<f64>> = envs
        .iter()
        .map(|e| y.select_rows(env_rows[e].iter()))
        .collect();

    let mut best: Option<IrmFit> = None;
    for (vi, &validation_env) in envs.iter().enumerate() {
        let train_envs: Vec<u32> = envs.iter().copied().filter(|e| *e != validation_env).collect();
        let train_x: Vec<DMatrix<f64>> = (0..envs.len())
            .filter(|i| *i != vi)
            .map(|i| x_blocks[i].clone())
            .collect();
        let train_y: Vec<DVector<f64>> = (0..envs.len())
            .filter(|i| *i != vi)
            .map(|i| y_blocks[i].clone())
            .collect();
        let held_out = IrmObjective::new(
            vec![x_blocks[vi].clone()],
            vec![y_blocks[vi].clone()],
            0.0,
        )?;
        for &lambda in &hyper.lambdas {
            let objective = IrmObjective::new(train_x.clone(), train_y.clone(), lambda)?;
            for &rate in &hyper.learning_rates {
                let (phi, trajectory) =
                    adam_minimize(&objective, rate, hyper.iterations, hyper.decay_every)?;
                let validation_risk = held_out.risk(0, &phi);
                if best.as_ref().is_none_or(|b| validation_risk < b.validation_risk) {
                    best = Some(IrmFit {
                        columns: columns.clone(),
                        phi: phi.iter().copied().collect(),
                        learning_rate: rate,
                        lambda,
                        iterations: hyper.iterations,
                        decay_every: hyper.decay_every,
                        train_envs: train_envs.clone(),
                        validation_env,
                        validation_risk,
                        penalty_trajectory: trajectory,
                    });
                }
            }
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Indices of the higher-magnitude cluster of an exact two-means split.
///
/// Both clusters of an optimal one-dimensional two-means partition are
/// contiguous in sorted order, so the split is found by scanning every
/// sorted cut with prefix sums. If the two cluster means are closer than
/// [`CLUSTER_TIE_EPS`] the values form one cluster and every index returns.
pub fn kmeans2_high_cluster(values: &[f64]) -> Result<Vec<usize>, IrmError> {
    if values.len() < 2 {
        return Err(IrmError::TooFewColumns { got: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(IrmError::NonFinite);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let n = sorted.len();
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for (i, v) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    let sse = |from: usize, to: usize| {
        let len = (to - from) as f64;
        let sum = prefix[to] - prefix[from];
        (prefix_sq[to] - prefix_sq[from]) - sum * sum / len
    };
    let mut best_split = 1;
    let mut best_sse = f64::INFINITY;
    for split in 1..n {
        let total = sse(0, split) + sse(split, n);
        if total < best_sse {
            best_sse = total;
            best_split = split;
        }
    }
    let low_mean = prefix[best_split] / best_split as f64;
    let high_mean = (prefix[n] - prefix[best_split]) / (n - best_split) as f64;
    if (high_mean - low_mean).abs() < CLUSTER_TIE_EPS {
        return Ok((0..n).collect());
    }
    let mut selected: Vec<usize> = order[best_split..].to_vec();
    selected.sort_unstable();
    Ok(selected)
}

/// Features whose coefficients fall in the higher cluster of `|phi|`.
///
/// A multi-column feature is selected when any of its scalar columns is.
pub fn select_cluster_subset(fit: &IrmFit) -> Result<BTreeSet<NodeId>, IrmError> {
    let magnitudes: Vec<f64> = fit.phi.iter().map(|c| c.abs()).collect();
    let high = kmeans2_high_cluster(&magnitudes)?;
    Ok(high.into_iter().map(|i| fit.columns[i].node.clone()).collect())
}

/// Which treatment arm the representation is fit on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentArm {
    Control,
    Treated,
}

impl TreatmentArm {
    pub fn value(self) -> f64 {
        match self {
            TreatmentArm::Control => 0.0,
            TreatmentArm::Treated => 1.0,
        }
    }
}

/// Settings for the IRM-based effect estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrmParams {
    pub hyper: IrmHyper,
    pub n_runs: usize,
    pub train_fraction: f64,
    pub ridge: RidgeParams,
}

impl Default for IrmParams {
    fn default() -> Self {
        Self {
            hyper: IrmHyper::default(),
            n_runs: 10,
            train_fraction: 0.8,
            ridge: RidgeParams::default(),
        }
    }
}

/// One run of fit, selection, and adjusted estimation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrmRunReport {
    pub fit: IrmFit,
    pub selected: BTreeSet<NodeId>,
    pub ate: f64,
}

/// Result of the IRM-based effect estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrmReport {
    pub anchor: NodeId,
    pub arm: TreatmentArm,
    pub n_runs: usize,
    pub seed: u64,
    pub runs: Vec<IrmRunReport>,
    /// Mean estimate over runs.
    pub ate: f64,
}

/// Effect estimation through IRM-selected adjustment sets.
///
/// Per run: a fresh train split; an IRM fit on the training rows of the
/// chosen arm; feature selection by coefficient clustering; and an adjusted
/// estimate for the selected set, fit on the training rows of both arms and
/// evaluated on every row. The final estimate averages the runs.
pub fn ate_irm(
    data: &Dataset,
    x_t: &NodeId,
    env: &EnvAssignment,
    arm: TreatmentArm,
    params: &IrmParams,
    seed: u64,
) -> Result<IrmReport, IrmError> {
    if params.n_runs == 0 {
        return Err(IrmError::BadParameter("need at least one run".into()));
    }
    if !(params.train_fraction > 0.0 && params.train_fraction < 1.0) {
        return Err(IrmError::BadParameter(format!(
            "train fraction {} outside (0, 1)",
            params.train_fraction
        )));
    }
    if data.role(x_t)? != NodeRole::Feature {
        return Err(IrmError::BadParameter(format!(
            "anchor `{x_t}` is not a feature column"
        )));
    }
    if env.anchor != *x_t || env.labels.len() != data.n() {
        return Err(IrmError::BadParameter(format!(
            "environment assignment does not match anchor `{x_t}` and the dataset"
        )));
    }
    let candidates: Vec<NodeId> = data
        .feature_ids()
        .into_iter()
        .filter(|id| id != x_t)
        .collect();
    let t = data.treatment_values()?;

    let mut runs = Vec::with_capacity(params.n_runs);
    for run in 0..params.n_runs {
        let train = train_split(data.n(), params.train_fraction, seed, run as u64);
        let arm_rows: Vec<usize> = train
            .iter()
            .copied()
            .filter(|&i| t[i] == arm.value())
            .collect();
        if arm_rows.is_empty() {
            return Err(IrmError::EmptyArm {
                arm: arm.value() as u8,
            });
        }
        let fit = irmv1_fit_linear(data, &arm_rows, &env.labels, &candidates, &params.hyper)?;
        let selected = select_cluster_subset(&fit)?;
        let est_seed: u64 = derive_rng(seed, &[TAG_IRM_EST, run as u64]).random();
        let ate = ate_adjusted_split(data, &selected, &train, &params.ridge, est_seed)?;
        runs.push(IrmRunReport { fit, selected, ate });
    }
    let ate = runs.iter().map(|r| r.ate).sum::<f64>() / runs.len() as f64;
    Ok(IrmReport {
        anchor: x_t.clone(),
        arm,
        n_runs: params.n_runs,
        seed,
        runs,
        ate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen::assign_environments;
    use crate::graph::node_id;
    use crate::rng::derive_rng;
    use crate::scm::gen_toy_scm;
    use rand::RngExt;
    use rand_distr::{Distribution, Normal};

    fn random_instance(
        envs: usize,
        rows: usize,
        cols: usize,
        lambda: f64,
        seed: u64,
    ) -> (IrmObjective, DVector<f64>) {
        let mut rng = derive_rng(seed, &[0x69_726d_5f74_7374]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<DMatrix<f64>> = (0..envs)
            .map(|_| DMatrix::from_fn(rows, cols, |_, _| normal.sample(&mut rng)))
            .collect();
        let y: Vec<DVector<f64>> = (0..envs)
            .map(|_| DVector::from_fn(rows, |_, _| normal.sample(&mut rng)))
            .collect();
        let phi = DVector::from_fn(cols, |_, _| normal.sample(&mut rng));
        (IrmObjective::new(x, y, lambda).unwrap(), phi)
    }

    #[test]
    fn raw_and_moment_loss_routes_agree() {
        for seed in 0..5 {
            let (objective, phi) = random_instance(3, 60, 4, 0.3, seed);
            let via_moments: f64 = (0..objective.num_envs())
                .map(|e| objective.risk(e, &phi))
                .sum::<f64>()
                + objective.lambda * objective.penalty(&phi);
            assert!((objective.value(&phi) - via_moments).abs() < 1e-9);
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        for seed in 0..5 {
            let (objective, phi) = random_instance(3, 120, 6, 0.25, seed);
            let grad = objective.gradient(&phi);
            for i in 0..phi.nrows() {
                let h = 1e-5;
                let mut hi = phi.clone();
                hi[i] += h;
                let mut lo = phi.clone();
                lo[i] -= h;
                let fd = (objective.value(&hi) - objective.value(&lo)) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / grad[i].abs().max(1.0);
                assert!(rel < 1e-5, "seed {seed} column {i}: fd {fd} analytic {}", grad[i]);
            }
        }
    }

    #[test]
    fn zero_outcome_keeps_phi_and_penalty_at_zero() {
        let mut rng = derive_rng(9, &[0]);
        let x: Vec<DMatrix<f64>> =
            (0..3).map(|_| DMatrix::from_fn(40, 3, |_, _| rng.random::<f64>())).collect();
        let y = vec![DVector::zeros(40); 3];
        let objective = IrmObjective::new(x, y, 0.1).unwrap();
        let (phi, trajectory) = adam_minimize(&objective, 0.01, 500, 5_000).unwrap();
        assert!(phi.iter().all(|c| *c == 0.0));
        assert!(trajectory.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn invariant_generation_drives_the_penalty_to_zero() {
        // Identical noiseless mechanism in every environment: the optimum
        // has zero risk and zero penalty, and the optimizer reaches it.
        let mut rng = derive_rng(4, &[1]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let beta = DVector::from_row_slice(&[1.2, -0.7, 0.4]);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for shift in [-1.0, 0.0, 1.5] {
            let xe = DMatrix::from_fn(200, 3, |_, _| normal.sample(&mut rng) + shift);
            y.push(&xe * &beta);
            x.push(xe);
        }
        let objective = IrmObjective::new(x, y, 0.1).unwrap();
        let (phi, trajectory) = adam_minimize(&objective, 0.01, 15_000, 5_000).unwrap();
        assert!(objective.penalty(&phi) <= 1e-8, "penalty {}", objective.penalty(&phi));
        assert!(trajectory.iter().all(|p| *p >= 0.0));
        assert_eq!(trajectory.len(), 150);
    }

    #[test]
    fn high_cluster_selection_is_deterministic_and_scale_free() {
        assert_eq!(kmeans2_high_cluster(&[3.1, 2.9, 0.05, 0.01]).unwrap(), vec![0, 1]);
        assert_eq!(kmeans2_high_cluster(&[0.05, 3.1, 0.01, 2.9]).unwrap(), vec![1, 3]);
        // One tight cluster keeps everything.
        assert_eq!(kmeans2_high_cluster(&[0.7, 0.7, 0.7]).unwrap(), vec![0, 1, 2]);
        let mut rng = derive_rng(3, &[7]);
        for _ in 0..20 {
            let values: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 4.0).collect();
            let base = kmeans2_high_cluster(&values).unwrap();
            for c in [0.5, 3.7] {
                let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
                assert_eq!(kmeans2_high_cluster(&scaled).unwrap(), base);
            }
        }
        assert!(matches!(
            kmeans2_high_cluster(&[1.0]),
            Err(IrmError::TooFewColumns { got: 1 })
        ));
    }

    #[test]
    fn exact_split_matches_brute_force_partitions() {
        // Independent route: minimum within-cluster squared error over every
        // bipartition, contiguous or not.
        let mut rng = derive_rng(11, &[2]);
        let sse = |vals: &[f64]| {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        };
        for _ in 0..20 {
            let values: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 3.0).collect();
            let mut best = f64::INFINITY;
            for mask in 1u32..(1 << 6) - 1 {
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for (i, v) in values.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        a.push(*v);
                    } else {
                        b.push(*v);
                    }
                }
                best = best.min(sse(&a) + sse(&b));
            }
            let high = kmeans2_high_cluster(&values).unwrap();
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (i, v) in values.iter().enumerate() {
                if high.contains(&i) {
                    a.push(*v);
                } else {
                    b.push(*v);
                }
            }
            assert!((sse(&a) + sse(&b) - best).abs() < 1e-9);
        }
    }

    #[test]
    fn grouped_feature_is_selected_when_any_column_is() {
        let fit = IrmFit {
            columns: vec![
                ColumnRef { node: node_id("x2"), component: 0 },
                ColumnRef { node: node_id("x2"), component: 1 },
                ColumnRef { node: node_id("x3"), component: 0 },
            ],
            phi: vec![2.0, 0.01, 0.02],
            learning_rate: 0.01,
            lambda: 0.1,
            iterations: 1,
            decay_every: 1,
            train_envs: vec![0, 1],
            validation_env: 2,
            validation_risk: 0.0,
            penalty_trajectory: vec![],
        };
        let selected = select_cluster_subset(&fit).unwrap();
        assert_eq!(selected, [node_id("x2")].into_iter().collect());
    }

    #[test]
    fn treated_arm_coefficients_concentrate_on_the_valid_adjuster() {
        let scm = gen_toy_scm(1, 3).unwrap();
        let data = scm.simulate(12_000, 2).unwrap();
        let env = assign_environments(&data, &node_id("x1"), 3, false, 5).unwrap();
        let (treated, _) = data.arm_rows().unwrap();
        let fit = irmv1_fit_linear(
            &data,
            &treated,
            &env.labels,
            &[node_id("x2"), node_id("x3")],
            &IrmHyper::default(),
        )
        .unwrap();
        let x2 = fit.phi[0].abs();
        let x3 = fit.phi[1].abs();
        assert!(x2 > 2.0 * x3, "|phi| = ({x2}, {x3})");
        let selected = select_cluster_subset(&fit).unwrap();
        assert_eq!(selected, [node_id("x2")].into_iter().collect());
        assert!(fit.penalty_trajectory.iter().all(|p| *p >= 0.0 && p.is_finite()));
        assert_eq!(fit.train_envs.len(), 2);
        assert!(!fit.train_envs.contains(&fit.validation_env));
    }

    #[test]
    fn irm_estimate_recovers_the_toy_effect() {
        let scm = gen_toy_scm(1, 21).unwrap();
        let data = scm.simulate(6_000, 4).unwrap();
        let env = assign_environments(&data, &node_id("x1"), 3, false, 6).unwrap();
        let params = IrmParams {
            n_runs: 2,
            ..IrmParams::default()
        };
        let report = ate_irm(&data, &node_id("x1"), &env, TreatmentArm::Treated, &params, 1).unwrap();
        let truth = scm.true_ate().unwrap();
        assert!((report.ate - truth).abs() < 0.1, "ate {} truth {truth}", report.ate);
        assert_eq!(report.runs.len(), 2);
        for run in &report.runs {
            assert_eq!(run.selected, [node_id("x2")].into_iter().collect());
        }
        assert_eq!(
            report,
            ate_irm(&data, &node_id("x1"), &env, TreatmentArm::Treated, &params, 1).unwrap()
        );
    }

    #[test]
    fn degenerate_irm_inputs_error() {
        let scm = gen_toy_scm(1, 3).unwrap();
        let data = scm.simulate(300, 2).unwrap();
        let env = assign_environments(&data, &node_id("x1"), 3, false, 5).unwrap();
        // All labels equal: one environment.
        let flat = vec![0u32; data.n()];
        let err = irmv1_fit_linear(
            &data,
            &(0..data.n()).collect::<Vec<_>>(),
            &flat,
            &[node_id("x2"), node_id("x3")],
            &IrmHyper::default(),
        )
        .unwrap_err();
        assert!(matches!(err, IrmError::TooFewEnvironments { got: 1 }));

        let err = irmv1_fit_linear(
            &data,
            &(0..data.n()).collect::<Vec<_>>(),
            &env.labels,
            &[node_id("x2")],
            &IrmHyper::default(),
        )
        .unwrap_err();
        assert!(matches!(err, IrmError::TooFewColumns { got: 1 }));

        let interventional = scm.simulate_do(300, 2, 1.0).unwrap();
        let env_do = assign_environments(&interventional, &node_id("x1"), 3, false, 5).unwrap();
        let err = ate_irm(
            &interventional,
            &node_id("x1"),
            &env_do,
            TreatmentArm::Control,
            &IrmParams::default(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, IrmError::EmptyArm { arm: 0 }));
    }
}
