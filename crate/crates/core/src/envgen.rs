//! Synthetic environment labels from a softmax over one anchor feature.
//!
//! Each row gets one of `num_envs` labels. The score of environment `k` is
//! `w_x[k] * (x - mean(x)) + w_t[k] * (t - mean(t))`, where `x` is a scalar
//! anchor feature and the treatment term is optional. Slopes fall on a
//! ladder from positive to negative across environments, so low labels
//! favor rows with large anchor values and high labels the opposite.

use nalgebra::DMatrix;
use rand::RngExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{NodeId, NodeRole};
use crate::rng::derive_rng;
use crate::scm::dataset::{DataError, Dataset, EnvColumn};

const TAG_ENV: u64 = 0x65_6e76_5f67_656e;

/// Errors raised while assigning environments.
#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("need at least two environments, got {0}")]
    TooFewEnvironments(u32),
    #[error("anchor `{0}` has width {1}, need a scalar column")]
    AnchorNotScalar(NodeId, usize),
    #[error("anchor `{0}` has role `{1}`, expected a feature")]
    AnchorNotFeature(NodeId, NodeRole),
}

/// A per-row environment assignment plus the softmax that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvAssignment {
    pub labels: Vec<u32>,
    pub num_envs: u32,
    pub anchor: NodeId,
    pub include_treatment: bool,
    /// Slope on the centered anchor, one entry per environment.
    pub anchor_weights: Vec<f64>,
    /// Slope on the centered treatment, all zero when it is excluded.
    pub treatment_weights: Vec<f64>,
    pub anchor_mean: f64,
    pub treatment_mean: f64,
    /// Fraction of rows assigned to each environment.
    pub fractions: Vec<f64>,
}

impl EnvAssignment {
    /// Labels and level count, ready to attach to a dataset.
    pub fn column(&self) -> EnvColumn {
        EnvColumn {
            labels: self.labels.clone(),
            num_envs: self.num_envs,
        }
    }

    /// Softmax probabilities of this assignment on a dataset, one row per
    /// sample and one column per environment.
    pub fn probabilities(&self, data: &Dataset) -> Result<DMatrix<f64>, EnvError> {
        let anchor = anchor_values(data, &self.anchor)?;
        let treatment = if self.include_treatment {
            data.treatment_values()?
        } else {
            vec![0.0; data.n()]
        };
        let e = self.num_envs as usize;
        let mut out = DMatrix::zeros(data.n(), e);
        for i in 0..data.n() {
            let scores: Vec<f64> = (0..e)
                .map(|k| {
                    self.anchor_weights[k] * (anchor[i] - self.anchor_mean)
                        + self.treatment_weights[k] * (treatment[i] - self.treatment_mean)
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exp.iter().sum();
            for k in 0..e {
                out[(i, k)] = exp[k] / total;
            }
        }
        Ok(out)
    }
}

fn anchor_values(data: &Dataset, anchor: &NodeId) -> Result<Vec<f64>, EnvError> {
    let role = data.role(anchor)?;
    if role != NodeRole::Feature {
        return Err(EnvError::AnchorNotFeature(anchor.clone(), role));
    }
    let column = data.column(anchor)?;
    if column.ncols() != 1 {
        return Err(EnvError::AnchorNotScalar(anchor.clone(), column.ncols()));
    }
    Ok(column.column(0).iter().copied().collect())
}

/// Draws slope ladders and assigns one environment label per row.
///
/// Slope `k` is `u_k * (1 - 2k / (num_envs - 1))` with `u_k` uniform on
/// `[1, 2)`, so the middle environment of an odd ladder has slope zero.
pub fn assign_environments(
    data: &Dataset,
    anchor: &NodeId,
    num_envs: u32,
    include_treatment: bool,
    seed: u64,
) -> Result<EnvAssignment, EnvError> {
    if num_envs < 2 {
        return Err(EnvError::TooFewEnvironments(num_envs));
    }
    let anchor_column = anchor_values(data, anchor)?;
    let treatment = if include_treatment {
        data.treatment_values()?
    } else {
        vec![0.0; data.n()]
    };
    let n = data.n();
    let anchor_mean = anchor_column.iter().sum::<f64>() / n as f64;
    let treatment_mean = treatment.iter().sum::<f64>() / n as f64;

    let e = num_envs as usize;
    let mut rng = derive_rng(seed, &[TAG_ENV]);
    let ladder = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<f64> {
        (0..e)
            .map(|k| {
                let scale = 1.0 - 2.0 * k as f64 / (e as f64 - 1.0);
                rng.random_range(1.0..2.0) * scale
            })
            .collect()
    };
    let anchor_weights = ladder(&mut rng);
    let treatment_weights = if include_treatment {
        ladder(&mut rng)
    } else {
        vec![0.0; e]
    };

    let mut assignment = EnvAssignment {
        labels: Vec::with_capacity(n),
        num_envs,
        anchor: anchor.clone(),
        include_treatment,
        anchor_weights,
        treatment_weights,
        anchor_mean,
        treatment_mean,
        fractions: vec![0.0; e],
    };
    let probabilities = assignment.probabilities(data)?;
    for i in 0..n {
        let draw = rng.random_range(0.0..1.0);
        let mut cumulative = 0.0;
        let mut label = e - 1;
        for k in 0..e {
            cumulative += probabilities[(i, k)];
            if draw < cumulative {
                label = k;
                break;
            }
        }
        assignment.labels.push(label as u32);
        assignment.fractions[label] += 1.0;
    }
    for fraction in &mut assignment.fractions {
        *fraction /= n as f64;
    }
    Ok(assignment)
}
