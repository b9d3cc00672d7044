//! Linear structural causal models with explicit hidden nodes.
//!
//! A [`LinearScm`] assigns every node of an acyclic directed graph a linear
//! mechanism with independent noise, except the treatment, which is a
//! Bernoulli draw through a logistic link. Simulation fills nodes in
//! topological order from one dedicated random stream per node, so clamping
//! the treatment leaves the noise of every other node untouched.

pub mod dataset;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::graph::{GraphError, NodeId, SemiMarkovianGraph};
use crate::rng::derive_rng;
use dataset::{DataError, Dataset};

const TAG_WEIGHTS: u64 = 0x7363_6d5f_7767_7473;
const TAG_SIMULATE: u64 = 0x73_636d_5f73_696d;
const TAG_PILOT: u64 = 0x73_636d_5f70_696c;
const TAG_ARM: u64 = 0x73_636d_5f61_726d;

/// Smallest admissible fraction for either treatment arm.
pub const MIN_ARM_FRACTION: f64 = 0.01;
/// Additive noise level of generated non-root mechanisms.
pub const NOISE_STD: f64 = 0.1;
/// Mean and variance of generated root mechanisms.
pub const ROOT_MEAN: f64 = 1.5;
pub const ROOT_VAR: f64 = 1.0 / 12.0;

const PILOT_ROWS: usize = 2_000;
const MAX_WEIGHT_ATTEMPTS: usize = 100;

/// Errors raised while building or running a structural model.
#[derive(Debug, Error)]
pub enum ScmError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("graph still contains bi-directed edges")]
    BidirectedPresent,
    #[error("block width must be at least one")]
    InvalidWidth,
    #[error("no dimension recorded for node `{0}`")]
    MissingDim(NodeId),
    #[error("node `{0}` has dimension zero")]
    ZeroDim(NodeId),
    #[error("no mechanism recorded for node `{0}`")]
    MissingMechanism(NodeId),
    #[error("dimension or mechanism refers to unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("invalid noise specification on node `{0}`")]
    InvalidNoise(NodeId),
    #[error("logistic node `{0}` must have dimension one")]
    LogisticDim(NodeId),
    #[error("missing weight block for edge `{1}` -> `{0}`")]
    MissingWeight(NodeId, NodeId),
    #[error("weight block `{1}` -> `{0}` is {2}x{3}, expected {4}x{5}")]
    WeightShape(NodeId, NodeId, usize, usize, usize, usize),
    #[error("weight block `{1}` -> `{0}` does not match a directed edge")]
    UnknownWeight(NodeId, NodeId),
    #[error("no analytic mean available for node `{0}`")]
    NoAnalyticMean(NodeId),
    #[error("simulation needs at least one row")]
    EmptySimulation,
    #[error("one treatment arm stayed below fraction {min_fraction} after {attempts} weight draws")]
    Positivity { attempts: usize, min_fraction: f64 },
}

/// Independent noise attached to a mechanism, sampled per component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    Uniform { low: f64, high: f64 },
    Gaussian { mean: f64, std_dev: f64 },
}

impl NoiseSpec {
    fn is_valid(&self) -> bool {
        match *self {
            NoiseSpec::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            NoiseSpec::Gaussian { mean, std_dev } => {
                mean.is_finite() && std_dev.is_finite() && std_dev >= 0.0
            }
        }
    }

    fn mean(&self) -> f64 {
        match *self {
            NoiseSpec::Uniform { low, high } => 0.5 * (low + high),
            NoiseSpec::Gaussian { mean, .. } => mean,
        }
    }

    /// Samples an `n` by `k` matrix row by row.
    fn sample_matrix(&self, n: usize, k: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, k);
        match *self {
            NoiseSpec::Uniform { low, high } => {
                for i in 0..n {
                    for j in 0..k {
                        out[(i, j)] = rng.random_range(low..high);
                    }
                }
            }
            NoiseSpec::Gaussian { mean, std_dev } => {
                let normal = Normal::new(mean, std_dev).expect("validated noise");
                for i in 0..n {
                    for j in 0..k {
                        out[(i, j)] = normal.sample(rng);
                    }
                }
            }
        }
        out
    }
}

/// Structural assignment for one node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mechanism {
    /// Weighted sum of the parents plus independent noise.
    Linear { noise: NoiseSpec },
    /// Bernoulli draw with probability `sigmoid(weights * parents + intercept)`.
    Logistic { intercept: f64 },
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Linear SCM over an acyclic graph whose confounders are explicit nodes.
///
/// Weight blocks are keyed `(child, parent)` and have shape
/// `dim(child) x dim(parent)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearScm {
    graph: SemiMarkovianGraph,
    dims: BTreeMap<NodeId, usize>,
    mechanisms: BTreeMap<NodeId, Mechanism>,
    weights: BTreeMap<(NodeId, NodeId), DMatrix<f64>>,
    topo: Vec<NodeId>,
}

impl LinearScm {
    pub fn new(
        graph: SemiMarkovianGraph,
        dims: BTreeMap<NodeId, usize>,
        mechanisms: BTreeMap<NodeId, Mechanism>,
        weights: BTreeMap<(NodeId, NodeId), DMatrix<f64>>,
    ) -> Result<Self, ScmError> {
        if graph.bidirected_edges().next().is_some() {
            return Err(ScmError::BidirectedPresent);
        }
        let topo = graph.topological_order()?;
        for id in dims.keys().chain(mechanisms.keys()) {
            if !graph.contains(id) {
                return Err(ScmError::UnknownNode(id.clone()));
            }
        }
        for node in graph.nodes() {
            let dim = *dims
                .get(&node.id)
                .ok_or_else(|| ScmError::MissingDim(node.id.clone()))?;
            if dim == 0 {
                return Err(ScmError::ZeroDim(node.id.clone()));
            }
            match mechanisms
                .get(&node.id)
                .ok_or_else(|| ScmError::MissingMechanism(node.id.clone()))?
            {
                Mechanism::Linear { noise } => {
                    if !noise.is_valid() {
                        return Err(ScmError::InvalidNoise(node.id.clone()));
                    }
                }
                Mechanism::Logistic { intercept } => {
                    if dim != 1 {
                        return Err(ScmError::LogisticDim(node.id.clone()));
                    }
                    if !intercept.is_finite() {
                        return Err(ScmError::InvalidNoise(node.id.clone()));
                    }
                }
            }
        }
        for (from, to) in graph.directed_edges() {
            let block = weights
                .get(&(to.clone(), from.clone()))
                .ok_or_else(|| ScmError::MissingWeight(to.clone(), from.clone()))?;
            if block.nrows() != dims[to] || block.ncols() != dims[from] {
                return Err(ScmError::WeightShape(
                    to.clone(),
                    from.clone(),
                    block.nrows(),
                    block.ncols(),
                    dims[to],
                    dims[from],
                ));
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(ScmError::InvalidNoise(to.clone()));
            }
        }
        for (child, parent) in weights.keys() {
            if !graph.has_directed_edge(parent, child) {
                return Err(ScmError::UnknownWeight(child.clone(), parent.clone()));
            }
        }
        Ok(Self {
            graph,
            dims,
            mechanisms,
            weights,
            topo,
        })
    }

    pub fn graph(&self) -> &SemiMarkovianGraph {
        &self.graph
    }

    pub fn dim(&self, id: &NodeId) -> Option<usize> {
        self.dims.get(id).copied()
    }

    pub fn mechanism(&self, id: &NodeId) -> Option<&Mechanism> {
        self.mechanisms.get(id)
    }

    pub fn weight(&self, child: &NodeId, parent: &NodeId) -> Option<&DMatrix<f64>> {
        self.weights.get(&(child.clone(), parent.clone()))
    }

    /// Total width of the observed feature columns.
    pub fn feature_width(&self) -> usize {
        self.graph
            .observed_features()
            .iter()
            .map(|id| self.dims[id])
            .sum()
    }

    /// Average treatment effect implied by the linear outcome mechanism.
    pub fn true_ate(&self) -> Result<f64, ScmError> {
        let t = self.graph.treatment()?.clone();
        let y = self.graph.outcome()?.clone();
        let block = self
            .weights
            .get(&(y.clone(), t.clone()))
            .ok_or(ScmError::MissingWeight(y, t))?;
        Ok(block[(0, 0)])
    }

    /// Analytic node means, for every node whose ancestry is purely linear.
    pub fn node_means(&self) -> BTreeMap<NodeId, DVector<f64>> {
        let mut means: BTreeMap<NodeId, DVector<f64>> = BTreeMap::new();
        'nodes: for id in &self.topo {
            let Mechanism::Linear { noise } = &self.mechanisms[id] else {
                continue;
            };
            let mut mu = DVector::from_element(self.dims[id], noise.mean());
            for parent in self.graph.parents(id).expect("node exists") {
                let Some(parent_mu) = means.get(&parent) else {
                    continue 'nodes;
                };
                mu.gemm(
                    1.0,
                    &self.weights[&(id.clone(), parent.clone())],
                    parent_mu,
                    1.0,
                );
            }
            means.insert(id.clone(), mu);
        }
        means
    }

    fn simulate_columns(
        &self,
        n: usize,
        seed: u64,
        clamp: Option<(&NodeId, f64)>,
    ) -> Result<BTreeMap<NodeId, DMatrix<f64>>, ScmError> {
        if n == 0 {
            return Err(ScmError::EmptySimulation);
        }
        let mut values: BTreeMap<NodeId, DMatrix<f64>> = BTreeMap::new();
        for id in &self.topo {
            let dim = self.dims[id];
            if let Some((target, value)) = clamp {
                if target == id {
                    values.insert(id.clone(), DMatrix::from_element(n, dim, value));
                    continue;
                }
            }
            let stream = self.graph.idx_of(id).expect("node exists") as u64;
            let mut rng = derive_rng(seed, &[TAG_SIMULATE, stream]);
            let parents = self.graph.parents(id).expect("node exists");
            let column = match &self.mechanisms[id] {
                Mechanism::Linear { noise } => {
                    let mut acc = noise.sample_matrix(n, dim, &mut rng);
                    for parent in &parents {
                        let block = &self.weights[&(id.clone(), parent.clone())];
                        acc.gemm(1.0, &values[parent], &block.transpose(), 1.0);
                    }
                    acc
                }
                Mechanism::Logistic { intercept } => {
                    let mut logits = DVector::from_element(n, *intercept);
                    for parent in &parents {
                        let block = &self.weights[&(id.clone(), parent.clone())];
                        logits.gemm(1.0, &values[parent], &block.transpose(), 1.0);
                    }
                    let mut col = DMatrix::zeros(n, 1);
                    for i in 0..n {
                        let draw = rng.random_range(0.0..1.0);
                        col[(i, 0)] = f64::from(draw < sigmoid(logits[i]));
                    }
                    col
                }
            };
            values.insert(id.clone(), column);
        }
        Ok(values)
    }

    /// Draws `n` observational samples and keeps the observed columns.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Dataset, ScmError> {
        let values = self.simulate_columns(n, seed, None)?;
        self.dataset_from(values)
    }

    /// Draws `n` samples with the treatment clamped to `arm`.
    pub fn simulate_do(&self, n: usize, seed: u64, arm: f64) -> Result<Dataset, ScmError> {
        let t = self.graph.treatment()?.clone();
        let values = self.simulate_columns(n, seed, Some((&t, arm)))?;
        self.dataset_from(values)
    }

    /// Draws `n` samples and keeps every node, including hidden ones.
    pub fn simulate_full(
        &self,
        n: usize,
        seed: u64,
    ) -> Result<BTreeMap<NodeId, DMatrix<f64>>, ScmError> {
        self.simulate_columns(n, seed, None)
    }

    fn dataset_from(
        &self,
        mut values: BTreeMap<NodeId, DMatrix<f64>>,
    ) -> Result<Dataset, ScmError> {
        let mut columns = BTreeMap::new();
        let mut roles = BTreeMap::new();
        for node in self.graph.nodes() {
            if node.observed {
                columns.insert(node.id.clone(), values.remove(&node.id).expect("simulated"));
                roles.insert(node.id.clone(), node.role);
            }
        }
        Ok(Dataset::new(columns, roles)?)
    }

    /// Monte-Carlo effect estimate from independent draws per arm.
    ///
    /// Returns the estimate and its standard error.
    pub fn ate_monte_carlo(&self, n: usize, seed: u64) -> Result<(f64, f64), ScmError> {
        if n < 2 {
            return Err(ScmError::EmptySimulation);
        }
        let y = self.graph.outcome()?.clone();
        let mut means = [0.0; 2];
        let mut variances = [0.0; 2];
        for arm in 0..2usize {
            let arm_seed = derive_rng(seed, &[TAG_ARM, arm as u64]).random::<u64>();
            let data = self.simulate_do(n, arm_seed, arm as f64)?;
            let col = data.column(&y)?;
            let mean = col.column(0).mean();
            means[arm] = mean;
            variances[arm] =
                col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        }
        let std_error = ((variances[0] + variances[1]) / n as f64).sqrt();
        Ok((means[1] - means[0], std_error))
    }
}

/// Draws a uniform `[1, 2)` weight block for every directed edge, in sorted
/// edge order.
fn draw_weights(
    graph: &SemiMarkovianGraph,
    dims: &BTreeMap<NodeId, usize>,
    rng: &mut ChaCha12Rng,
) -> BTreeMap<(NodeId, NodeId), DMatrix<f64>> {
    let mut weights = BTreeMap::new();
    for (from, to) in graph.directed_edges() {
        let (rows, cols) = (dims[to], dims[from]);
        let mut block = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                block[(i, j)] = rng.random_range(1.0..2.0);
            }
        }
        weights.insert((to.clone(), from.clone()), block);
    }
    weights
}

/// Intercept that zeroes the mean logit of the treatment mechanism under the
/// analytic means of its parents.
fn centered_intercept(scm: &LinearScm, t: &NodeId) -> Result<f64, ScmError> {
    let means = scm.node_means();
    let mut logit_mean = 0.0;
    for parent in scm.graph.parents(t)? {
        let mu = means
            .get(&parent)
            .ok_or_else(|| ScmError::NoAnalyticMean(parent.clone()))?;
        logit_mean += (&scm.weights[&(t.clone(), parent.clone())] * mu)[(0, 0)];
    }
    Ok(-logit_mean)
}

/// Draws weights until a pilot simulation puts at least [`MIN_ARM_FRACTION`]
/// of the rows in each treatment arm.
fn build_with_positivity(
    graph: &SemiMarkovianGraph,
    dims: &BTreeMap<NodeId, usize>,
    mechanisms: &BTreeMap<NodeId, Mechanism>,
    seed: u64,
) -> Result<LinearScm, ScmError> {
    let t = graph.treatment()?.clone();
    for attempt in 0..MAX_WEIGHT_ATTEMPTS as u64 {
        let mut rng = derive_rng(seed, &[TAG_WEIGHTS, attempt]);
        let weights = draw_weights(graph, dims, &mut rng);
        let mut scm = LinearScm::new(graph.clone(), dims.clone(), mechanisms.clone(), weights)?;
        let intercept = centered_intercept(&scm, &t)?;
        scm.mechanisms
            .insert(t.clone(), Mechanism::Logistic { intercept });
        let pilot_seed = derive_rng(seed, &[TAG_PILOT, attempt]).random::<u64>();
        let pilot = scm.simulate_full(PILOT_ROWS, pilot_seed)?;
        let fraction = pilot[&t].iter().sum::<f64>() / PILOT_ROWS as f64;
        if (MIN_ARM_FRACTION..=1.0 - MIN_ARM_FRACTION).contains(&fraction) {
            return Ok(scm);
        }
    }
    Err(ScmError::Positivity {
        attempts: MAX_WEIGHT_ATTEMPTS,
        min_fraction: MIN_ARM_FRACTION,
    })
}

/// Toy benchmark model: scalar anchor feature x1, block features x2 and x3
/// of width `d_tilde`, four hidden confounders, a logistic treatment, and a
/// linear outcome. Total feature width is `2 * d_tilde + 1`.
pub fn gen_toy_scm(d_tilde: usize, seed: u64) -> Result<LinearScm, ScmError> {
    toy_scm(d_tilde, seed, false)
}

/// Toy benchmark model with an extra direct edge from the anchor x1 to the
/// outcome, which removes every valid adjustment set not containing x1.
pub fn gen_toy_scm_x1y(d_tilde: usize, seed: u64) -> Result<LinearScm, ScmError> {
    toy_scm(d_tilde, seed, true)
}

fn toy_scm(d_tilde: usize, seed: u64, anchor_to_outcome: bool) -> Result<LinearScm, ScmError> {
    if d_tilde == 0 {
        return Err(ScmError::InvalidWidth);
    }
    let base = crate::oracle::fixtures::g_toy();
    let graph = if anchor_to_outcome {
        base.with_directed_edge(&crate::graph::node_id("x1"), &crate::graph::node_id("y"))?
    } else {
        base
    };
    let mut dims = BTreeMap::new();
    let mut mechanisms = BTreeMap::new();
    for node in graph.nodes() {
        let dim = match node.id.as_str() {
            "u1" | "x1" | "t" | "y" => 1,
            _ => d_tilde,
        };
        dims.insert(node.id.clone(), dim);
        let mechanism = match node.id.as_str() {
            "t" => Mechanism::Logistic { intercept: 0.0 },
            "u1" | "u2" | "u3" | "u4" => Mechanism::Linear {
                noise: NoiseSpec::Uniform { low: 1.0, high: 2.0 },
            },
            _ => Mechanism::Linear {
                noise: NoiseSpec::Gaussian { mean: 0.0, std_dev: NOISE_STD },
            },
        };
        mechanisms.insert(node.id.clone(), mechanism);
    }
    build_with_positivity(&graph, &dims, &mechanisms, seed)
}

/// Random unit-width SCM on the latent expansion of `g`: root nodes draw
/// Gaussian noise matching the toy confounder moments, non-roots add small
/// Gaussian noise, and the treatment uses a centered logistic link.
pub fn gen_random_scm(g: &SemiMarkovianGraph, seed: u64) -> Result<LinearScm, ScmError> {
    let expanded = g.latent_expansion();
    let treatment = expanded.treatment()?.clone();
    let mut dims = BTreeMap::new();
    let mut mechanisms = BTreeMap::new();
    for node in expanded.nodes() {
        dims.insert(node.id.clone(), 1);
        let mechanism = if node.id == treatment {
            Mechanism::Logistic { intercept: 0.0 }
        } else if expanded.parents(&node.id)?.is_empty() {
            Mechanism::Linear {
                noise: NoiseSpec::Gaussian { mean: ROOT_MEAN, std_dev: ROOT_VAR.sqrt() },
            }
        } else {
            Mechanism::Linear {
                noise: NoiseSpec::Gaussian { mean: 0.0, std_dev: NOISE_STD },
            }
        };
        mechanisms.insert(node.id.clone(), mechanism);
    }
    build_with_positivity(&expanded, &dims, &mechanisms, seed)
}

#[derive(Serialize, Deserialize)]
struct WeightBlock {
    child: NodeId,
    parent: NodeId,
    block: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct LinearScmJson {
    graph: SemiMarkovianGraph,
    dims: BTreeMap<NodeId, usize>,
    mechanisms: BTreeMap<NodeId, Mechanism>,
    weights: Vec<WeightBlock>,
}

impl Serialize for LinearScm {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let weights = self
            .weights
            .iter()
            .map(|((child, parent), block)| WeightBlock {
                child: child.clone(),
                parent: parent.clone(),
                block: block
                    .row_iter()
                    .map(|row| row.iter().copied().collect())
                    .collect(),
            })
            .collect();
        LinearScmJson {
            graph: self.graph.clone(),
            dims: self.dims.clone(),
            mechanisms: self.mechanisms.clone(),
            weights,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LinearScm {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = LinearScmJson::deserialize(deserializer)?;
        let mut weights = BTreeMap::new();
        for wb in raw.weights {
            let rows = wb.block.len();
            let cols = wb.block.first().map_or(0, Vec::len);
            if rows == 0 || cols == 0 || wb.block.iter().any(|r| r.len() != cols) {
                return Err(D::Error::custom(format!(
                    "ragged or empty weight block `{}` -> `{}`",
                    wb.parent, wb.child
                )));
            }
            let block = DMatrix::from_fn(rows, cols, |i, j| wb.block[i][j]);
            if weights.insert((wb.child.clone(), wb.parent.clone()), block).is_some() {
                return Err(D::Error::custom(format!(
                    "duplicate weight block `{}` -> `{}`",
                    wb.parent, wb.child
                )));
            }
        }
        LinearScm::new(raw.graph, raw.dims, raw.mechanisms, weights)
            .map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::node_id;
    use crate::oracle;

    #[test]
    fn toy_scm_shapes_and_determinism() {
        let scm = gen_toy_scm(2, 7).unwrap();
        assert_eq!(scm.feature_width(), 5);
        assert_eq!(scm.dim(&node_id("x1")), Some(1));
        assert_eq!(scm.dim(&node_id("x2")), Some(2));
        let a = scm.simulate(100, 3).unwrap();
        let b = scm.simulate(100, 3).unwrap();
        let c = scm.simulate(100, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.n(), 100);
        assert_eq!(
            a.ids().cloned().collect::<Vec<_>>(),
            vec![node_id("t"), node_id("x1"), node_id("x2"), node_id("x3"), node_id("y")]
        );
        for v in a.treatment_values().unwrap() {
            assert!(v == 0.0 || v == 1.0);
        }
    }

    #[test]
    fn weights_are_uniform_on_unit_shifted_interval() {
        let scm = gen_toy_scm(3, 11).unwrap();
        for (from, to) in scm.graph().directed_edges() {
            let block = scm.weight(to, from).unwrap();
            assert!(block.iter().all(|v| (1.0..2.0).contains(v)), "{from}->{to}");
        }
    }

    #[test]
    fn treated_fraction_within_guard_bounds() {
        for seed in 0..8 {
            let scm = gen_toy_scm(2, seed).unwrap();
            let t = scm.simulate(4_000, 99).unwrap().treatment_values().unwrap();
            let fraction = t.iter().sum::<f64>() / t.len() as f64;
            assert!(
                (0.005..=0.995).contains(&fraction),
                "seed {seed} fraction {fraction}"
            );
        }
    }

    #[test]
    fn intercept_centers_the_average_logit() {
        let scm = gen_toy_scm(2, 5).unwrap();
        let Mechanism::Logistic { intercept } = *scm.mechanism(&node_id("t")).unwrap() else {
            panic!("treatment must be logistic");
        };
        let full = scm.simulate_full(20_000, 1).unwrap();
        let w_x1 = scm.weight(&node_id("t"), &node_id("x1")).unwrap()[(0, 0)];
        let w_u1 = scm.weight(&node_id("t"), &node_id("u1")).unwrap()[(0, 0)];
        let mean_logit = (0..20_000)
            .map(|i| w_x1 * full[&node_id("x1")][(i, 0)] + w_u1 * full[&node_id("u1")][(i, 0)])
            .sum::<f64>()
            / 20_000.0
            + intercept;
        assert!(mean_logit.abs() < 0.1, "mean logit {mean_logit}");
    }

    #[test]
    fn analytic_means_match_simulation() {
        let scm = gen_toy_scm(2, 13).unwrap();
        let means = scm.node_means();
        assert!(!means.contains_key(&node_id("t")));
        assert!(!means.contains_key(&node_id("y")));
        let full = scm.simulate_full(20_000, 2).unwrap();
        for id in ["u1", "u2", "x1", "x2", "x3"] {
            let id = node_id(id);
            let empirical = full[&id].row_mean();
            let analytic = &means[&id];
            for k in 0..analytic.len() {
                let diff = (empirical[k] - analytic[k]).abs();
                assert!(
                    diff < 0.05 * (1.0 + analytic[k].abs()),
                    "{id}[{k}]: analytic {} empirical {}",
                    analytic[k],
                    empirical[k]
                );
            }
        }
    }

    #[test]
    fn clamping_treatment_keeps_upstream_columns_bit_identical() {
        let scm = gen_toy_scm(2, 21).unwrap();
        let obs = scm.simulate(500, 17).unwrap();
        let do1 = scm.simulate_do(500, 17, 1.0).unwrap();
        for id in ["x1", "x2", "x3"] {
            assert_eq!(obs.column(&node_id(id)).unwrap(), do1.column(&node_id(id)).unwrap());
        }
        assert!(do1.treatment_values().unwrap().iter().all(|&v| v == 1.0));
        assert_ne!(obs.column(&node_id("y")).unwrap(), do1.column(&node_id("y")).unwrap());
    }

    #[test]
    fn paired_arm_difference_is_exactly_the_outcome_weight() {
        let scm = gen_toy_scm(3, 29).unwrap();
        let ate = scm.true_ate().unwrap();
        assert!((1.0..2.0).contains(&ate));
        let y0 = scm.simulate_do(200, 8, 0.0).unwrap();
        let y1 = scm.simulate_do(200, 8, 1.0).unwrap();
        let y0 = y0.column(&node_id("y")).unwrap();
        let y1 = y1.column(&node_id("y")).unwrap();
        for i in 0..200 {
            assert!(((y1[(i, 0)] - y0[(i, 0)]) - ate).abs() < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_ate_matches_outcome_weight() {
        let scm = gen_toy_scm(2, 31).unwrap();
        let truth = scm.true_ate().unwrap();
        let (estimate, std_error) = scm.ate_monte_carlo(20_000, 5).unwrap();
        assert!(
            (estimate - truth).abs() <= 4.0 * std_error,
            "estimate {estimate} truth {truth} se {std_error}"
        );
    }

    #[test]
    fn structural_residuals_match_the_noise_model() {
        let scm = gen_toy_scm(2, 41).unwrap();
        let full = scm.simulate_full(4_000, 6).unwrap();
        let x2 = &full[&node_id("x2")];
        let mut predicted = DMatrix::zeros(4_000, 2);
        for parent in ["x1", "u2", "u3"] {
            let parent = node_id(parent);
            let block = scm.weight(&node_id("x2"), &parent).unwrap();
            predicted.gemm(1.0, &full[&parent], &block.transpose(), 1.0);
        }
        let residual = x2 - predicted;
        for k in 0..2 {
            let col = residual.column(k);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3_999.0;
            assert!(mean.abs() < 0.02, "residual mean {mean}");
            assert!((0.005..0.02).contains(&var), "residual variance {var}");
        }
    }

    #[test]
    fn anchor_outcome_variant_adds_one_block() {
        let base = gen_toy_scm(2, 3).unwrap();
        let variant = gen_toy_scm_x1y(2, 3).unwrap();
        assert!(base.weight(&node_id("y"), &node_id("x1")).is_none());
        let extra = variant.weight(&node_id("y"), &node_id("x1")).unwrap();
        assert!((1.0..2.0).contains(&extra[(0, 0)]));
    }

    #[test]
    fn random_scm_runs_on_random_graphs() {
        for seed in 0..5 {
            let g = oracle::random_assumption1_graph(4, 3, 0.5, seed).unwrap();
            let scm = gen_random_scm(&g, seed).unwrap();
            let data = scm.simulate(4_000, seed).unwrap();
            assert_eq!(data.feature_ids().len(), 4);
            let truth = scm.true_ate().unwrap();
            let (estimate, std_error) = scm.ate_monte_carlo(4_000, seed).unwrap();
            assert!(
                (estimate - truth).abs() <= 5.0 * std_error,
                "seed {seed}: estimate {estimate} truth {truth} se {std_error}"
            );
        }
    }

    #[test]
    fn json_round_trip_reconstructs_the_model() {
        let scm = gen_toy_scm(2, 9).unwrap();
        let json = serde_json::to_string(&scm).unwrap();
        let back: LinearScm = serde_json::from_str(&json).unwrap();
        assert_eq!(scm, back);
        assert_eq!(
            scm.simulate(50, 12).unwrap(),
            back.simulate(50, 12).unwrap()
        );
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(matches!(gen_toy_scm(0, 1), Err(ScmError::InvalidWidth)));
        let g = oracle::fixtures::g_toy_bidirected();
        let dims: BTreeMap<NodeId, usize> =
            g.nodes().iter().map(|n| (n.id.clone(), 1)).collect();
        let mechanisms: BTreeMap<NodeId, Mechanism> = g
            .nodes()
            .iter()
            .map(|n| {
                (
                    n.id.clone(),
                    Mechanism::Linear {
                        noise: NoiseSpec::Gaussian { mean: 0.0, std_dev: 1.0 },
                    },
                )
            })
            .collect();
        assert!(matches!(
            LinearScm::new(g, dims, mechanisms, BTreeMap::new()),
            Err(ScmError::BidirectedPresent)
        ));
        let ok = gen_toy_scm(1, 1).unwrap();
        let mut missing = ok.weights.clone();
        missing.pop_first();
        assert!(matches!(
            LinearScm::new(ok.graph.clone(), ok.dims.clone(), ok.mechanisms.clone(), missing),
            Err(ScmError::MissingWeight(_, _))
        ));
        let mut wrong_shape = ok.weights.clone();
        let key = (node_id("y"), node_id("t"));
        wrong_shape.insert(key, DMatrix::zeros(2, 2));
        assert!(matches!(
            LinearScm::new(ok.graph.clone(), ok.dims.clone(), ok.mechanisms.clone(), wrong_shape),
            Err(ScmError::WeightShape(..))
        ));
    }
}
