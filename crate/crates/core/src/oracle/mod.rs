//! Brute-force verifiers for the invariance / back-door equivalence, and a
//! random graph generator for property sweeps.
//!
//! The central claims under test: with an environment node `e` attached to an
//! eligible anchor `x_t`,
//! - if `x_t` is a direct parent of the treatment and `V` is a subset of
//!   `{t}`, then `Z` satisfies the back-door criterion exactly when
//!   `e` is d-separated from `y` given `Z` and `t` (equivalence);
//! - if `x_t` merely has a directed or bi-directed edge to the treatment,
//!   d-separation still implies the back-door criterion (sufficiency).

pub mod fixtures;

use std::collections::BTreeSet;

use rand::RngExt;
use thiserror::Error;

use crate::graph::{node_id, GraphError, Node, NodeId, NodeRole, SemiMarkovianGraph};
use crate::rng::derive_rng;
use crate::search::subsets_by_size;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{0} observed features exceed the brute-force limit of 20")]
    TooManyFeatures(usize),
    #[error("`{0}` is not a direct parent of the treatment")]
    NotAParent(NodeId),
    #[error("`{0}` has neither a directed nor a bi-directed edge to the treatment")]
    NotEligible(NodeId),
    #[error("environment target set may only contain the treatment, got `{0}`")]
    InvalidTarget(NodeId),
    #[error("infeasible parameters: {0}")]
    InfeasibleParams(String),
}

/// One disagreement between the back-door criterion and the d-separation test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub z: BTreeSet<NodeId>,
    pub backdoor: bool,
    pub e_separated: bool,
}

/// Outcome of sweeping every candidate subset for one anchor.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub x_t: NodeId,
    pub v: BTreeSet<NodeId>,
    pub subsets_checked: usize,
    pub counterexamples: Vec<Counterexample>,
}

impl EquivalenceReport {
    pub fn holds(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// All back-door sets among subsets of the observed features, minus `exclude`,
/// by direct evaluation of the criterion on each subset.
pub fn enumerate_backdoor_sets(
    g: &SemiMarkovianGraph,
    exclude: &BTreeSet<NodeId>,
) -> Result<BTreeSet<BTreeSet<NodeId>>, OracleError> {
    let pool: Vec<NodeId> = g
        .observed_features()
        .into_iter()
        .filter(|id| !exclude.contains(id))
        .collect();
    if pool.len() > 20 {
        return Err(OracleError::TooManyFeatures(pool.len()));
    }
    let mut out = BTreeSet::new();
    for z in subsets_by_size(&pool, pool.len()) {
        if g.satisfies_backdoor(&z)? {
            out.insert(z);
        }
    }
    Ok(out)
}

/// The graph the invariance test reasons about: `g` plus an environment node
/// whose parents are `x_t` and, when `include_t`, the treatment.
pub fn environment_graph(
    g: &SemiMarkovianGraph,
    x_t: &NodeId,
    include_t: bool,
) -> Result<SemiMarkovianGraph, OracleError> {
    let mut v = BTreeSet::new();
    if include_t {
        v.insert(g.treatment()?.clone());
    }
    Ok(g.attach_environment_node(x_t, &v)?)
}

fn check_v(g: &SemiMarkovianGraph, v: &BTreeSet<NodeId>) -> Result<(), OracleError> {
    let t = g.treatment()?;
    for id in v {
        if id != t {
            return Err(OracleError::InvalidTarget(id.clone()));
        }
    }
    Ok(())
}

fn sweep(
    g: &SemiMarkovianGraph,
    x_t: &NodeId,
    v: &BTreeSet<NodeId>,
    sufficiency_only: bool,
) -> Result<EquivalenceReport, OracleError> {
    let g_env = g.attach_environment_node(x_t, v)?;
    let e = node_id("e");
    let y = g.outcome()?.clone();
    let t = g.treatment()?.clone();
    let pool: Vec<NodeId> = g
        .observed_features()
        .into_iter()
        .filter(|id| id != x_t)
        .collect();
    if pool.len() > 20 {
        return Err(OracleError::TooManyFeatures(pool.len()));
    }
    let mut counterexamples = Vec::new();
    let candidates = subsets_by_size(&pool, pool.len());
    let subsets_checked = candidates.len();
    for z in candidates {
        let backdoor = g.satisfies_backdoor(&z)?;
        let mut cond = z.clone();
        cond.insert(t.clone());
        let e_separated = g_env.d_separated(&e, &y, &cond)?;
        let disagreement = if sufficiency_only {
            e_separated && !backdoor
        } else {
            backdoor != e_separated
        };
        if disagreement {
            counterexamples.push(Counterexample { z, backdoor, e_separated });
        }
    }
    Ok(EquivalenceReport {
        x_t: x_t.clone(),
        v: v.clone(),
        subsets_checked,
        counterexamples,
    })
}

/// Checks the full equivalence for a direct parent `x_t` of the treatment:
/// for every `Z` over the observed features minus `x_t`, the back-door
/// criterion holds iff `e` is d-separated from the outcome given `Z` and `t`.
/// `v` must be a subset of `{t}`.
pub fn verify_corollary1(
    g: &SemiMarkovianGraph,
    x_t: &NodeId,
    v: &BTreeSet<NodeId>,
) -> Result<EquivalenceReport, OracleError> {
    let t = g.treatment()?;
    if !g.has_directed_edge(x_t, t) {
        return Err(OracleError::NotAParent(x_t.clone()));
    }
    check_v(g, v)?;
    sweep(g, x_t, v, false)
}

/// Checks one-sided sufficiency for an anchor with a directed or bi-directed
/// edge to the treatment (typically a spouse): d-separation of `e` and the
/// outcome given `Z` and `t` must imply the back-door criterion.
pub fn verify_theorem1_spouse(
    g: &SemiMarkovianGraph,
    x_t: &NodeId,
    v: &BTreeSet<NodeId>,
) -> Result<EquivalenceReport, OracleError> {
    let t = g.treatment()?;
    if !g.has_directed_edge(x_t, t) && !g.has_bidirected_edge(x_t, t) {
        return Err(OracleError::NotEligible(x_t.clone()));
    }
    check_v(g, v)?;
    sweep(g, x_t, v, true)
}

/// Random graph satisfying the working assumption: a feature DAG with edge
/// probability `density`, a treatment with at least one observed feature
/// parent and the outcome as its only child, an outcome with no children,
/// and `n_bidirected` hidden-confounder edges over the observed nodes.
pub fn random_assumption1_graph(
    n_observed: usize,
    n_bidirected: usize,
    density: f64,
    seed: u64,
) -> Result<SemiMarkovianGraph, OracleError> {
    if n_observed < 2 {
        return Err(OracleError::InfeasibleParams(format!(
            "need at least 2 observed features, got {n_observed}"
        )));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(OracleError::InfeasibleParams(format!(
            "density {density} outside [0, 1]"
        )));
    }
    let total = n_observed + 2;
    let max_pairs = total * (total - 1) / 2;
    if n_bidirected > max_pairs {
        return Err(OracleError::InfeasibleParams(format!(
            "{n_bidirected} bi-directed edges exceed {max_pairs} node pairs"
        )));
    }
    let mut rng = derive_rng(seed, &[0x6f72_6163]);
    let features: Vec<NodeId> = (1..=n_observed)
        .map(|i| node_id(&format!("x{i}")))
        .collect();
    let t = node_id("t");
    let y = node_id("y");
    let mut nodes: Vec<Node> = features
        .iter()
        .map(|id| Node::new(id.clone(), NodeRole::Feature, true))
        .collect();
    nodes.push(Node::new(t.clone(), NodeRole::Treatment, true));
    nodes.push(Node::new(y.clone(), NodeRole::Outcome, true));

    let mut directed: Vec<(NodeId, NodeId)> = Vec::new();
    // Feature DAG ordered x1 < x2 < ...: edges only from lower to higher index,
    // so cycles cannot arise.
    for i in 0..n_observed {
        for j in (i + 1)..n_observed {
            if rng.random::<f64>() < density {
                directed.push((features[i].clone(), features[j].clone()));
            }
        }
    }
    let mut t_parents: Vec<usize> = (0..n_observed)
        .filter(|_| rng.random::<f64>() < density)
        .collect();
    if t_parents.is_empty() {
        t_parents.push(rng.random_range(0..n_observed));
    }
    for &i in &t_parents {
        directed.push((features[i].clone(), t.clone()));
    }
    directed.push((t.clone(), y.clone()));
    for feature in &features {
        if rng.random::<f64>() < density {
            directed.push((feature.clone(), y.clone()));
        }
    }

    let mut observed_all: Vec<NodeId> = features.clone();
    observed_all.push(t.clone());
    observed_all.push(y.clone());
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    while pairs.len() < n_bidirected {
        let a = rng.random_range(0..total);
        let b = rng.random_range(0..total);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let bidirected: Vec<(NodeId, NodeId)> = pairs
        .into_iter()
        .map(|(a, b)| (observed_all[a].clone(), observed_all[b].clone()))
        .collect();

    Ok(SemiMarkovianGraph::new(nodes, &directed, &bidirected)?)
}
