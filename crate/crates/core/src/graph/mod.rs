//! Semi-Markovian causal graphs.
//!
//! A graph has directed edges (cause to effect) and bi-directed edges, where
//! `a <-> b` stands for a hidden common cause of `a` and `b`. Nodes carry a
//! role (feature, treatment, outcome, environment) and an observability flag.
//!
//! Two d-separation engines are provided. [`SemiMarkovianGraph::d_separated`]
//! expands bi-directed edges into explicit hidden parents and runs a
//! reachable-set sweep; [`paths::d_separated_naive`] enumerates every path of
//! the unexpanded graph and applies the blocking rules directly. They must
//! agree, and the test suites hold them to that.

mod dsep;
pub mod paths;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Short identifier for a graph node.
///
/// Valid ids are non-empty ASCII `[A-Za-z0-9_]` strings that do not start
/// with a digit and do not contain `__` (reserved for per-dimension column
/// names in CSV headers).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Result<Self, GraphError> {
        let id = id.into();
        let mut chars = id.chars();
        let head_ok = chars
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
        let tail_ok = id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !head_ok || !tail_ok || id.contains("__") {
            return Err(GraphError::InvalidNodeId(id));
        }
        Ok(NodeId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Convenience constructor for static id strings; panics on invalid input.
pub fn node_id(id: &str) -> NodeId {
    NodeId::new(id).expect("valid node id literal")
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Feature,
    Treatment,
    Outcome,
    Environment,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeRole::Feature => "feature",
            NodeRole::Treatment => "treatment",
            NodeRole::Outcome => "outcome",
            NodeRole::Environment => "environment",
        };
        f.write_str(s)
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub role: NodeRole,
    pub observed: bool,
}

impl Node {
    pub fn new(id: NodeId, role: NodeRole, observed: bool) -> Self {
        Node { id, role, observed }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("invalid node id {0:?} (ascii [A-Za-z0-9_], no leading digit, no '__')")]
    InvalidNodeId(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(NodeId),
    #[error("edge references unknown node `{0}`")]
    UnknownEdgeNode(NodeId),
    #[error("self-loop on `{0}`")]
    SelfLoop(NodeId),
    #[error("duplicate edge between `{0}` and `{1}`")]
    DuplicateEdge(NodeId, NodeId),
    #[error("node `{0}` not found")]
    NodeNotFound(NodeId),
    #[error("directed part of the graph has a cycle")]
    CyclicGraph,
    #[error("`{0}` cannot be both an endpoint and a conditioning node")]
    EndpointInConditioningSet(NodeId),
    #[error("identical endpoints `{0}`")]
    IdenticalEndpoints(NodeId),
    #[error("graph has no treatment node")]
    NoTreatment,
    #[error("graph has no outcome node")]
    NoOutcome,
    #[error("graph has more than one `{0}` node")]
    MultipleRoleNodes(NodeRole),
    #[error("edge `{0}` -> `{1}` not present")]
    MissingEdge(NodeId, NodeId),
    #[error("graph already has an environment node")]
    EnvironmentPresent,
    #[error("node id `e` is taken by a non-environment node")]
    EnvironmentIdTaken,
    #[error("node `{0}` is not observed")]
    Unobserved(NodeId),
    #[error("`{0}` has role `{1}`, expected a feature")]
    NotAFeature(NodeId, NodeRole),
    #[error("environment target set may not contain `{0}`")]
    InvalidEnvironmentTarget(NodeId),
}

/// A basic-mode structural defect, reported as data by [`SemiMarkovianGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DirectedCycle,
    MultipleNodesWithRole(NodeRole, Vec<NodeId>),
    RoleNodeUnobserved(NodeRole, NodeId),
    BidirectedOnUnobserved(NodeId, NodeId),
    EnvironmentHasChild(NodeId, NodeId),
    /// Assumption-1 mode: treatment or outcome missing entirely.
    MissingRole(NodeRole),
    /// Assumption-1 mode: the treatment has a child other than the outcome.
    TreatmentChildNotOutcome(NodeId),
    /// Assumption-1 mode: the treatment does not point at the outcome.
    TreatmentOutcomeEdgeMissing,
    /// Assumption-1 mode: the outcome has a child.
    OutcomeHasChild(NodeId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DirectedCycle => write!(f, "directed part has a cycle"),
            Violation::MultipleNodesWithRole(r, ids) => {
                write!(f, "multiple {r} nodes: {ids:?}")
            }
            Violation::RoleNodeUnobserved(r, id) => write!(f, "{r} node `{id}` is unobserved"),
            Violation::BidirectedOnUnobserved(a, b) => {
                write!(f, "bi-directed edge `{a}` <-> `{b}` touches an unobserved node")
            }
            Violation::EnvironmentHasChild(e, c) => {
                write!(f, "environment `{e}` has child `{c}`")
            }
            Violation::MissingRole(r) => write!(f, "no {r} node"),
            Violation::TreatmentChildNotOutcome(c) => {
                write!(f, "treatment has non-outcome child `{c}`")
            }
            Violation::TreatmentOutcomeEdgeMissing => {
                write!(f, "treatment does not point at the outcome")
            }
            Violation::OutcomeHasChild(c) => write!(f, "outcome has child `{c}`"),
        }
    }
}

/// Validation strictness for [`SemiMarkovianGraph::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    /// Structural sanity only.
    Basic,
    /// Basic checks plus the working assumption of the method: the treatment
    /// has the outcome as its only child, and the outcome has no child.
    Assumption1,
}

#[derive(Clone, Debug)]
pub struct SemiMarkovianGraph {
    /// Sorted by id; `index` maps id to position, so index order is id order.
    nodes: Vec<Node>,
    index: BTreeMap<NodeId, usize>,
    directed: BTreeSet<(usize, usize)>,
    /// Normalized to (low index, high index).
    bidirected: BTreeSet<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    spouses: Vec<Vec<usize>>,
    acyclic: bool,
}

impl PartialEq for SemiMarkovianGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.directed == other.directed
            && self.bidirected == other.bidirected
    }
}
impl Eq for SemiMarkovianGraph {}

impl SemiMarkovianGraph {
    pub fn new(
        nodes: Vec<Node>,
        directed: &[(NodeId, NodeId)],
        bidirected: &[(NodeId, NodeId)],
    ) -> Result<Self, GraphError> {
        let mut sorted = nodes;
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = BTreeMap::new();
        for (i, node) in sorted.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(node.id.clone()));
            }
        }
        let look = |id: &NodeId| -> Result<usize, GraphError> {
            index
                .get(id)
                .copied()
                .ok_or_else(|| GraphError::UnknownEdgeNode(id.clone()))
        };
        let mut dir = BTreeSet::new();
        for (a, b) in directed {
            let (ia, ib) = (look(a)?, look(b)?);
            if ia == ib {
                return Err(GraphError::SelfLoop(a.clone()));
            }
            if !dir.insert((ia, ib)) {
                return Err(GraphError::DuplicateEdge(a.clone(), b.clone()));
            }
        }
        let mut bi = BTreeSet::new();
        for (a, b) in bidirected {
            let (ia, ib) = (look(a)?, look(b)?);
            if ia == ib {
                return Err(GraphError::SelfLoop(a.clone()));
            }
            if !bi.insert((ia.min(ib), ia.max(ib))) {
                return Err(GraphError::DuplicateEdge(a.clone(), b.clone()));
            }
        }
        let n = sorted.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut spouses = vec![Vec::new(); n];
        for &(a, b) in &dir {
            children[a].push(b);
            parents[b].push(a);
        }
        for &(a, b) in &bi {
            spouses[a].push(b);
            spouses[b].push(a);
        }
        for adj in parents.iter_mut().chain(&mut children).chain(&mut spouses) {
            adj.sort_unstable();
        }
        let acyclic = dsep::is_acyclic(&children);
        Ok(SemiMarkovianGraph {
            nodes: sorted,
            index,
            directed: dir,
            bidirected: bi,
            parents,
            children,
            spouses,
            acyclic,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.index.contains_key(id)
    }

    pub fn node(&self, id: &NodeId) -> Result<&Node, GraphError> {
        self.idx(id).map(|i| &self.nodes[i])
    }

    fn idx(&self, id: &NodeId) -> Result<usize, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::NodeNotFound(id.clone()))
    }

    pub(crate) fn idx_of(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub(crate) fn id_of(&self, i: usize) -> &NodeId {
        &self.nodes[i].id
    }

    pub(crate) fn parents_idx(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub(crate) fn children_idx(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub(crate) fn spouses_idx(&self, i: usize) -> &[usize] {
        &self.spouses[i]
    }

    pub fn directed_edges(&self) -> impl Iterator<Item = (&NodeId, &NodeId)> {
        self.directed
            .iter()
            .map(move |&(a, b)| (self.id_of(a), self.id_of(b)))
    }

    pub fn bidirected_edges(&self) -> impl Iterator<Item = (&NodeId, &NodeId)> {
        self.bidirected
            .iter()
            .map(move |&(a, b)| (self.id_of(a), self.id_of(b)))
    }

    pub fn has_directed_edge(&self, a: &NodeId, b: &NodeId) -> bool {
        match (self.idx_of(a), self.idx_of(b)) {
            (Some(ia), Some(ib)) => self.directed.contains(&(ia, ib)),
            _ => false,
        }
    }

    pub fn has_bidirected_edge(&self, a: &NodeId, b: &NodeId) -> bool {
        match (self.idx_of(a), self.idx_of(b)) {
            (Some(ia), Some(ib)) => self.bidirected.contains(&(ia.min(ib), ia.max(ib))),
            _ => false,
        }
    }

    pub fn parents(&self, id: &NodeId) -> Result<Vec<NodeId>, GraphError> {
        let i = self.idx(id)?;
        Ok(self.parents[i].iter().map(|&p| self.id_of(p).clone()).collect())
    }

    pub fn children(&self, id: &NodeId) -> Result<Vec<NodeId>, GraphError> {
        let i = self.idx(id)?;
        Ok(self.children[i].iter().map(|&c| self.id_of(c).clone()).collect())
    }

    /// Bi-directed neighbours.
    pub fn spouses(&self, id: &NodeId) -> Result<Vec<NodeId>, GraphError> {
        let i = self.idx(id)?;
        Ok(self.spouses[i].iter().map(|&s| self.id_of(s).clone()).collect())
    }

    fn unique_role(&self, role: NodeRole) -> Result<&NodeId, GraphError> {
        let mut found = None;
        for node in &self.nodes {
            if node.role == role {
                if found.is_some() {
                    return Err(GraphError::MultipleRoleNodes(role));
                }
                found = Some(&node.id);
            }
        }
        found.ok_or(match role {
            NodeRole::Treatment => GraphError::NoTreatment,
            _ => GraphError::NoOutcome,
        })
    }

    pub fn treatment(&self) -> Result<&NodeId, GraphError> {
        self.unique_role(NodeRole::Treatment)
    }

    pub fn outcome(&self) -> Result<&NodeId, GraphError> {
        self.unique_role(NodeRole::Outcome)
    }

    pub fn environment(&self) -> Option<&NodeId> {
        self.nodes
            .iter()
            .find(|n| n.role == NodeRole::Environment)
            .map(|n| &n.id)
    }

    /// Observed feature nodes in id order.
    pub fn observed_features(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.observed && n.role == NodeRole::Feature)
            .map(|n| n.id.clone())
            .collect()
    }

    pub fn is_acyclic(&self) -> bool {
        self.acyclic
    }

    /// Reports every violated structural invariant; an empty result means valid.
    pub fn validate(&self, mode: ValidationMode) -> Vec<Violation> {
        let mut out = Vec::new();
        if !self.acyclic {
            out.push(Violation::DirectedCycle);
        }
        for role in [NodeRole::Treatment, NodeRole::Outcome, NodeRole::Environment] {
            let ids: Vec<NodeId> = self
                .nodes
                .iter()
                .filter(|n| n.role == role)
                .map(|n| n.id.clone())
                .collect();
            if ids.len() > 1 {
                out.push(Violation::MultipleNodesWithRole(role, ids.clone()));
            }
            for id in &ids {
                if !self.nodes[self.index[id]].observed {
                    out.push(Violation::RoleNodeUnobserved(role, id.clone()));
                }
            }
        }
        for &(a, b) in &self.bidirected {
            if !self.nodes[a].observed || !self.nodes[b].observed {
                out.push(Violation::BidirectedOnUnobserved(
                    self.id_of(a).clone(),
                    self.id_of(b).clone(),
                ));
            }
        }
        for node in &self.nodes {
            if node.role == NodeRole::Environment {
                let i = self.index[&node.id];
                for &c in &self.children[i] {
                    out.push(Violation::EnvironmentHasChild(
                        node.id.clone(),
                        self.id_of(c).clone(),
                    ));
                }
            }
        }
        if mode == ValidationMode::Assumption1 {
            let t = self.nodes.iter().position(|n| n.role == NodeRole::Treatment);
            let y = self.nodes.iter().position(|n| n.role == NodeRole::Outcome);
            match (t, y) {
                (Some(t), Some(y)) => {
                    let mut points_at_outcome = false;
                    for &c in &self.children[t] {
                        if c == y {
                            points_at_outcome = true;
                        } else {
                            out.push(Violation::TreatmentChildNotOutcome(self.id_of(c).clone()));
                        }
                    }
                    if !points_at_outcome {
                        out.push(Violation::TreatmentOutcomeEdgeMissing);
                    }
                    for &c in &self.children[y] {
                        out.push(Violation::OutcomeHasChild(self.id_of(c).clone()));
                    }
                }
                _ => {
                    if t.is_none() {
                        out.push(Violation::MissingRole(NodeRole::Treatment));
                    }
                    if y.is_none() {
                        out.push(Violation::MissingRole(NodeRole::Outcome));
                    }
                }
            }
        }
        out
    }

    pub fn satisfies_assumption1(&self) -> bool {
        self.validate(ValidationMode::Assumption1).is_empty()
    }

    /// Replaces each bi-directed edge by a fresh hidden node with two outgoing
    /// directed edges. The result has no bi-directed edges; original nodes and
    /// directed edges are untouched. Hidden nodes are named `_u1`, `_u2`, ...
    /// in the sorted order of the bi-directed edges, skipping taken ids.
    pub fn latent_expansion(&self) -> SemiMarkovianGraph {
        let mut nodes = self.nodes.clone();
        let mut directed: Vec<(NodeId, NodeId)> = self
            .directed
            .iter()
            .map(|&(a, b)| (self.id_of(a).clone(), self.id_of(b).clone()))
            .collect();
        let mut next = 1usize;
        for &(a, b) in &self.bidirected {
            let hidden = loop {
                let candidate = NodeId::new(format!("_u{next}")).expect("generated id");
                next += 1;
                if !self.index.contains_key(&candidate) {
                    break candidate;
                }
            };
            nodes.push(Node::new(hidden.clone(), NodeRole::Feature, false));
            directed.push((hidden.clone(), self.id_of(a).clone()));
            directed.push((hidden, self.id_of(b).clone()));
        }
        SemiMarkovianGraph::new(nodes, &directed, &[])
            .expect("expansion of a well-formed graph is well-formed")
    }

    /// Topological order of the directed part, smallest id first among
    /// nodes whose parents are all placed.
    pub fn topological_order(&self) -> Result<Vec<NodeId>, GraphError> {
        if !self.acyclic {
            return Err(GraphError::CyclicGraph);
        }
        let n = self.nodes.len();
        let mut remaining: Vec<usize> = (0..n).map(|i| self.parents[i].len()).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| remaining[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(self.id_of(i).clone());
            for &c in &self.children[i] {
                remaining[c] -= 1;
                if remaining[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        Ok(order)
    }

    /// Copy of the graph with one extra directed edge.
    pub fn with_directed_edge(&self, from: &NodeId, to: &NodeId) -> Result<Self, GraphError> {
        let mut directed: Vec<(NodeId, NodeId)> = self
            .directed_edges()
            .map(|(a, b)| (a.clone(), b.clone()))
            .collect();
        directed.push((from.clone(), to.clone()));
        let bidirected: Vec<(NodeId, NodeId)> = self
            .bidirected_edges()
            .map(|(a, b)| (a.clone(), b.clone()))
            .collect();
        SemiMarkovianGraph::new(self.nodes.clone(), &directed, &bidirected)
    }

    /// Strict descendants of `v` (excluding `v`), directed edges only.
    pub fn descendants(&self, v: &NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
        let start = self.idx(v)?;
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for &c in &self.children[i] {
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        Ok(seen
            .iter()
            .enumerate()
            .filter(|&(i, &s)| s && i != start)
            .map(|(i, _)| self.id_of(i).clone())
            .collect())
    }

    fn check_query_nodes(
        &self,
        a: &NodeId,
        b: &NodeId,
        z: &BTreeSet<NodeId>,
    ) -> Result<(), GraphError> {
        if !self.acyclic {
            return Err(GraphError::CyclicGraph);
        }
        self.idx(a)?;
        self.idx(b)?;
        if a == b {
            return Err(GraphError::IdenticalEndpoints(a.clone()));
        }
        for id in z {
            self.idx(id)?;
            if id == a || id == b {
                return Err(GraphError::EndpointInConditioningSet(id.clone()));
            }
        }
        Ok(())
    }

    /// Whether `a` and `b` are d-separated given `z`.
    ///
    /// Bi-directed edges are handled by latent expansion; a collider is open
    /// when it or one of its descendants is conditioned on.
    pub fn d_separated(
        &self,
        a: &NodeId,
        b: &NodeId,
        z: &BTreeSet<NodeId>,
    ) -> Result<bool, GraphError> {
        self.check_query_nodes(a, b, z)?;
        let g = if self.bidirected.is_empty() {
            self
        } else {
            &self.latent_expansion()
        };
        let ia = g.index[a];
        let ib = g.index[b];
        let in_z: Vec<bool> = g
            .nodes
            .iter()
            .map(|n| z.contains(&n.id))
            .collect();
        Ok(!dsep::reachable(&g.parents, &g.children, ia, &in_z)[ib])
    }

    /// Copy of the graph with the treatment-to-outcome edge removed.
    pub fn g_minus_t(&self) -> Result<SemiMarkovianGraph, GraphError> {
        let t = self.treatment()?.clone();
        let y = self.outcome()?.clone();
        let (it, iy) = (self.index[&t], self.index[&y]);
        if !self.directed.contains(&(it, iy)) {
            return Err(GraphError::MissingEdge(t, y));
        }
        let directed: Vec<(NodeId, NodeId)> = self
            .directed
            .iter()
            .filter(|&&e| e != (it, iy))
            .map(|&(a, b)| (self.id_of(a).clone(), self.id_of(b).clone()))
            .collect();
        let bidirected: Vec<(NodeId, NodeId)> = self
            .bidirected
            .iter()
            .map(|&(a, b)| (self.id_of(a).clone(), self.id_of(b).clone()))
            .collect();
        SemiMarkovianGraph::new(self.nodes.clone(), &directed, &bidirected)
    }

    fn check_adjustment_set(&self, z: &BTreeSet<NodeId>) -> Result<(), GraphError> {
        for id in z {
            let node = self.node(id)?;
            if node.role != NodeRole::Feature {
                return Err(GraphError::NotAFeature(id.clone(), node.role));
            }
            if !node.observed {
                return Err(GraphError::Unobserved(id.clone()));
            }
        }
        Ok(())
    }

    /// Back-door criterion: no node of `z` is a descendant of the treatment,
    /// and `z` blocks every treatment-outcome path that enters the treatment
    /// through an arrowhead.
    ///
    /// The arrowhead-path condition is evaluated as d-separation of treatment
    /// and outcome in the latent expansion with every edge out of the
    /// treatment removed; since `z` contains no treatment descendant, the
    /// removal does not disturb any collider-opening descendant path.
    pub fn satisfies_backdoor(&self, z: &BTreeSet<NodeId>) -> Result<bool, GraphError> {
        if !self.acyclic {
            return Err(GraphError::CyclicGraph);
        }
        self.check_adjustment_set(z)?;
        let t = self.treatment()?.clone();
        let y = self.outcome()?.clone();
        let desc = self.descendants(&t)?;
        if z.iter().any(|id| desc.contains(id)) {
            return Ok(false);
        }
        let g = self.latent_expansion();
        let it = g.index[&t];
        let iy = g.index[&y];
        let mut children = g.children.clone();
        let mut parents = g.parents.clone();
        for &c in &children[it] {
            parents[c].retain(|&p| p != it);
        }
        children[it].clear();
        let in_z: Vec<bool> = g.nodes.iter().map(|n| z.contains(&n.id)).collect();
        Ok(!dsep::reachable(&parents, &children, it, &in_z)[iy])
    }

    /// Equivalent route under the working assumption: d-separation of
    /// treatment and outcome given `z` in [`SemiMarkovianGraph::g_minus_t`].
    /// Must agree with [`SemiMarkovianGraph::satisfies_backdoor`] whenever the
    /// treatment's only child is the outcome and the outcome has no child.
    pub fn satisfies_backdoor_via_gminus(&self, z: &BTreeSet<NodeId>) -> Result<bool, GraphError> {
        self.check_adjustment_set(z)?;
        let reduced = self.g_minus_t()?;
        let t = self.treatment()?;
        let y = self.outcome()?;
        reduced.d_separated(t, y, z)
    }

    /// Adds an environment node `e` with parents `x_t` and every node of `v`.
    pub fn attach_environment_node(
        &self,
        x_t: &NodeId,
        v: &BTreeSet<NodeId>,
    ) -> Result<SemiMarkovianGraph, GraphError> {
        if self.environment().is_some() {
            return Err(GraphError::EnvironmentPresent);
        }
        let e = node_id("e");
        if self.index.contains_key(&e) {
            return Err(GraphError::EnvironmentIdTaken);
        }
        let xt_node = self.node(x_t)?;
        if !xt_node.observed {
            return Err(GraphError::Unobserved(x_t.clone()));
        }
        let outcome = self.outcome()?.clone();
        if v.contains(x_t) {
            return Err(GraphError::InvalidEnvironmentTarget(x_t.clone()));
        }
        if v.contains(&outcome) {
            return Err(GraphError::InvalidEnvironmentTarget(outcome));
        }
        let mut nodes = self.nodes.clone();
        nodes.push(Node::new(e.clone(), NodeRole::Environment, true));
        let mut directed: Vec<(NodeId, NodeId)> = self
            .directed
            .iter()
            .map(|&(a, b)| (self.id_of(a).clone(), self.id_of(b).clone()))
            .collect();
        directed.push((x_t.clone(), e.clone()));
        for id in v {
            self.idx(id)?;
            directed.push((id.clone(), e.clone()));
        }
        let bidirected: Vec<(NodeId, NodeId)> = self
            .bidirected
            .iter()
            .map(|&(a, b)| (self.id_of(a).clone(), self.id_of(b).clone()))
            .collect();
        SemiMarkovianGraph::new(nodes, &directed, &bidirected)
    }
}

/// Mirror of the canonical JSON shape.
#[derive(Serialize, Deserialize)]
struct GraphJson {
    nodes: Vec<Node>,
    directed: Vec<(NodeId, NodeId)>,
    bidirected: Vec<(NodeId, NodeId)>,
}

impl Serialize for SemiMarkovianGraph {
    // Nodes are stored sorted by id and edge sets are ordered by node index,
    // which equals id order, so the output is canonical by construction.
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let raw = GraphJson {
            nodes: self.nodes.clone(),
            directed: self
                .directed
                .iter()
                .map(|&(a, b)| (self.id_of(a).clone(), self.id_of(b).clone()))
                .collect(),
            bidirected: self
                .bidirected
                .iter()
                .map(|&(a, b)| (self.id_of(a).clone(), self.id_of(b).clone()))
                .collect(),
        };
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SemiMarkovianGraph {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = GraphJson::deserialize(deserializer)?;
        SemiMarkovianGraph::new(raw.nodes, &raw.directed, &raw.bidirected)
            .map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fixtures;

    fn ids(names: &[&str]) -> BTreeSet<NodeId> {
        names.iter().map(|n| node_id(n)).collect()
    }

    #[test]
    fn node_id_rules() {
        assert!(NodeId::new("x1").is_ok());
        assert!(NodeId::new("_u3").is_ok());
        assert!(NodeId::new("").is_err());
        assert!(NodeId::new("2x").is_err());
        assert!(NodeId::new("a b").is_err());
        assert!(NodeId::new("x__0").is_err());
    }

    #[test]
    fn construction_rejects_malformed_edges() {
        let nodes = vec![
            Node::new(node_id("a"), NodeRole::Feature, true),
            Node::new(node_id("b"), NodeRole::Feature, true),
        ];
        let unknown = SemiMarkovianGraph::new(
            nodes.clone(),
            &[(node_id("a"), node_id("zz"))],
            &[],
        );
        assert!(matches!(unknown, Err(GraphError::UnknownEdgeNode(_))));
        let self_loop =
            SemiMarkovianGraph::new(nodes.clone(), &[(node_id("a"), node_id("a"))], &[]);
        assert!(matches!(self_loop, Err(GraphError::SelfLoop(_))));
        let dup = SemiMarkovianGraph::new(
            nodes.clone(),
            &[(node_id("a"), node_id("b")), (node_id("a"), node_id("b"))],
            &[],
        );
        assert!(matches!(dup, Err(GraphError::DuplicateEdge(_, _))));
        // Bi-directed edges are unordered: (a,b) then (b,a) is a duplicate.
        let dup_bi = SemiMarkovianGraph::new(
            nodes,
            &[],
            &[(node_id("a"), node_id("b")), (node_id("b"), node_id("a"))],
        );
        assert!(matches!(dup_bi, Err(GraphError::DuplicateEdge(_, _))));
    }

    #[test]
    fn validate_reports_cycle_as_data() {
        let g = SemiMarkovianGraph::new(
            vec![
                Node::new(node_id("x1"), NodeRole::Feature, true),
                Node::new(node_id("x2"), NodeRole::Feature, true),
            ],
            &[(node_id("x1"), node_id("x2")), (node_id("x2"), node_id("x1"))],
            &[],
        )
        .unwrap();
        assert_eq!(g.validate(ValidationMode::Basic), vec![Violation::DirectedCycle]);
        assert!(g.d_separated(&node_id("x1"), &node_id("x2"), &ids(&[])).is_err());
    }

    #[test]
    fn validate_reports_duplicate_roles() {
        let g = SemiMarkovianGraph::new(
            vec![
                Node::new(node_id("t"), NodeRole::Treatment, true),
                Node::new(node_id("t2"), NodeRole::Treatment, true),
                Node::new(node_id("y"), NodeRole::Outcome, true),
            ],
            &[(node_id("t"), node_id("y"))],
            &[],
        )
        .unwrap();
        let violations = g.validate(ValidationMode::Basic);
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::MultipleNodesWithRole(NodeRole::Treatment, _))));
        assert!(matches!(g.treatment(), Err(GraphError::MultipleRoleNodes(_))));
    }

    #[test]
    fn assumption1_mode_flags_extra_children() {
        let g = SemiMarkovianGraph::new(
            vec![
                Node::new(node_id("t"), NodeRole::Treatment, true),
                Node::new(node_id("y"), NodeRole::Outcome, true),
                Node::new(node_id("x1"), NodeRole::Feature, true),
            ],
            &[
                (node_id("t"), node_id("y")),
                (node_id("t"), node_id("x1")),
                (node_id("y"), node_id("x1")),
            ],
            &[],
        )
        .unwrap();
        let violations = g.validate(ValidationMode::Assumption1);
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::TreatmentChildNotOutcome(_))));
        assert!(violations.iter().any(|v| matches!(v, Violation::OutcomeHasChild(_))));
        assert!(!g.satisfies_assumption1());
        assert!(fixtures::g_toy_bidirected().satisfies_assumption1());
        assert!(fixtures::g_bd().satisfies_assumption1());
    }

    #[test]
    fn descendants_are_strict() {
        let g = fixtures::g_toy_bidirected();
        assert_eq!(g.descendants(&node_id("x1")).unwrap(), ids(&["x2", "t", "y"]));
        assert!(g.descendants(&node_id("zz")).is_err());
    }

    #[test]
    fn dsep_toy_paper_verdicts() {
        // With e attached to x1 and V = {t}: conditioning on {x2, t} separates
        // e from y; conditioning on {t} alone does not.
        let g = fixtures::g_toy_bidirected()
            .attach_environment_node(&node_id("x1"), &ids(&["t"]))
            .unwrap();
        let (e, y) = (node_id("e"), node_id("y"));
        assert!(g.d_separated(&e, &y, &ids(&["x2", "t"])).unwrap());
        assert!(!g.d_separated(&e, &y, &ids(&["t"])).unwrap());
        // {x1, t} separates too, because every path out of e starts with a
        // tail at x1 or t. Candidate sets exclude the anchor, so this never
        // certifies {x1}, which is not a valid back-door set.
        assert!(g.d_separated(&e, &y, &ids(&["x1", "t"])).unwrap());
        assert!(!g.satisfies_backdoor(&ids(&["x1"])).unwrap());
        // {x2, x3, t} fails: x3 opens the collider u3 -> x3 <- u4.
        assert!(!g.d_separated(&e, &y, &ids(&["x2", "x3", "t"])).unwrap());
    }

    #[test]
    fn dsep_anchored_at_x3_separates_but_x3_is_no_backdoor() {
        // Separation of e and y given {x3, t} does not certify {x3}: x3 has
        // no edge into t, so the anchor is ineligible and indeed {x3} fails
        // the back-door criterion.
        let g = fixtures::g_toy_bidirected();
        let g_env = g.attach_environment_node(&node_id("x3"), &ids(&["t"])).unwrap();
        assert!(g_env
            .d_separated(&node_id("e"), &node_id("y"), &ids(&["x3", "t"]))
            .unwrap());
        assert!(!g.satisfies_backdoor(&ids(&["x3"])).unwrap());
    }

    #[test]
    fn dsep_x1_y_given_x2_depends_on_treatment_edge() {
        // On the full toy graph the path x1 -> t -> y stays open, so {x2}
        // does not separate x1 from y; removing t -> y closes it.
        let g = fixtures::g_toy_bidirected();
        assert!(!g.d_separated(&node_id("x1"), &node_id("y"), &ids(&["x2"])).unwrap());
        let reduced = g.g_minus_t().unwrap();
        assert!(reduced.d_separated(&node_id("x1"), &node_id("y"), &ids(&["x2"])).unwrap());
    }

    #[test]
    fn dsep_rejects_overlapping_arguments() {
        let g = fixtures::g_toy_bidirected();
        assert!(matches!(
            g.d_separated(&node_id("x1"), &node_id("y"), &ids(&["x1"])),
            Err(GraphError::EndpointInConditioningSet(_))
        ));
        assert!(matches!(
            g.d_separated(&node_id("x1"), &node_id("x1"), &ids(&[])),
            Err(GraphError::IdenticalEndpoints(_))
        ));
        assert!(matches!(
            g.d_separated(&node_id("x1"), &node_id("zz"), &ids(&[])),
            Err(GraphError::NodeNotFound(_))
        ));
    }

    #[test]
    fn g_minus_t_removes_exactly_one_edge() {
        let g = fixtures::g_toy_bidirected();
        let reduced = g.g_minus_t().unwrap();
        assert_eq!(
            g.directed_edges().count(),
            reduced.directed_edges().count() + 1
        );
        assert!(!reduced.has_directed_edge(&node_id("t"), &node_id("y")));
        assert!(matches!(reduced.g_minus_t(), Err(GraphError::MissingEdge(_, _))));
    }

    #[test]
    fn latent_expansion_moves_confounding_into_hidden_parents() {
        let g = fixtures::g_toy_bidirected();
        let expanded = g.latent_expansion();
        assert_eq!(expanded.bidirected_edges().count(), 0);
        assert_eq!(expanded.node_count(), g.node_count() + 4);
        // Sorted bi-directed edge order: (t,x1), (x1,x2), (x2,x3), (x3,y).
        assert!(expanded.has_directed_edge(&node_id("_u1"), &node_id("t")));
        assert!(expanded.has_directed_edge(&node_id("_u1"), &node_id("x1")));
        assert!(expanded.has_directed_edge(&node_id("_u4"), &node_id("y")));
        for node in expanded.nodes() {
            if node.id.as_str().starts_with("_u") {
                assert!(!node.observed);
                assert_eq!(expanded.children(&node.id).unwrap().len(), 2);
                assert!(expanded.parents(&node.id).unwrap().is_empty());
            }
        }
        // Verdicts among original nodes are preserved.
        for z in [ids(&[]), ids(&["x2"]), ids(&["x2", "x3"])] {
            assert_eq!(
                g.d_separated(&node_id("x1"), &node_id("y"), &z).unwrap(),
                expanded.d_separated(&node_id("x1"), &node_id("y"), &z).unwrap()
            );
        }
    }

    #[test]
    fn backdoor_toy_verdicts() {
        let g = fixtures::g_toy_bidirected();
        assert!(g.satisfies_backdoor(&ids(&["x2"])).unwrap());
        assert!(g.satisfies_backdoor(&ids(&["x1", "x2"])).unwrap());
        for bad in [&["x1"][..], &["x3"], &[], &["x2", "x3"], &["x1", "x2", "x3"]] {
            assert!(!g.satisfies_backdoor(&ids(bad)).unwrap(), "{bad:?}");
        }
        // Conditioning sets must be observed features.
        assert!(matches!(
            g.satisfies_backdoor(&ids(&["t"])),
            Err(GraphError::NotAFeature(_, _))
        ));
    }

    #[test]
    fn backdoor_routes_agree_on_assumption1_fixtures() {
        for g in [
            fixtures::g_toy_bidirected(),
            fixtures::g_toy(),
            fixtures::g_bi(),
            fixtures::g_m_bias(),
            fixtures::g_bd(),
            fixtures::g_toy_x1y(),
        ] {
            let features = g.observed_features();
            for z in crate::search::subsets_by_size(&features, features.len()) {
                assert_eq!(
                    g.satisfies_backdoor(&z).unwrap(),
                    g.satisfies_backdoor_via_gminus(&z).unwrap(),
                    "graph {:?} z {:?}",
                    g.nodes().len(),
                    z
                );
            }
        }
    }

    #[test]
    fn attach_environment_node_guards() {
        let g = fixtures::g_toy_bidirected();
        let g_env = g.attach_environment_node(&node_id("x1"), &ids(&["t"])).unwrap();
        assert_eq!(g_env.environment(), Some(&node_id("e")));
        assert_eq!(g_env.parents(&node_id("e")).unwrap(), vec![node_id("t"), node_id("x1")]);
        assert!(matches!(
            g_env.attach_environment_node(&node_id("x2"), &ids(&[])),
            Err(GraphError::EnvironmentPresent)
        ));
        assert!(matches!(
            g.attach_environment_node(&node_id("x1"), &ids(&["y"])),
            Err(GraphError::InvalidEnvironmentTarget(_))
        ));
        assert!(matches!(
            g.attach_environment_node(&node_id("x1"), &ids(&["x1"])),
            Err(GraphError::InvalidEnvironmentTarget(_))
        ));
    }

    #[test]
    fn topological_order_respects_edges() {
        let g = fixtures::g_toy();
        let order = g.topological_order().unwrap();
        assert_eq!(order.len(), g.node_count());
        let pos: BTreeMap<&NodeId, usize> =
            order.iter().enumerate().map(|(i, id)| (id, i)).collect();
        for (from, to) in g.directed_edges() {
            assert!(pos[from] < pos[to], "{from} before {to}");
        }
        assert_eq!(order[0], node_id("u1"));
    }

    #[test]
    fn with_directed_edge_adds_and_validates() {
        let g = fixtures::g_toy();
        let bigger = g.with_directed_edge(&node_id("x1"), &node_id("y")).unwrap();
        assert!(bigger.has_directed_edge(&node_id("x1"), &node_id("y")));
        assert_eq!(bigger.directed_edges().count(), g.directed_edges().count() + 1);
        assert!(matches!(
            g.with_directed_edge(&node_id("t"), &node_id("y")),
            Err(GraphError::DuplicateEdge(_, _))
        ));
    }

    #[test]
    fn json_round_trip_is_canonical() {
        let g = fixtures::g_bd();
        let json = serde_json::to_string_pretty(&g).unwrap();
        let back: SemiMarkovianGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(g, back);
        assert_eq!(json, serde_json::to_string_pretty(&back).unwrap());
        // Node order and edge order in the output are sorted.
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let names: Vec<&str> = value["nodes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|n| n["id"].as_str().unwrap())
            .collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn json_rejects_unknown_edge_node() {
        let bad = r#"{"nodes":[{"id":"a","role":"feature","observed":true}],
                      "directed":[["a","zz"]],"bidirected":[]}"#;
        assert!(serde_json::from_str::<SemiMarkovianGraph>(bad).is_err());
    }
}
