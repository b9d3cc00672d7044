//! Path enumeration and path-blocking on the unexpanded graph.
//!
//! This is the slow, literal reading of the separation rules: enumerate every
//! simple path, classify each interior node as collider or non-collider, and
//! block accordingly. A bi-directed step carries an arrowhead at both ends.
//! Exponential in graph size; intended for small graphs and as an independent
//! cross-check of the reachable-set engine.

use std::collections::BTreeSet;

use super::{GraphError, NodeId, SemiMarkovianGraph};

/// Edge orientation relative to walk direction along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// `prev -> next`: arrowhead at the next node.
    Forward,
    /// `prev <- next`: arrowhead at the previous node.
    Backward,
    /// `prev <-> next`: arrowheads at both nodes.
    Bidirected,
}

impl Step {
    fn head_at_prev(self) -> bool {
        matches!(self, Step::Backward | Step::Bidirected)
    }

    fn head_at_next(self) -> bool {
        matches!(self, Step::Forward | Step::Bidirected)
    }
}

/// A simple path: `nodes[i]` connects to `nodes[i+1]` via `steps[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub steps: Vec<Step>,
}

impl Path {
    /// Checks the path against a graph: at least one edge, step/node counts
    /// consistent, no repeated node, every step an existing edge.
    pub fn validate(&self, g: &SemiMarkovianGraph) -> Result<(), GraphError> {
        if self.nodes.len() < 2 || self.steps.len() + 1 != self.nodes.len() {
            return Err(GraphError::MissingEdge(
                self.nodes.first().cloned().unwrap_or_else(|| super::node_id("_")),
                self.nodes.last().cloned().unwrap_or_else(|| super::node_id("_")),
            ));
        }
        let distinct: BTreeSet<&NodeId> = self.nodes.iter().collect();
        if distinct.len() != self.nodes.len() {
            let dup = self
                .nodes
                .iter()
                .find(|id| self.nodes.iter().filter(|o| o == id).count() > 1)
                .expect("duplicate exists");
            return Err(GraphError::DuplicateNode(dup.clone()));
        }
        for (i, step) in self.steps.iter().enumerate() {
            let (a, b) = (&self.nodes[i], &self.nodes[i + 1]);
            let present = match step {
                Step::Forward => g.has_directed_edge(a, b),
                Step::Backward => g.has_directed_edge(b, a),
                Step::Bidirected => g.has_bidirected_edge(a, b),
            };
            if !present {
                return Err(GraphError::MissingEdge(a.clone(), b.clone()));
            }
        }
        Ok(())
    }
}

/// Every simple path between `a` and `b`. Parallel directed and bi-directed
/// edges between the same pair yield distinct paths.
pub fn all_paths(
    g: &SemiMarkovianGraph,
    a: &NodeId,
    b: &NodeId,
) -> Result<Vec<Path>, GraphError> {
    let start = g.idx_of(a).ok_or_else(|| GraphError::NodeNotFound(a.clone()))?;
    let goal = g.idx_of(b).ok_or_else(|| GraphError::NodeNotFound(b.clone()))?;
    if start == goal {
        return Err(GraphError::IdenticalEndpoints(a.clone()));
    }
    let mut out = Vec::new();
    let mut on_path = vec![false; g.node_count()];
    let mut nodes = vec![start];
    let mut steps: Vec<Step> = Vec::new();
    on_path[start] = true;
    fn extend(
        g: &SemiMarkovianGraph,
        goal: usize,
        on_path: &mut Vec<bool>,
        nodes: &mut Vec<usize>,
        steps: &mut Vec<Step>,
        out: &mut Vec<Path>,
    ) {
        let v = *nodes.last().expect("non-empty");
        if v == goal {
            out.push(Path {
                nodes: nodes.iter().map(|&i| g.id_of(i).clone()).collect(),
                steps: steps.clone(),
            });
            return;
        }
        // Neighbour lists are index-sorted, so enumeration order is stable.
        let hops: Vec<(usize, Step)> = g
            .children_idx(v)
            .iter()
            .map(|&c| (c, Step::Forward))
            .chain(g.parents_idx(v).iter().map(|&p| (p, Step::Backward)))
            .chain(g.spouses_idx(v).iter().map(|&s| (s, Step::Bidirected)))
            .collect();
        for (next, step) in hops {
            if on_path[next] {
                continue;
            }
            on_path[next] = true;
            nodes.push(next);
            steps.push(step);
            extend(g, goal, on_path, nodes, steps, out);
            steps.pop();
            nodes.pop();
            on_path[next] = false;
        }
    }
    extend(g, goal, &mut on_path, &mut nodes, &mut steps, &mut out);
    Ok(out)
}

/// Whether `z` blocks the path: some interior non-collider lies in `z`, or
/// some interior collider has neither itself nor any descendant in `z`.
pub fn blocked(
    g: &SemiMarkovianGraph,
    path: &Path,
    z: &BTreeSet<NodeId>,
) -> Result<bool, GraphError> {
    path.validate(g)?;
    for i in 1..path.nodes.len() - 1 {
        let v = &path.nodes[i];
        let collider = path.steps[i - 1].head_at_next() && path.steps[i].head_at_prev();
        if collider {
            let mut opened = z.contains(v);
            if !opened {
                let desc = g.descendants(v)?;
                opened = z.iter().any(|id| desc.contains(id));
            }
            if !opened {
                return Ok(true);
            }
        } else if z.contains(v) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// d-separation by exhaustive path enumeration on the unexpanded graph.
pub fn d_separated_naive(
    g: &SemiMarkovianGraph,
    a: &NodeId,
    b: &NodeId,
    z: &BTreeSet<NodeId>,
) -> Result<bool, GraphError> {
    if !g.is_acyclic() {
        return Err(GraphError::CyclicGraph);
    }
    if z.contains(a) || z.contains(b) {
        let id = if z.contains(a) { a } else { b };
        return Err(GraphError::EndpointInConditioningSet(id.clone()));
    }
    for path in all_paths(g, a, b)? {
        if !blocked(g, &path, z)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Back-door criterion by path enumeration: no conditioning node descends
/// from the treatment, and every treatment-outcome path whose first edge
/// carries an arrowhead at the treatment is blocked.
pub fn satisfies_backdoor_naive(
    g: &SemiMarkovianGraph,
    z: &BTreeSet<NodeId>,
) -> Result<bool, GraphError> {
    if !g.is_acyclic() {
        return Err(GraphError::CyclicGraph);
    }
    let t = g.treatment()?.clone();
    let y = g.outcome()?.clone();
    let desc = g.descendants(&t)?;
    if z.iter().any(|id| desc.contains(id)) {
        return Ok(false);
    }
    for path in all_paths(g, &t, &y)? {
        if path.steps[0].head_at_prev() && !blocked(g, &path, z)? {
            return Ok(false);
        }
    }
    Ok(true)
}
