//! Reference graphs used across the test suites and shipped as JSON fixtures.

use crate::graph::{node_id, Node, NodeId, NodeRole, SemiMarkovianGraph};

fn feature(id: &str) -> Node {
    Node::new(node_id(id), NodeRole::Feature, true)
}

fn hidden(id: &str) -> Node {
    Node::new(node_id(id), NodeRole::Feature, false)
}

fn treatment() -> Node {
    Node::new(node_id("t"), NodeRole::Treatment, true)
}

fn outcome() -> Node {
    Node::new(node_id("y"), NodeRole::Outcome, true)
}

fn edges(pairs: &[(&str, &str)]) -> Vec<(NodeId, NodeId)> {
    pairs.iter().map(|(a, b)| (node_id(a), node_id(b))).collect()
}

/// Five-node toy graph in bi-directed form: three observed features, one of
/// which (`x1`) is a parent of the treatment and shares a hidden cause with it.
///
/// Directed: x1->x2, x1->t, t->y, x2->y.
/// Bi-directed: x1<->x2, x1<->t, x2<->x3, x3<->y.
pub fn g_toy_bidirected() -> SemiMarkovianGraph {
    SemiMarkovianGraph::new(
        vec![feature("x1"), feature("x2"), feature("x3"), treatment(), outcome()],
        &edges(&[("x1", "x2"), ("x1", "t"), ("t", "y"), ("x2", "y")]),
        &edges(&[("x1", "x2"), ("x1", "t"), ("x2", "x3"), ("x3", "y")]),
    )
    .expect("well-formed fixture")
}

/// The toy graph with hidden causes written out: u1 confounds (x1, t),
/// u2 confounds (x1, x2), u3 confounds (x2, x3), u4 confounds (x3, y).
/// Equals [`g_toy_bidirected`] after latent expansion, up to hidden ids.
pub fn g_toy() -> SemiMarkovianGraph {
    SemiMarkovianGraph::new(
        vec![
            feature("x1"),
            feature("x2"),
            feature("x3"),
            hidden("u1"),
            hidden("u2"),
            hidden("u3"),
            hidden("u4"),
            treatment(),
            outcome(),
        ],
        &edges(&[
            ("u1", "x1"),
            ("u1", "t"),
            ("u2", "x1"),
            ("u2", "x2"),
            ("u3", "x2"),
            ("u3", "x3"),
            ("u4", "x3"),
            ("u4", "y"),
            ("x1", "x2"),
            ("x1", "t"),
            ("x2", "y"),
            ("t", "y"),
        ]),
        &[],
    )
    .expect("well-formed fixture")
}

/// Toy graph without the direct x1->t edge: x1 is only a spouse of the
/// treatment (shares the hidden cause u1), never a parent.
pub fn g_bi() -> SemiMarkovianGraph {
    SemiMarkovianGraph::new(
        vec![feature("x1"), feature("x2"), feature("x3"), treatment(), outcome()],
        &edges(&[("x1", "x2"), ("t", "y"), ("x2", "y")]),
        &edges(&[("x1", "x2"), ("x1", "t"), ("x2", "x3"), ("x3", "y")]),
    )
    .expect("well-formed fixture")
}

/// M-shaped graph: one observed feature x1 that shares one hidden cause with
/// the treatment and another with the outcome. The empty set is a valid
/// adjustment set; {x1} is not (conditioning opens the collider at x1).
pub fn g_m_bias() -> SemiMarkovianGraph {
    SemiMarkovianGraph::new(
        vec![feature("x1"), treatment(), outcome()],
        &edges(&[("t", "y")]),
        &edges(&[("x1", "t"), ("x1", "y")]),
    )
    .expect("well-formed fixture")
}

/// Four-feature graph whose treatment has two observed parents {x1, x2} and
/// no hidden parent; exactly seven subsets of {x1..x4} satisfy the back-door
/// criterion.
pub fn g_bd() -> SemiMarkovianGraph {
    SemiMarkovianGraph::new(
        vec![
            feature("x1"),
            feature("x2"),
            feature("x3"),
            feature("x4"),
            treatment(),
            outcome(),
        ],
        &edges(&[
            ("x2", "x3"),
            ("t", "y"),
            ("x3", "y"),
            ("x2", "t"),
            ("x1", "t"),
            ("x1", "x3"),
        ]),
        &edges(&[("x2", "x3"), ("x3", "x4"), ("y", "x4")]),
    )
    .expect("well-formed fixture")
}

/// [`g_toy_bidirected`] plus a direct x1->y edge; with it, no subset of the
/// observed features excluding x1 is a valid adjustment set.
pub fn g_toy_x1y() -> SemiMarkovianGraph {
    SemiMarkovianGraph::new(
        vec![feature("x1"), feature("x2"), feature("x3"), treatment(), outcome()],
        &edges(&[("x1", "x2"), ("x1", "t"), ("t", "y"), ("x2", "y"), ("x1", "y")]),
        &edges(&[("x1", "x2"), ("x1", "t"), ("x2", "x3"), ("x3", "y")]),
    )
    .expect("well-formed fixture")
}
