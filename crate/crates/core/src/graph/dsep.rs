//! Reachable-set d-separation on a DAG given as parent/child adjacency lists.
//!
//! Trails are walked with a direction tag: `up` means the previous edge was
//! traversed against its arrow (no arrowhead at the current node), `down`
//! means with the arrow (arrowhead at the current node). A node passes a
//! non-collider step only while unconditioned; a collider step (arrowhead in,
//! arrowhead out) only when the node is conditioned on or has a conditioned
//! descendant, i.e. lies in the ancestor closure of the conditioning set.

pub(crate) fn is_acyclic(children: &[Vec<usize>]) -> bool {
    let n = children.len();
    let mut indeg = vec![0usize; n];
    for adj in children {
        for &c in adj {
            indeg[c] += 1;
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = queue.pop() {
        seen += 1;
        for &c in &children[i] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                queue.push(c);
            }
        }
    }
    seen == n
}

/// Conditioning set plus all its ancestors.
fn ancestor_closure(parents: &[Vec<usize>], in_z: &[bool]) -> Vec<bool> {
    let mut closed = in_z.to_vec();
    let mut stack: Vec<usize> = (0..in_z.len()).filter(|&i| in_z[i]).collect();
    while let Some(i) = stack.pop() {
        for &p in &parents[i] {
            if !closed[p] {
                closed[p] = true;
                stack.push(p);
            }
        }
    }
    closed
}

/// Nodes connected to `start` by at least one trail unblocked given `in_z`.
///
/// The start node itself is marked reachable. `parents`/`children` must
/// describe the same acyclic edge set from both ends.
pub(crate) fn reachable(
    parents: &[Vec<usize>],
    children: &[Vec<usize>],
    start: usize,
    in_z: &[bool],
) -> Vec<bool> {
    let n = parents.len();
    let anc_z = ancestor_closure(parents, in_z);
    let mut visited_up = vec![false; n];
    let mut visited_down = vec![false; n];
    let mut reached = vec![false; n];
    reached[start] = true;
    // (node, arrived_down)
    let mut stack: Vec<(usize, bool)> = vec![(start, false)];
    visited_up[start] = true;
    while let Some((v, down)) = stack.pop() {
        if down {
            // Arrowhead at v: pass through to children as a chain node, or
            // bounce back toward parents as an opened collider.
            if !in_z[v] {
                for &c in &children[v] {
                    if !visited_down[c] {
                        visited_down[c] = true;
                        reached[c] = true;
                        stack.push((c, true));
                    }
                }
            }
            if anc_z[v] {
                for &p in &parents[v] {
                    if !visited_up[p] {
                        visited_up[p] = true;
                        reached[p] = true;
                        stack.push((p, false));
                    }
                }
            }
        } else if !in_z[v] {
            // No arrowhead at v: any continuation keeps v a non-collider.
            for &p in &parents[v] {
                if !visited_up[p] {
                    visited_up[p] = true;
                    reached[p] = true;
                    stack.push((p, false));
                }
            }
            for &c in &children[v] {
                if !visited_down[c] {
                    visited_down[c] = true;
                    reached[c] = true;
                    stack.push((c, true));
                }
            }
        }
    }
    reached
}
