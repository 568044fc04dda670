//! Canonical node ordering and component extraction.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Breadth-first node order.
///
/// Components are visited largest first (ties: lowest node index). Each
/// component starts at its maximum-degree node (ties: lowest index) and
/// expands neighbors in ascending index order.
pub fn bfs_order(g: &Graph) -> Vec<usize> {
    let mut comps = g.components();
    // stable sort keeps the lowest-index component first among equals
    comps.sort_by(|a, b| b.len().cmp(&a.len()));

    let mut seen = vec![false; g.n()];
    let mut order = Vec::with_capacity(g.n());
    for comp in comps {
        let start = comp
            .iter()
            .copied()
            .max_by(|&a, &b| g.degree(a).cmp(&g.degree(b)).then(b.cmp(&a)))
            .expect("components are non-empty");
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for v in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    order
}

/// Reorder nodes so that new node `i` is old node `perm[i]`.
pub fn relabel(g: &Graph, perm: &[usize]) -> Result<Graph> {
    let n = g.n();
    let mut hit = vec![false; n];
    if perm.len() != n {
        return Err(Error::InvalidArgument(format!(
            "permutation has length {}, graph has {n} nodes",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut hit[p], true) {
            return Err(Error::InvalidArgument(format!(
                "{perm:?} is not a permutation"
            )));
        }
    }
    g.induced(perm)
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Relabel by [`bfs_order`].
pub fn canonicalize(g: &Graph) -> Graph {
    relabel(g, &bfs_order(g)).expect("bfs order is a permutation")
}

/// Node-induced subgraph on the largest connected component; ties go to the
/// component holding the lowest node index. An edgeless graph yields a single
/// node.
pub fn max_connected_component(g: &Graph) -> Graph {
    let comps = g.components();
    let mut best = &comps[0];
    for c in &comps[1..] {
        if c.len() > best.len() {
            best = c;
        }
    }
    g.induced(best).expect("component is non-empty")
}
