//! Synthetic graph families and random perturbations.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

const LOBSTER_MAX_ATTEMPTS: usize = 1000;

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid needs rows, cols >= 2 (got {rows} x {cols})"
        )));
    }
    Ok(())
}

/// Square lattice with 4-neighborhoods; node `r * cols + c`.
pub fn grid(rows: usize, cols: usize) -> Result<Graph> {
    check_dims(rows, cols)?;
    let mut g = Graph::empty(rows * cols)?;
    for r in 0..rows {
        for c in 0..cols {
            let u = r * cols + c;
            if c + 1 < cols {
                g.add_edge(u, u + 1)?;
            }
            if r + 1 < rows {
                g.add_edge(u, u + cols)?;
            }
        }
    }
    Ok(g)
}

/// Square lattice with one diagonal per cell, running from the lower-left
/// corner to the upper-right corner (rows grow downwards).
pub fn triangle_grid(rows: usize, cols: usize) -> Result<Graph> {
    let mut g = grid(rows, cols)?;
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let lower_left = (r + 1) * cols + c;
            let upper_right = r * cols + c + 1;
            g.add_edge(lower_left, upper_right)?;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LobsterParams {
    pub backbone_n: usize,
    pub p1: f64,
    pub p2: f64,
    pub min_nodes: usize,
    pub max_nodes: usize,
}

impl Default for LobsterParams {
    fn default() -> Self {
        Self {
            backbone_n: 40,
            p1: 0.5,
            p2: 0.5,
            min_nodes: 10,
            max_nodes: 100,
        }
    }
}

/// Backbone path; each backbone node grows a leaf with probability `p1` and
/// each such leaf grows one more with probability `p2`. Redrawn until the
/// node count falls inside `[min_nodes, max_nodes]`.
pub fn lobster<R: Rng + ?Sized>(params: &LobsterParams, rng: &mut R) -> Result<Graph> {
    let LobsterParams {
        backbone_n,
        p1,
        p2,
        min_nodes,
        max_nodes,
    } = *params;
    if backbone_n < 2 || !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) {
        return Err(Error::InvalidArgument(format!(
            "lobster needs backbone_n >= 2 and p1, p2 in [0, 1] (got {backbone_n}, {p1}, {p2})"
        )));
    }
    for _ in 0..LOBSTER_MAX_ATTEMPTS {
        let mut edges: Vec<(usize, usize)> = (1..backbone_n).map(|i| (i - 1, i)).collect();
        let mut next = backbone_n;
        for b in 0..backbone_n {
            if rng.random_bool(p1) {
                let leaf = next;
                next += 1;
                edges.push((b, leaf));
                if rng.random_bool(p2) {
                    edges.push((leaf, next));
                    next += 1;
                }
            }
        }
        if (min_nodes..=max_nodes).contains(&next) {
            return Graph::from_edges(next, &edges);
        }
    }
    Err(Error::RejectionLimit(LOBSTER_MAX_ATTEMPTS))
}

/// G(n, p) random graph.
pub fn erdos_renyi<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Graph> {
    let mut g = Graph::empty(n)?;
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random_bool(p) {
                g.add_edge(u, v)?;
            }
        }
    }
    Ok(g)
}

/// Random recursive tree: node `i` attaches to a uniform earlier node.
pub fn random_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Graph> {
    let mut g = Graph::empty(n)?;
    for v in 1..n {
        let u = rng.random_range(0..v);
        g.add_edge(u, v)?;
    }
    Ok(g)
}

/// Toggle `round(rate * |E|)` distinct node pairs chosen uniformly among all
/// pairs, so `rate` is the perturbation size relative to the edge count.
pub fn flip_edges<R: Rng + ?Sized>(g: &Graph, rate: f64, rng: &mut R) -> Graph {
    let n = g.n();
    let pairs = n * (n - 1) / 2;
    let k = ((rate.max(0.0) * g.num_edges() as f64).round() as usize).min(pairs);
    let mut out = g.clone();
    if k == 0 {
        return out;
    }
    let mut index = Vec::with_capacity(pairs);
    for u in 0..n {
        for v in (u + 1)..n {
            index.push((u, v));
        }
    }
    for i in sample(rng, pairs, k) {
        let (u, v) = index[i];
        out.toggle_edge(u, v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_counts() {
        let g = grid(2, 2).unwrap();
        assert_eq!((g.n(), g.num_edges()), (4, 4));
        let g = grid(10, 10).unwrap();
        assert_eq!((g.n(), g.num_edges()), (100, 180));
        let g = grid(2, 3).unwrap();
        assert_eq!((g.n(), g.num_edges()), (6, 7));
        assert!(grid(1, 5).is_err());
    }

    #[test]
    fn triangle_grid_counts() {
        let g = triangle_grid(2, 2).unwrap();
        assert_eq!((g.n(), g.num_edges()), (4, 5));
        let g = triangle_grid(10, 10).unwrap();
        assert_eq!((g.n(), g.num_edges()), (100, 261));
    }

    #[test]
    fn lobster_without_leaves_is_a_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = LobsterParams {
            backbone_n: 12,
            p1: 0.0,
            p2: 0.0,
            ..Default::default()
        };
        let g = lobster(&params, &mut rng).unwrap();
        assert_eq!(g.n(), 12);
        assert_eq!(g.num_edges(), 11);
        assert!(g.degrees().iter().all(|&d| d <= 2));
    }

    fn strip_leaves(g: &Graph) -> Graph {
        let keep: Vec<usize> = (0..g.n()).filter(|&u| g.degree(u) > 1).collect();
        g.induced(&keep).unwrap()
    }

    #[test]
    fn lobsters_are_trees_that_reduce_to_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let g = lobster(&LobsterParams::default(), &mut rng).unwrap();
            assert!((10..=100).contains(&g.n()));
            assert_eq!(g.num_edges(), g.n() - 1);
            assert!(g.is_connected());
            let core = strip_leaves(&strip_leaves(&g));
            assert!(core.is_connected());
            assert!(core.degrees().iter().all(|&d| d <= 2));
            assert_eq!(core.num_edges(), core.n() - 1);
        }
    }

    #[test]
    fn lobster_rejection_gives_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = LobsterParams {
            backbone_n: 5,
            min_nodes: 50,
            ..Default::default()
        };
        assert!(matches!(
            lobster(&params, &mut rng),
            Err(Error::RejectionLimit(1000))
        ));
    }

    #[test]
    fn flip_rate_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = grid(3, 3).unwrap();
        assert_eq!(flip_edges(&g, 0.0, &mut rng), g);
        let f = flip_edges(&g, 0.25, &mut rng);
        let changed = (0..9)
            .flat_map(|u| (u + 1..9).map(move |v| (u, v)))
            .filter(|&(u, v)| f.has_edge(u, v) != g.has_edge(u, v))
            .count();
        assert_eq!(changed, 3);
    }
}
