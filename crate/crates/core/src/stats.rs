//! Exact statistics of hard graphs, used by the evaluation metrics and as
//! oracles for the differentiable descriptors.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::graph::Graph;

pub const CLUSTERING_BINS: usize = 100;
pub const SPECTRUM_BINS: usize = 200;

/// Histograms of one graph, each normalized to sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct HardStats {
    /// Index = degree.
    pub degree_histogram: Vec<f64>,
    /// Local clustering coefficients, 100 bins on [0, 1].
    pub clustering: Vec<f64>,
    /// Normalized-Laplacian eigenvalues, 200 bins on [0, 2].
    pub spectrum: Vec<f64>,
    /// One-hot over `0..n`.
    pub diameter: Vec<f64>,
}

impl HardStats {
    pub const NAMES: [&'static str; 4] = ["degree", "clustering", "spectrum", "diameter"];

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        match name {
            "degree" => Some(&self.degree_histogram),
            "clustering" => Some(&self.clustering),
            "spectrum" => Some(&self.spectrum),
            "diameter" => Some(&self.diameter),
            _ => None,
        }
    }
}

pub fn hard_stats(g: &Graph) -> HardStats {
    let n = g.n();
    let degrees = g.degrees();
    let mut degree_histogram = vec![0.0; degrees.iter().max().copied().unwrap_or(0) + 1];
    for &d in &degrees {
        degree_histogram[d] += 1.0;
    }
    let mut diameter = vec![0.0; n];
    diameter[self::diameter(g)] = 1.0;
    HardStats {
        degree_histogram: normalized(degree_histogram),
        clustering: normalized(bin(&clustering_coefficients(g), CLUSTERING_BINS, 1.0)),
        spectrum: normalized(bin(&laplacian_spectrum(g), SPECTRUM_BINS, 2.0)),
        diameter,
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    v
}

/// Positions this close to a bin edge (in bin widths) count as on the edge.
/// Eigenvalues such as 1.0 sit exactly on an edge and come back from the
/// solver with label-dependent rounding.
const EDGE_SNAP: f64 = 1e-8;

/// Equal-width bins on `[0, hi]`; the right edge belongs to the last bin and
/// values outside the range are clamped in.
fn bin(values: &[f64], bins: usize, hi: f64) -> Vec<f64> {
    let mut out = vec![0.0; bins];
    for &v in values {
        let x = (v / hi) * bins as f64;
        let k = if (x - x.round()).abs() < EDGE_SNAP {
            x.round()
        } else {
            x.floor()
        };
        let k = if k.is_nan() {
            0
        } else {
            (k.max(0.0) as usize).min(bins - 1)
        };
        out[k] += 1.0;
    }
    out
}

/// Fraction of closed neighbor pairs per node; 0 for degree below 2.
pub fn clustering_coefficients(g: &Graph) -> Vec<f64> {
    (0..g.n())
        .map(|u| {
            let nb: Vec<usize> = g.neighbors(u).collect();
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let mut links = 0usize;
            for (i, &a) in nb.iter().enumerate() {
                for &b in &nb[i + 1..] {
                    links += g.has_edge(a, b) as usize;
                }
            }
            2.0 * links as f64 / (k * (k - 1)) as f64
        })
        .collect()
}

/// Eigenvalues of `I - D^-1/2 A D^-1/2`, ascending. Isolated nodes get a
/// zero row, as in the usual convention.
pub fn laplacian_spectrum(g: &Graph) -> Vec<f64> {
    let n = g.n();
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .iter()
        .map(|&d| if d > 0 { 1.0 / (d as f64).sqrt() } else { 0.0 })
        .collect();
    let m = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            if inv_sqrt[i] > 0.0 {
                1.0
            } else {
                0.0
            }
        } else if g.has_edge(i, j) {
            -inv_sqrt[i] * inv_sqrt[j]
        } else {
            0.0
        }
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Longest shortest path, over pairs in the same component.
pub fn diameter(g: &Graph) -> usize {
    let n = g.n();
    let mut best = 0;
    let mut dist = vec![usize::MAX; n];
    for s in 0..n {
        dist.fill(usize::MAX);
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            best = best.max(dist[u]);
            for v in g.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    best
}

/// Triangle count by enumerating every node triple.
pub fn brute_force_triangles(g: &Graph) -> usize {
    let n = g.n();
    let mut count = 0;
    for a in 0..n {
        for b in a + 1..n {
            if !g.has_edge(a, b) {
                continue;
            }
            for c in b + 1..n {
                count += (g.has_edge(a, c) && g.has_edge(b, c)) as usize;
            }
        }
    }
    count
}
