//! Simple undirected graphs with node features, and their padded form.

use autodiff::Tensor;

use crate::error::{Error, Result};

/// Undirected simple graph: symmetric 0/1 adjacency with zero diagonal and an
/// `n x d` node-feature matrix.
#[derive(Clone, PartialEq)]
pub struct Graph {
    n: usize,
    adj: Vec<bool>,
    features: Tensor,
}

impl std::fmt::Debug for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph")
            .field("n", &self.n)
            .field("edges", &self.edges())
            .finish()
    }
}

impl Graph {
    /// `n` isolated nodes with the default all-ones feature column.
    pub fn empty(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph(
                "a graph needs at least one node".into(),
            ));
        }
        Ok(Self {
            n,
            adj: vec![false; n * n],
            features: Tensor::ones(&[n, 1]),
        })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n)?;
        for &(u, v) in edges {
            g.add_edge(u, v)?;
        }
        Ok(g)
    }

    /// Build from a dense 0/1 matrix, validating symmetry and the diagonal.
    pub fn from_adjacency(adj: &Tensor) -> Result<Self> {
        let (r, c) = adj.dims2("from_adjacency")?;
        if r != c {
            return Err(Error::InvalidGraph(format!("adjacency is {r}x{c}")));
        }
        let mut g = Self::empty(r)?;
        for i in 0..r {
            for j in 0..r {
                let v = adj.at(i, j);
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidGraph(format!(
                        "entry ({i},{j}) = {v} is not 0/1"
                    )));
                }
                if v != adj.at(j, i) {
                    return Err(Error::InvalidGraph(format!("asymmetric at ({i},{j})")));
                }
                if i == j && v != 0.0 {
                    return Err(Error::InvalidGraph(format!("self-loop at {i}")));
                }
                g.adj[i * r + j] = v == 1.0;
            }
        }
        Ok(g)
    }

    pub fn with_features(mut self, features: Tensor) -> Result<Self> {
        let (rows, d) = features.dims2("features")?;
        if rows != self.n || d == 0 {
            return Err(Error::InvalidGraph(format!(
                "feature matrix is {rows}x{d}, graph has {} nodes",
                self.n
            )));
        }
        self.features = features;
        Ok(self)
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<()> {
        if u >= self.n || v >= self.n {
            return Err(Error::InvalidGraph(format!(
                "edge ({u},{v}) out of range for {} nodes",
                self.n
            )));
        }
        if u == v {
            return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
        }
        self.adj[u * self.n + v] = true;
        self.adj[v * self.n + u] = true;
        Ok(())
    }

    pub(crate) fn toggle_edge(&mut self, u: usize, v: usize) {
        let e = !self.adj[u * self.n + v];
        self.adj[u * self.n + v] = e;
        self.adj[v * self.n + u] = e;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u * self.n + v]
    }

    /// Neighbors of `u` in ascending index order.
    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.adj[u * self.n..(u + 1) * self.n];
        row.iter().enumerate().filter(|(_, &e)| e).map(|(v, _)| v)
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors(u).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|u| self.degree(u)).collect()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().filter(|&&e| e).count() / 2
    }

    /// Edge list with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            for v in (u + 1)..self.n {
                if self.has_edge(u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn adjacency(&self) -> Tensor {
        let data = self
            .adj
            .iter()
            .map(|&e| if e { 1.0 } else { 0.0 })
            .collect();
        Tensor::matrix(self.n, self.n, data).expect("square adjacency")
    }

    /// Connected components as sorted node lists, in order of their lowest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut out = Vec::new();
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![s];
            let mut head = 0;
            while head < comp.len() {
                let u = comp[head];
                head += 1;
                for v in self.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Subgraph induced by `nodes`, keeping their given order.
    pub fn induced(&self, nodes: &[usize]) -> Result<Self> {
        let m = nodes.len();
        let mut g = Self::empty(m)?;
        for (a, &u) in nodes.iter().enumerate() {
            for (b, &v) in nodes.iter().enumerate() {
                g.adj[a * m + b] = self.has_edge(u, v);
            }
        }
        let d = self.features.cols();
        let mut feats = Vec::with_capacity(m * d);
        for &u in nodes {
            feats.extend_from_slice(&self.features.data()[u * d..(u + 1) * d]);
        }
        g.features = Tensor::matrix(m, d, feats)?;
        Ok(g)
    }
}

/// A graph zero-padded to a fixed node budget. Real nodes occupy the leading
/// `n` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedGraph {
    pub adjacency: Tensor,
    pub mask: Vec<f64>,
    pub features: Tensor,
    pub n: usize,
}

impl PaddedGraph {
    pub fn n_max(&self) -> usize {
        self.mask.len()
    }

    /// The real `n x n` adjacency block.
    pub fn real_adjacency(&self) -> Tensor {
        let n_max = self.n_max();
        let mut out = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            out.extend_from_slice(&self.adjacency.data()[i * n_max..i * n_max + self.n]);
        }
        Tensor::matrix(self.n, self.n, out).expect("square block")
    }

    /// The real `n x d` feature rows.
    pub fn real_features(&self) -> Tensor {
        let d = self.features.cols();
        Tensor::matrix(self.n, d, self.features.data()[..self.n * d].to_vec())
            .expect("feature rows")
    }
}

pub fn pad_to(g: &Graph, n_max: usize) -> Result<PaddedGraph> {
    if g.n() > n_max {
        return Err(Error::InvalidGraph(format!(
            "graph has {} nodes, more than n_max = {n_max}",
            g.n()
        )));
    }
    let mut adjacency = Tensor::zeros(&[n_max, n_max]);
    for (u, v) in g.edges() {
        adjacency.set(u, v, 1.0);
        adjacency.set(v, u, 1.0);
    }
    let d = g.features().cols();
    let mut features = Tensor::zeros(&[n_max, d]);
    features.data_mut()[..g.n() * d].copy_from_slice(g.features().data());
    let mask = (0..n_max)
        .map(|i| if i < g.n() { 1.0 } else { 0.0 })
        .collect();
    Ok(PaddedGraph {
        adjacency,
        mask,
        features,
        n: g.n(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn self_loops_and_out_of_range_rejected() {
        assert!(Graph::from_edges(3, &[(1, 1)]).is_err());
        assert!(Graph::from_edges(3, &[(0, 3)]).is_err());
        assert!(Graph::empty(0).is_err());
    }

    #[test]
    fn pad_masks_leading_nodes() {
        let p = pad_to(&path3(), 5).unwrap();
        assert_eq!(p.mask, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        for i in 0..5 {
            for j in 0..5 {
                if i >= 3 || j >= 3 {
                    assert_eq!(p.adjacency.at(i, j), 0.0);
                }
            }
        }
        assert_eq!(p.real_adjacency(), path3().adjacency());
    }

    #[test]
    fn pad_exact_size_is_all_ones() {
        let p = pad_to(&path3(), 3).unwrap();
        assert_eq!(p.mask, vec![1.0; 3]);
        assert!(pad_to(&path3(), 2).is_err());
    }

    #[test]
    fn from_adjacency_validates() {
        let mut a = Tensor::zeros(&[2, 2]);
        a.set(0, 1, 1.0);
        assert!(Graph::from_adjacency(&a).is_err());
        a.set(1, 0, 1.0);
        assert_eq!(Graph::from_adjacency(&a).unwrap().num_edges(), 1);
    }

    #[test]
    fn feature_rows_must_match() {
        assert!(path3().with_features(Tensor::ones(&[2, 4])).is_err());
        assert!(path3().with_features(Tensor::ones(&[3, 4])).is_ok());
    }
}
