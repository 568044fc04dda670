//! Set-level evaluation: MMD over graph statistics with a TV kernel, and
//! MMD / precision / recall over embeddings from a fixed random GNN.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::stats::{hard_stats, HardStats, CLUSTERING_BINS, SPECTRUM_BINS};

pub const TV_SIGMA: f64 = 1.0;
pub const RBF_BANDWIDTH_FLOOR: f64 = 1e-6;
pub const DEFAULT_K: usize = 5;

fn normalize(p: &[f64]) -> Result<Vec<f64>> {
    if p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "histogram has negative or non-finite entries".into(),
        ));
    }
    let s: f64 = p.iter().sum();
    if s <= 0.0 {
        return Err(Error::InvalidArgument("all-zero histogram".into()));
    }
    Ok(p.iter().map(|x| x / s).collect())
}

/// Half the L1 distance between two histograms after normalizing each and
/// zero-padding the shorter one.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    let (p, q) = (normalize(p)?, normalize(q)?);
    let n = p.len().max(q.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    Ok(0.5 * (0..n).map(|i| (at(&p, i) - at(&q, i)).abs()).sum::<f64>())
}

/// Biased MMD^2 from a kernel on items, diagonal terms included.
fn mmd2_with<T>(x: &[T], y: &[T], k: impl Fn(&T, &T) -> Result<f64>) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument(
            "MMD needs two non-empty sets".into(),
        ));
    }
    let mean = |a: &[T], b: &[T]| -> Result<f64> {
        let mut s = 0.0;
        for u in a {
            for v in b {
                s += k(u, v)?;
            }
        }
        Ok(s / (a.len() * b.len()) as f64)
    };
    Ok(mean(x, x)? + mean(y, y)? - 2.0 * mean(x, y)?)
}

/// Biased MMD^2 with kernel `exp(-tv(x, y) / (2 sigma^2))`.
pub fn mmd2_tv(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> Result<f64> {
    mmd2_with(x, y, |a, b| {
        Ok((-tv_distance(a, b)? / (2.0 * sigma * sigma)).exp())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatMmd {
    pub degree: f64,
    pub clustering: f64,
    pub spectrum: f64,
    pub diameter: f64,
}

/// Statistic MMDs from precomputed per-graph histograms.
pub fn stat_mmd_from(generated: &[HardStats], test: &[HardStats]) -> Result<StatMmd> {
    let pick = |set: &[HardStats], name: &str| -> Vec<Vec<f64>> {
        set.iter()
            .map(|s| s.get(name).expect("known statistic").to_vec())
            .collect()
    };
    let m = |name| mmd2_tv(&pick(generated, name), &pick(test, name), TV_SIGMA);
    Ok(StatMmd {
        degree: m("degree")?,
        clustering: m("clustering")?,
        spectrum: m("spectrum")?,
        diameter: m("diameter")?,
    })
}

pub fn stat_mmd_report(generated: &[Graph], test: &[Graph]) -> Result<StatMmd> {
    let g: Vec<HardStats> = generated.iter().map(hard_stats).collect();
    let t: Vec<HardStats> = test.iter().map(hard_stats).collect();
    stat_mmd_from(&g, &t)
}

/// Message-passing network with fixed random weights, used only as a
/// feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGnn {
    pub rounds: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Per round: (self weight, neighbor weight), each `d_in x hidden`,
    /// row-major.
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ReferenceGnn {
    pub fn new(rounds: usize, hidden: usize, seed: u64) -> Result<Self> {
        if rounds == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(
                "reference GNN needs rounds, hidden >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(rounds);
        let mut d_in = 1;
        for _ in 0..rounds {
            let scale = 1.0 / (d_in as f64).sqrt();
            let mut draw = || -> Vec<f64> {
                (0..d_in * hidden)
                    .map(|_| {
                        let x: f64 = StandardNormal.sample(&mut rng);
                        scale * x
                    })
                    .collect()
            };
            let w_self = draw();
            let w_nbr = draw();
            layers.push((w_self, w_nbr));
            d_in = hidden;
        }
        Ok(Self {
            rounds,
            hidden,
            seed,
            layers,
        })
    }

    pub fn with_seed(seed: u64) -> Self {
        Self::new(3, 16, seed).expect("valid defaults")
    }

    pub fn dim(&self) -> usize {
        self.rounds * 2 * self.hidden
    }

    /// `h <- relu(h W_self + (sum of neighbor h) W_nbr)` from constant
    /// features; each round contributes its node mean and node sum.
    pub fn embed(&self, g: &Graph) -> Vec<f64> {
        let n = g.n();
        let hd = self.hidden;
        let neighbors: Vec<Vec<usize>> = (0..n).map(|u| g.neighbors(u).collect()).collect();
        let mut h = vec![1.0; n];
        let mut d_in = 1;
        let mut out = Vec::with_capacity(self.dim());
        for (w_self, w_nbr) in &self.layers {
            let mut next = vec![0.0; n * hd];
            let mut agg = vec![0.0; d_in];
            for u in 0..n {
                agg.iter_mut().for_each(|a| *a = 0.0);
                for &v in &neighbors[u] {
                    for (a, x) in agg.iter_mut().zip(&h[v * d_in..(v + 1) * d_in]) {
                        *a += x;
                    }
                }
                let row = &mut next[u * hd..(u + 1) * hd];
                for i in 0..d_in {
                    let (hs, ha) = (h[u * d_in + i], agg[i]);
                    for j in 0..hd {
                        row[j] += hs * w_self[i * hd + j] + ha * w_nbr[i * hd + j];
                    }
                }
                row.iter_mut().for_each(|x| *x = x.max(0.0));
            }
            let mut sum = vec![0.0; hd];
            for u in 0..n {
                for (s, x) in sum.iter_mut().zip(&next[u * hd..(u + 1) * hd]) {
                    *s += x;
                }
            }
            out.extend(sum.iter().map(|s| s / n as f64));
            out.extend_from_slice(&sum);
            h = next;
            d_in = hd;
        }
        out
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_dims(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<()> {
    let d = x.first().or(y.first()).map_or(0, Vec::len);
    if x.iter().chain(y).any(|v| v.len() != d) {
        return Err(Error::InvalidArgument(
            "embeddings have different dimensions".into(),
        ));
    }
    Ok(())
}

/// Median pairwise distance over the pooled set, floored.
pub fn median_bandwidth(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut d = Vec::with_capacity(pooled.len() * pooled.len() / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(dist(pooled[i], pooled[j]));
        }
    }
    if d.is_empty() {
        return RBF_BANDWIDTH_FLOOR;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    med.max(RBF_BANDWIDTH_FLOOR)
}

/// Biased MMD^2 with a Gaussian kernel at the median-heuristic bandwidth.
/// Returns `(mmd2, bandwidth)`.
pub fn mmd_rbf(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<(f64, f64)> {
    check_dims(x, y)?;
    let bw = median_bandwidth(x, y);
    let v = mmd2_with(x, y, |a, b| {
        let d = dist(a, b);
        Ok((-d * d / (2.0 * bw * bw)).exp())
    })?;
    Ok((v, bw))
}

/// Distance from each point to its `k`-th nearest other point in the set.
fn knn_radii(set: &[Vec<f64>], k: usize) -> Vec<f64> {
    set.iter()
        .enumerate()
        .map(|(i, a)| {
            let mut d: Vec<f64> = set
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| dist(a, b))
                .collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

fn coverage(points: &[Vec<f64>], centers: &[Vec<f64>], radii: &[f64]) -> f64 {
    let inside = points
        .iter()
        .filter(|p| centers.iter().zip(radii).any(|(c, &r)| dist(p, c) <= r))
        .count();
    100.0 * inside as f64 / points.len() as f64
}

/// k-NN manifold precision and recall (percent) and their harmonic mean.
pub fn precision_recall_f1(
    generated: &[Vec<f64>],
    test: &[Vec<f64>],
    k: usize,
) -> Result<(f64, f64, f64)> {
    check_dims(generated, test)?;
    if k == 0 || generated.len() <= k || test.len() <= k {
        return Err(Error::InvalidArgument(format!(
            "precision/recall with k = {k} needs more than k graphs per set (got {} and {})",
            generated.len(),
            test.len()
        )));
    }
    let precision = coverage(generated, test, &knn_radii(test, k));
    let recall = coverage(test, generated, &knn_radii(generated, k));
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub gnn_seed: u64,
    pub gnn_rounds: usize,
    pub gnn_hidden: usize,
    pub k: usize,
    pub tv_sigma: f64,
    pub clustering_bins: usize,
    pub spectrum_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gnn_seed: 0,
            gnn_rounds: 3,
            gnn_hidden: 16,
            k: DEFAULT_K,
            tv_sigma: TV_SIGMA,
            clustering_bins: CLUSTERING_BINS,
            spectrum_bins: SPECTRUM_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub degree: f64,
    pub clustering: f64,
    pub spectrum: f64,
    pub diameter: f64,
    pub mmd_rbf: f64,
    pub rbf_bandwidth: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_generated: usize,
    pub n_test: usize,
    /// Seed of the 50/50 split when this is an ideal score.
    pub split_seed: Option<u64>,
    pub config: EvalConfig,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

pub fn evaluate(generated: &[Graph], test: &[Graph], cfg: &EvalConfig) -> Result<MetricReport> {
    if cfg.tv_sigma != TV_SIGMA
        || cfg.clustering_bins != CLUSTERING_BINS
        || cfg.spectrum_bins != SPECTRUM_BINS
    {
        return Err(Error::Config(
            "TV bandwidth and bin counts are fixed".into(),
        ));
    }
    let stat = stat_mmd_report(generated, test)?;
    let gnn = ReferenceGnn::new(cfg.gnn_rounds, cfg.gnn_hidden, cfg.gnn_seed)?;
    let eg: Vec<Vec<f64>> = generated.iter().map(|g| gnn.embed(g)).collect();
    let et: Vec<Vec<f64>> = test.iter().map(|g| gnn.embed(g)).collect();
    let (mmd, bw) = mmd_rbf(&eg, &et)?;
    let (precision, recall, f1) = precision_recall_f1(&eg, &et, cfg.k)?;
    Ok(MetricReport {
        degree: stat.degree,
        clustering: stat.clustering,
        spectrum: stat.spectrum,
        diameter: stat.diameter,
        mmd_rbf: mmd,
        rbf_bandwidth: bw,
        precision,
        recall,
        f1,
        n_generated: generated.len(),
        n_test: test.len(),
        split_seed: None,
        config: cfg.clone(),
    })
}

/// Scores of one random half of `dataset` against the other half.
pub fn ideal_split_score(dataset: &[Graph], cfg: &EvalConfig, seed: u64) -> Result<MetricReport> {
    if dataset.len() < 2 * (cfg.k + 1) {
        return Err(Error::InvalidArgument(format!(
            "ideal score needs at least {} graphs (got {})",
            2 * (cfg.k + 1),
            dataset.len()
        )));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = dataset.len() / 2;
    let a: Vec<Graph> = idx[..half].iter().map(|&i| dataset[i].clone()).collect();
    let b: Vec<Graph> = idx[half..].iter().map(|&i| dataset[i].clone()).collect();
    let mut report = evaluate(&a, &b, cfg)?;
    report.split_seed = Some(seed);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[1.0]).unwrap(), 0.5);
        assert!(tv_distance(&[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn mmd_tv_examples() {
        let x = vec![vec![0.2, 0.8], vec![1.0, 0.0]];
        assert!(mmd2_tv(&x, &x, 1.0).unwrap().abs() <= 1e-12);
        let a = vec![vec![1.0, 0.0]];
        let b = vec![vec![0.6, 0.4]];
        let t = 0.4f64;
        let v = mmd2_tv(&a, &b, 1.0).unwrap();
        assert!((v - (2.0 - 2.0 * (-t / 2.0).exp())).abs() < 1e-12);
        let y = vec![vec![0.5, 0.5]];
        assert_eq!(mmd2_tv(&x, &y, 1.0).unwrap(), mmd2_tv(&y, &x, 1.0).unwrap());
    }

    #[test]
    fn gnn_embedding_shape_and_seed() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (1, 3)]).unwrap();
        let gnn = ReferenceGnn::with_seed(3);
        let e = gnn.embed(&g);
        assert_eq!(e.len(), 96);
        assert_eq!(e, ReferenceGnn::with_seed(3).embed(&g));
        assert_ne!(e, ReferenceGnn::with_seed(4).embed(&g));
        let h = Graph::from_edges(4, &[(3, 2), (2, 0), (2, 1)]).unwrap();
        let eh = gnn.embed(&h);
        assert!(e
            .iter()
            .zip(&eh)
            .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0)));
    }

    #[test]
    fn rbf_axioms() {
        let x = vec![vec![0.0, 1.0], vec![2.0, 0.5], vec![1.0, 1.0]];
        let y = vec![vec![5.0, 1.0], vec![4.0, 0.0]];
        assert!(mmd_rbf(&x, &x).unwrap().0.abs() <= 1e-12);
        assert_eq!(mmd_rbf(&x, &y).unwrap().0, mmd_rbf(&y, &x).unwrap().0);
        let same = vec![vec![1.0]; 3];
        assert_eq!(mmd_rbf(&same, &same).unwrap().1, RBF_BANDWIDTH_FLOOR);
    }

    #[test]
    fn precision_recall_examples() {
        let x: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![i as f64, (i * i) as f64 * 0.1])
            .collect();
        assert_eq!(
            precision_recall_f1(&x, &x, 5).unwrap(),
            (100.0, 100.0, 100.0)
        );
        let far: Vec<Vec<f64>> = x.iter().map(|v| vec![v[0] + 1e6, v[1]]).collect();
        assert_eq!(precision_recall_f1(&x, &far, 5).unwrap(), (0.0, 0.0, 0.0));
        let y: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 1.5, 0.3]).collect();
        let (p1, r1, f1) = precision_recall_f1(&x, &y, 5).unwrap();
        let (p2, r2, f2) = precision_recall_f1(&y, &x, 5).unwrap();
        assert_eq!((p1, r1), (r2, p2));
        assert!((f1 - f2).abs() < 1e-12);
        assert!(precision_recall_f1(&x[..5], &y, 5).is_err());
    }

    #[test]
    fn paths_and_stars_differ_in_degree() {
        let path = Graph::from_edges(10, &(0..9).map(|i| (i, i + 1)).collect::<Vec<_>>()).unwrap();
        let star = Graph::from_edges(10, &(1..10).map(|i| (0, i)).collect::<Vec<_>>()).unwrap();
        let r = stat_mmd_report(&vec![path; 100], &vec![star; 100]).unwrap();
        assert!(r.degree > 0.5, "{r:?}");
    }

    #[test]
    fn report_serializes() {
        let gs: Vec<Graph> = (3..15)
            .map(|n| {
                Graph::from_edges(n, &(0..n - 1).map(|i| (i, i + 1)).collect::<Vec<_>>()).unwrap()
            })
            .collect();
        let r = ideal_split_score(&gs, &EvalConfig::default(), 1).unwrap();
        let json = r.to_json();
        for key in [
            "\"degree\"",
            "\"mmd_rbf\"",
            "\"rbf_bandwidth\"",
            "\"f1\"",
            "\"k\"",
            "\"gnn_seed\"",
        ] {
            assert!(json.contains(key), "{key}");
        }
        assert_eq!(
            r,
            ideal_split_score(&gs, &EvalConfig::default(), 1).unwrap()
        );
    }
}
