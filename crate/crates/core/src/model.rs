//! GraphVAE: GCN encoder with a sum readout, and a fully connected decoder
//! that emits the strict upper triangle of an `n_max x n_max` edge
//! probability matrix.
//!
//! Parameter names:
//!
//! | name | shape |
//! |---|---|
//! | `encoder.gcn.<i>.weight`, `.bias` | `d_in x d_out`, `1 x d_out` |
//! | `encoder.readout.weight`, `.bias` | `gcn_last x readout_dim` |
//! | `encoder.mu.weight`, `.bias` | `readout_dim x latent_dim` |
//! | `encoder.logvar.weight`, `.bias` | `readout_dim x latent_dim` |
//! | `decoder.fc.<i>.weight`, `.bias` | `d_in x d_out` |
//! | `decoder.norm.<i>.gain`, `.bias` | `1 x d_out` |
//! | `decoder.head.weight`, `.bias` | `dec_last x n_max(n_max-1)/2` |

use autodiff::{BoundParams, ParamSet, Tape, Tensor, Var, LAYER_NORM_EPS, LEAKY_SLOPE};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, PaddedGraph};
use crate::ordering::max_connected_component;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_max: usize,
    pub feature_dim: usize,
    pub gcn_dims: Vec<usize>,
    pub readout_dim: usize,
    pub latent_dim: usize,
    pub decoder_dims: Vec<usize>,
    pub leaky_slope: f64,
}

impl ModelConfig {
    /// Layer widths from the paper's architecture, latent size 128.
    pub fn paper(n_max: usize) -> Self {
        Self {
            n_max,
            feature_dim: 1,
            gcn_dims: vec![256, 1026],
            readout_dim: 1024,
            latent_dim: 128,
            decoder_dims: vec![1024, 1024, 1024],
            leaky_slope: LEAKY_SLOPE,
        }
    }

    /// Every width divided by `factor` (rounded up).
    pub fn scaled(&self, factor: usize) -> Self {
        let s = |d: usize| d.div_ceil(factor.max(1));
        Self {
            gcn_dims: self.gcn_dims.iter().map(|&d| s(d)).collect(),
            readout_dim: s(self.readout_dim),
            decoder_dims: self.decoder_dims.iter().map(|&d| s(d)).collect(),
            ..self.clone()
        }
    }

    pub fn num_logits(&self) -> usize {
        self.n_max * self.n_max.saturating_sub(1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.n_max,
            self.feature_dim,
            self.readout_dim,
            self.latent_dim,
        ];
        if self.n_max < 2
            || dims.contains(&0)
            || self.gcn_dims.is_empty()
            || self.gcn_dims.contains(&0)
            || self.decoder_dims.is_empty()
            || self.decoder_dims.contains(&0)
        {
            return Err(Error::Config(format!("invalid model dimensions {self:?}")));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config(format!(
                "invalid leaky slope {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Recover the architecture from parameter shapes. The leaky slope is not
    /// stored in the weights and is taken as given.
    pub fn infer(params: &ParamSet, leaky_slope: f64) -> Result<Self> {
        let shape =
            |name: &str| -> Result<(usize, usize)> { Ok(params.require(name)?.dims2("infer")?) };
        let count = |prefix: &str| {
            (0..)
                .take_while(|i| params.get(&format!("{prefix}.{i}.weight")).is_some())
                .count()
        };
        let gcn: Vec<(usize, usize)> = (0..count("encoder.gcn"))
            .map(|i| shape(&format!("encoder.gcn.{i}.weight")))
            .collect::<Result<_>>()?;
        let dec: Vec<(usize, usize)> = (0..count("decoder.fc"))
            .map(|i| shape(&format!("decoder.fc.{i}.weight")))
            .collect::<Result<_>>()?;
        let (readout_in, readout_dim) = shape("encoder.readout.weight")?;
        let (_, latent_dim) = shape("encoder.mu.weight")?;
        let (_, t) = shape("decoder.head.weight")?;
        let n_max = (1..=4096usize)
            .find(|n| n * (n - 1) / 2 == t)
            .ok_or_else(|| Error::Config(format!("head width {t} is not n(n-1)/2")))?;
        let first = gcn
            .first()
            .ok_or_else(|| Error::Config("no encoder.gcn layers".into()))?;
        let cfg = Self {
            n_max,
            feature_dim: first.0,
            gcn_dims: gcn.iter().map(|s| s.1).collect(),
            readout_dim,
            latent_dim,
            decoder_dims: dec.iter().map(|s| s.1).collect(),
            leaky_slope,
        };
        if readout_in != *cfg.gcn_dims.last().expect("non-empty") {
            return Err(Error::Config(
                "readout width does not match the last GCN layer".into(),
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("weight shape")
}

fn linear<R: Rng + ?Sized>(p: &mut ParamSet, name: &str, rows: usize, cols: usize, rng: &mut R) {
    p.insert(format!("{name}.weight"), glorot(rows, cols, rng));
    p.insert(format!("{name}.bias"), Tensor::zeros(&[1, cols]));
}

/// Glorot-uniform weights, zero biases, unit layer-norm gains.
pub fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamSet> {
    cfg.validate()?;
    let mut p = ParamSet::new();
    let mut d = cfg.feature_dim;
    for (i, &w) in cfg.gcn_dims.iter().enumerate() {
        linear(&mut p, &format!("encoder.gcn.{i}"), d, w, rng);
        d = w;
    }
    linear(&mut p, "encoder.readout", d, cfg.readout_dim, rng);
    linear(&mut p, "encoder.mu", cfg.readout_dim, cfg.latent_dim, rng);
    linear(
        &mut p,
        "encoder.logvar",
        cfg.readout_dim,
        cfg.latent_dim,
        rng,
    );
    let mut d = cfg.latent_dim;
    for (i, &w) in cfg.decoder_dims.iter().enumerate() {
        linear(&mut p, &format!("decoder.fc.{i}"), d, w, rng);
        p.insert(format!("decoder.norm.{i}.gain"), Tensor::ones(&[1, w]));
        p.insert(format!("decoder.norm.{i}.bias"), Tensor::zeros(&[1, w]));
        d = w;
    }
    linear(&mut p, "decoder.head", d, cfg.num_logits(), rng);
    Ok(p)
}

/// `D^-1/2 (A + I) D^-1/2` over the real block of a padded graph.
pub fn gcn_propagation(g: &PaddedGraph) -> Tensor {
    let mut a = g.real_adjacency();
    let n = g.n;
    for i in 0..n {
        a.set(i, i, 1.0);
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / a.data()[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            let v = a.at(i, j) * inv_sqrt[i] * inv_sqrt[j];
            a.set(i, j, v);
        }
    }
    a
}

/// Posterior parameters for a batch: `B x latent_dim` each.
#[derive(Debug, Clone, Copy)]
pub struct Posterior<'t> {
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
}

/// Encoder and decoder bound to one tape.
pub struct GraphVae<'a, 't> {
    pub cfg: &'a ModelConfig,
    pub params: BoundParams<'t>,
    tape: &'t Tape,
}

impl<'a, 't> GraphVae<'a, 't> {
    pub fn bind(cfg: &'a ModelConfig, params: &ParamSet, tape: &'t Tape) -> Self {
        Self {
            cfg,
            params: params.bind(tape),
            tape,
        }
    }

    fn act(&self, x: Var<'t>) -> Var<'t> {
        x.leaky_relu(self.cfg.leaky_slope)
    }

    fn affine(&self, x: Var<'t>, name: &str) -> Result<Var<'t>> {
        let w = self.params.var(&format!("{name}.weight"))?;
        let b = self.params.var(&format!("{name}.bias"))?;
        Ok(x.affine(w, b)?)
    }

    /// Summed node representations of one graph, `1 x gcn_last`. Only the
    /// real nodes take part, so padded content is ignored.
    fn readout(&self, g: &PaddedGraph) -> Result<Var<'t>> {
        if g.n_max() != self.cfg.n_max {
            return Err(Error::InvalidArgument(format!(
                "graph padded to {}, model expects {}",
                g.n_max(),
                self.cfg.n_max
            )));
        }
        let prop = self.tape.constant(gcn_propagation(g));
        let mut h = self.tape.constant(g.real_features());
        for i in 0..self.cfg.gcn_dims.len() {
            let mixed = prop.matmul(h)?;
            h = self.act(self.affine(mixed, &format!("encoder.gcn.{i}"))?);
        }
        Ok(h.sum_axis(0)?)
    }

    pub fn encode(&self, graphs: &[&PaddedGraph]) -> Result<Posterior<'t>> {
        let rows = graphs
            .iter()
            .map(|g| self.readout(g))
            .collect::<Result<Vec<_>>>()?;
        let pooled = self.tape.concat_rows(&rows)?;
        let hidden = self.act(self.affine(pooled, "encoder.readout")?);
        Ok(Posterior {
            mu: self.affine(hidden, "encoder.mu")?,
            logvar: self.affine(hidden, "encoder.logvar")?,
        })
    }

    /// `z = mu + exp(logvar / 2) * eps`.
    pub fn reparameterize(&self, q: Posterior<'t>, eps: Tensor) -> Result<Var<'t>> {
        let std = q.logvar.scale(0.5).exp();
        Ok(q.mu.add(std.mul(self.tape.constant(eps))?)?)
    }

    /// Edge probabilities for a batch of latents: `B x n_max(n_max-1)/2`.
    pub fn decode(&self, z: Var<'t>) -> Result<Var<'t>> {
        let mut h = z;
        for i in 0..self.cfg.decoder_dims.len() {
            let lin = self.affine(h, &format!("decoder.fc.{i}"))?;
            let gain = self.params.var(&format!("decoder.norm.{i}.gain"))?;
            let bias = self.params.var(&format!("decoder.norm.{i}.bias"))?;
            h = self.act(lin.layer_norm(gain, bias, LAYER_NORM_EPS)?);
        }
        Ok(self.affine(h, "decoder.head")?.sigmoid())
    }

    /// Row `i` of a decoded batch as a symmetric `n_max x n_max` matrix.
    pub fn soft_adjacency(&self, probs: Var<'t>, i: usize) -> Result<Var<'t>> {
        Ok(probs.slice_rows(i, 1)?.scatter_sym(self.cfg.n_max)?)
    }
}

/// Standard-normal `rows x cols` draw.
pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Posterior mean and log-variance of a single graph.
pub fn encode_graph(
    cfg: &ModelConfig,
    params: &ParamSet,
    g: &PaddedGraph,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let tape = Tape::new();
    let q = GraphVae::bind(cfg, params, &tape).encode(&[g])?;
    let mu = q.mu.value().data().to_vec();
    let logvar = q.logvar.value().data().to_vec();
    Ok((mu, logvar))
}

/// Soft adjacency matrices for each row of `z` (`B x latent_dim`).
pub fn decode_latents(cfg: &ModelConfig, params: &ParamSet, z: &Tensor) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let vae = GraphVae::bind(cfg, params, &tape);
    let probs = vae.decode(tape.constant(z.clone()))?;
    (0..z.rows())
        .map(|i| Ok((*vae.soft_adjacency(probs, i)?.value()).clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Bernoulli,
    Threshold,
}

impl std::str::FromStr for SampleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(Self::Bernoulli),
            "threshold" => Ok(Self::Threshold),
            _ => Err(Error::InvalidArgument(format!("unknown sample mode {s:?}"))),
        }
    }
}

/// Turn a soft adjacency into a hard graph, then keep its largest component.
pub fn harden<R: Rng + ?Sized>(probs: &Tensor, mode: SampleMode, rng: &mut R) -> Result<Graph> {
    let n = probs.rows();
    let mut g = Graph::empty(n)?;
    for u in 0..n {
        for v in u + 1..n {
            let p = probs.at(u, v);
            let on = match mode {
                SampleMode::Bernoulli => rng.random::<f64>() < p,
                SampleMode::Threshold => p > 0.5,
            };
            if on {
                g.add_edge(u, v)?;
            }
        }
    }
    Ok(max_connected_component(&g))
}

/// Draw `count` graphs from the prior.
pub fn sample_graphs<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    params: &ParamSet,
    count: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Vec<Graph>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let z = standard_normal(count, cfg.latent_dim, rng);
    decode_latents(cfg, params, &z)?
        .iter()
        .map(|p| harden(p, mode, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::pad_to;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(n_max: usize) -> ModelConfig {
        ModelConfig {
            n_max,
            feature_dim: 1,
            gcn_dims: vec![6, 5],
            readout_dim: 7,
            latent_dim: 3,
            decoder_dims: vec![8, 8, 8],
            leaky_slope: LEAKY_SLOPE,
        }
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let cfg = tiny(5);
        let a = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.require("decoder.head.weight").unwrap().shape(), &[8, 10]);
        assert_eq!(a.require("encoder.gcn.1.weight").unwrap().shape(), &[6, 5]);
        assert_eq!(ModelConfig::infer(&a, LEAKY_SLOPE).unwrap(), cfg);
    }

    #[test]
    fn decoder_output_is_soft_adjacency() {
        let cfg = tiny(5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = init_params(&cfg, &mut rng).unwrap();
        let z = standard_normal(2, 3, &mut rng);
        for a in decode_latents(&cfg, &p, &z).unwrap() {
            for i in 0..5 {
                assert_eq!(a.at(i, i), 0.0);
                for j in 0..5 {
                    assert_eq!(a.at(i, j), a.at(j, i));
                    if i != j {
                        assert!(a.at(i, j) > 0.0 && a.at(i, j) < 1.0);
                    }
                }
            }
        }
        assert_eq!(
            decode_latents(&cfg, &p, &z).unwrap(),
            decode_latents(&cfg, &p, &z).unwrap()
        );
    }

    #[test]
    fn zero_head_gives_half() {
        let cfg = tiny(4);
        let mut p = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        p.insert("decoder.head.weight", Tensor::zeros(&[8, 6]));
        let a = &decode_latents(&cfg, &p, &Tensor::ones(&[1, 3])).unwrap()[0];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a.at(i, j), if i == j { 0.0 } else { 0.5 });
            }
        }
    }

    #[test]
    fn encoder_ignores_padding_content() {
        let cfg = tiny(6);
        let p = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let clean = pad_to(&g, 6).unwrap();
        let mut dirty = clean.clone();
        dirty.adjacency.set(4, 5, 1.0);
        dirty.adjacency.set(5, 4, 1.0);
        dirty.features.set(5, 0, 9.0);
        assert_eq!(
            encode_graph(&cfg, &p, &clean).unwrap(),
            encode_graph(&cfg, &p, &dirty).unwrap()
        );
        let (mu, lv) = encode_graph(&cfg, &p, &clean).unwrap();
        assert_eq!((mu.len(), lv.len()), (3, 3));
        assert!(mu.iter().chain(&lv).all(|v| v.is_finite()));
    }

    #[test]
    fn reparameterize_limits() {
        let cfg = tiny(3);
        let p = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let tape = Tape::new();
        let vae = GraphVae::bind(&cfg, &p, &tape);
        let q = Posterior {
            mu: tape.constant(Tensor::row(vec![1.0, -2.0, 0.5])),
            logvar: tape.constant(Tensor::row(vec![-1e4; 3])),
        };
        let z = vae
            .reparameterize(q, Tensor::row(vec![3.0, -3.0, 1.0]))
            .unwrap();
        assert_eq!(z.value().data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn extreme_decoders_give_extreme_samples() {
        let cfg = tiny(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = init_params(&cfg, &mut rng).unwrap();
        p.insert("decoder.head.weight", Tensor::zeros(&[8, 10]));
        p.insert("decoder.head.bias", Tensor::full(&[1, 10], -50.0));
        let gs = sample_graphs(&cfg, &p, 3, SampleMode::Bernoulli, &mut rng).unwrap();
        assert!(gs.iter().all(|g| g.n() == 1));
        p.insert("decoder.head.bias", Tensor::full(&[1, 10], 50.0));
        let gs = sample_graphs(&cfg, &p, 3, SampleMode::Threshold, &mut rng).unwrap();
        assert!(gs.iter().all(|g| g.n() == 5 && g.num_edges() == 10));
    }

    #[test]
    fn bernoulli_sampling_is_seeded() {
        let cfg = tiny(6);
        let p = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let draw = || {
            sample_graphs(
                &cfg,
                &p,
                4,
                SampleMode::Bernoulli,
                &mut ChaCha8Rng::seed_from_u64(8),
            )
            .unwrap()
        };
        assert_eq!(draw(), draw());
    }
}
