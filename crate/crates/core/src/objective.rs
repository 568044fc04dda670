//! The training objective: edge reconstruction, Gaussian statistic
//! likelihoods with closed-form variances, and the KL term.

use std::f64::consts::PI;

use autodiff::{Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::descriptors::{descriptor_eval, hard_descriptor_values, DescriptorSet};
use crate::error::{Error, Result};
use crate::graph::{pad_to, Graph, PaddedGraph};
use crate::model::{standard_normal, GraphVae};

/// Edge probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before
/// taking logs.
pub const PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Comma-separated descriptor list, see [`DescriptorSet::parse`].
    pub descriptors: String,
    pub slope: f64,
    pub sigma_floor: f64,
    /// Gradient-norm clip; `None` disables it.
    pub clip_norm: Option<f64>,
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 40.0,
            beta: 1.5e3,
            batch_size: 8,
            lr: 3e-4,
            epochs: 200,
            seed: 0,
            descriptors: "default".into(),
            slope: crate::descriptors::DEFAULT_SLOPE,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
            clip_norm: Some(5.0),
            validate_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma >= 0.0 && self.gamma.is_finite())
            || !(self.beta >= 0.0 && self.beta.is_finite())
        {
            return bad(format!(
                "gamma and beta must be finite and >= 0 (got {}, {})",
                self.gamma, self.beta
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.validate_every == 0 {
            return bad("batch_size, epochs and validate_every must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive (got {})", self.lr));
        }
        if !(self.sigma_floor > 0.0) {
            return bad(format!(
                "sigma_floor must be positive (got {})",
                self.sigma_floor
            ));
        }
        Ok(())
    }

    /// Clipping threshold actually applied: clipping only matters once the
    /// statistic terms are on.
    pub fn effective_clip(&self) -> Option<f64> {
        if self.gamma > 0.0 {
            self.clip_norm
        } else {
            None
        }
    }

    /// "graphvae" for the plain objective, "graphvae-mm" otherwise.
    pub fn label(&self) -> &'static str {
        if self.gamma == 0.0 {
            "graphvae"
        } else {
            "graphvae-mm"
        }
    }
}

/// Per-descriptor variances from the most recent minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaState {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub floor: f64,
}

impl SigmaState {
    pub fn new(set: &DescriptorSet, floor: f64) -> Self {
        Self {
            names: set.names(),
            values: vec![1.0; set.len()],
            floor,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

/// Binary cross-entropy summed over the full `n x n` block, diagonal
/// included.
pub fn edge_recon_nll<'t>(a_hat: Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    if a_hat.shape() != target.shape() {
        return Err(Error::InvalidArgument(format!(
            "edge_recon_nll: prediction {:?} vs target {:?}",
            a_hat.shape(),
            target.shape()
        )));
    }
    let tape = a_hat.tape();
    let p = a_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let on = tape.constant(target.clone());
    let off = tape.constant(target.map(|a| 1.0 - a));
    let ll = on
        .mul(p.ln())?
        .add(off.mul(p.scale(-1.0).add_scalar(1.0).ln())?)?;
    Ok(ll.sum().scale(-1.0))
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "mse: dimension {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Closed-form variance: the batch mean of per-graph MSEs, floored.
pub fn sigma_mle(batch: &[(&[f64], &[f64])], floor: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("sigma_mle: empty batch".into()));
    }
    let mut total = 0.0;
    for (p, t) in batch {
        total += mse(p, t)?;
    }
    Ok((total / batch.len() as f64).max(floor))
}

/// `MSE / (2 sigma2) + ln(2 pi sigma2) / 2` as a plain number.
pub fn statistic_nll_value(mse: f64, sigma2: f64) -> f64 {
    mse / (2.0 * sigma2) + 0.5 * (2.0 * PI * sigma2).ln()
}

/// Per-entry Gaussian negative log-likelihood of `target` around `pred`.
/// `sigma2` is a constant here: no gradient flows into it.
pub fn statistic_nll<'t>(pred: Var<'t>, target: &Tensor, sigma2: f64) -> Result<Var<'t>> {
    if pred.value().len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "statistic_nll: dimension {} vs {}",
            pred.value().len(),
            target.len()
        )));
    }
    let t = pred.tape().constant(target.reshaped(&pred.shape())?);
    let mse = pred.sub(t)?.square().mean();
    Ok(mse
        .scale(1.0 / (2.0 * sigma2))
        .add_scalar(0.5 * (2.0 * PI * sigma2).ln()))
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over every entry.
pub fn kl_standard_normal<'t>(mu: Var<'t>, logvar: Var<'t>) -> Result<Var<'t>> {
    let inner = mu.square().add(logvar.exp())?.sub(logvar)?.add_scalar(-1.0);
    Ok(inner.sum().scale(0.5))
}

/// A training graph with its padded form and precomputed targets.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub padded: PaddedGraph,
    pub adjacency: Tensor,
    pub targets: Vec<Tensor>,
}

impl PreparedGraph {
    pub fn new(g: &Graph, n_max: usize, set: &DescriptorSet) -> Result<Self> {
        let adjacency = g.adjacency();
        let targets = if set.is_empty() {
            Vec::new()
        } else {
            hard_descriptor_values(set, &adjacency)?
        };
        Ok(Self {
            padded: pad_to(g, n_max)?,
            adjacency,
            targets,
        })
    }
}

/// Loss of one minibatch plus the per-term values for logging.
pub struct BatchLoss<'t> {
    pub total: Var<'t>,
    /// Batch means.
    pub edge: f64,
    pub kl: f64,
    /// Batch-mean statistic NLL per descriptor (empty when gamma = 0).
    pub stats: Vec<f64>,
    /// Variances used in this step (empty when gamma = 0).
    pub sigmas: Vec<f64>,
}

/// Edge NLL + gamma * sum of statistic NLLs + beta * KL, averaged over the
/// batch, with one latent sample per graph. `eps` is the `B x latent`
/// reparameterization noise.
pub fn mm_elbo_loss_with_noise<'t>(
    vae: &GraphVae<'_, 't>,
    batch: &[&PreparedGraph],
    set: &DescriptorSet,
    cfg: &TrainConfig,
    eps: Tensor,
) -> Result<BatchLoss<'t>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    let b = batch.len() as f64;
    let padded: Vec<&PaddedGraph> = batch.iter().map(|g| &g.padded).collect();
    let q = vae.encode(&padded)?;
    let z = vae.reparameterize(q, eps)?;
    let probs = vae.decode(z)?;

    let mut blocks = Vec::with_capacity(batch.len());
    let mut edge_sum: Option<Var<'t>> = None;
    for (i, g) in batch.iter().enumerate() {
        let a = vae.soft_adjacency(probs, i)?.block(g.padded.n)?;
        let e = edge_recon_nll(a, &g.adjacency)?;
        edge_sum = Some(match edge_sum {
            Some(acc) => acc.add(e)?,
            None => e,
        });
        blocks.push(a);
    }
    let edge_sum = edge_sum.expect("non-empty batch");
    let kl = kl_standard_normal(q.mu, q.logvar)?;
    let mut stats = Vec::new();
    let mut sigmas = Vec::new();

    let mut data_term = edge_sum;
    if cfg.gamma > 0.0 && !set.is_empty() {
        let preds = blocks
            .iter()
            .map(|&a| descriptor_eval(set, a))
            .collect::<Result<Vec<_>>>()?;
        let mut stat_sum: Option<Var<'t>> = None;
        for u in 0..set.len() {
            let values: Vec<_> = preds.iter().map(|p| p[u].value.value()).collect();
            let pairs: Vec<(&[f64], &[f64])> = values
                .iter()
                .zip(batch)
                .map(|(v, g)| (v.data(), g.targets[u].data()))
                .collect();
            let sigma2 = sigma_mle(&pairs, cfg.sigma_floor)?;
            sigmas.push(sigma2);
            let mut per_u = 0.0;
            for (p, g) in preds.iter().zip(batch) {
                let nll = statistic_nll(p[u].value, &g.targets[u], sigma2)?;
                per_u += nll.item();
                stat_sum = Some(match stat_sum {
                    Some(acc) => acc.add(nll)?,
                    None => nll,
                });
            }
            stats.push(per_u / b);
        }
        if let Some(s) = stat_sum {
            data_term = data_term.add(s.scale(cfg.gamma))?;
        }
    }
    let total = data_term.scale(1.0 / b).add(kl.scale(cfg.beta / b))?;
    Ok(BatchLoss {
        total,
        edge: edge_sum.item() / b,
        kl: kl.item() / b,
        stats,
        sigmas,
    })
}

/// [`mm_elbo_loss_with_noise`] with noise drawn from `rng`.
pub fn mm_elbo_loss<'t, R: Rng + ?Sized>(
    vae: &GraphVae<'_, 't>,
    batch: &[&PreparedGraph],
    set: &DescriptorSet,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<BatchLoss<'t>> {
    let eps = standard_normal(batch.len(), vae.cfg.latent_dim, rng);
    mm_elbo_loss_with_noise(vae, batch, set, cfg, eps)
}
