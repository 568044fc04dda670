//! Training loop, CSV logging and checkpoints.
//!
//! A run directory holds `train_log.csv`, `best.ckpt` (lowest validation
//! loss so far) and `last.ckpt` (refreshed at every validation point and at
//! the end of training).

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use autodiff::{checkpoint, clip_grad_norm, AdamConfig, AdamState, ParamSet, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::DatasetSplit;
use crate::descriptors::DescriptorSet;
use crate::error::{Error, Result};
use crate::model::{init_params, GraphVae, ModelConfig};
use crate::objective::{mm_elbo_loss, PreparedGraph, SigmaState, TrainConfig};
use crate::ordering::canonicalize;

pub const LOG_FILE: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

const SIGMA_PREFIX: &str = "sigma.";
const SLOPE_KEY: &str = "meta.leaky_slope";
const FLOOR_KEY: &str = "meta.sigma_floor";
// Validation noise uses its own stream so that it is identical at every
// validation point.
const VALIDATION_STREAM: u64 = 0x5eed_0f_7a11;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub edge_nll: f64,
    /// Per-descriptor statistic NLL, in descriptor order.
    pub stat_nll: Vec<f64>,
    pub kl: f64,
    /// Mean over the epoch's minibatches of each descriptor's variance.
    pub sigma2: Vec<f64>,
    pub val_total: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub label: String,
    pub descriptors: Vec<String>,
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// `# model=<label>` line, then the column header.
    pub fn header(&self) -> String {
        let mut h = format!("# model={}\nepoch,total,edge_nll", self.label);
        for d in &self.descriptors {
            let _ = write!(h, ",nll_{d}");
        }
        h.push_str(",kl");
        for d in &self.descriptors {
            let _ = write!(h, ",sigma2_{d}");
        }
        h.push_str(",val_total,seconds\n");
        h
    }

    pub fn csv_row(&self, r: &EpochRecord) -> String {
        let mut s = format!("{},{:e},{:e}", r.epoch, r.total, r.edge_nll);
        for v in &r.stat_nll {
            let _ = write!(s, ",{v:e}");
        }
        let _ = write!(s, ",{:e}", r.kl);
        for v in &r.sigma2 {
            let _ = write!(s, ",{v:e}");
        }
        match r.val_total {
            Some(v) => {
                let _ = write!(s, ",{v:e}");
            }
            None => s.push(','),
        }
        let _ = writeln!(s, ",{:.3}", r.seconds);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header();
        for r in &self.records {
            s.push_str(&self.csv_row(r));
        }
        s
    }

    /// Records without wall-clock times, for determinism comparisons.
    pub fn without_timing(&self) -> Vec<EpochRecord> {
        self.records
            .iter()
            .map(|r| EpochRecord {
                seconds: 0.0,
                ..r.clone()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the final epoch.
    pub params: ParamSet,
    pub best_params: ParamSet,
    pub best_epoch: usize,
    pub sigmas: SigmaState,
    pub model: ModelConfig,
    pub log: TrainLog,
}

/// Everything stored in a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub sigmas: SigmaState,
    pub model: ModelConfig,
}

pub fn save_checkpoint(
    params: &ParamSet,
    sigmas: &SigmaState,
    leaky_slope: f64,
    path: &Path,
) -> Result<()> {
    let mut all = params.clone();
    for (name, &v) in sigmas.names.iter().zip(&sigmas.values) {
        all.insert(format!("{SIGMA_PREFIX}{name}"), Tensor::scalar(v));
    }
    all.insert(SLOPE_KEY, Tensor::scalar(leaky_slope));
    all.insert(FLOOR_KEY, Tensor::scalar(sigmas.floor));
    checkpoint::save(&all, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let all = checkpoint::load(path)?;
    let mut params = ParamSet::new();
    let mut sigmas = SigmaState {
        names: Vec::new(),
        values: Vec::new(),
        floor: crate::objective::DEFAULT_SIGMA_FLOOR,
    };
    let mut slope = autodiff::LEAKY_SLOPE;
    for (name, t) in all.iter() {
        if let Some(d) = name.strip_prefix(SIGMA_PREFIX) {
            sigmas.names.push(d.to_string());
            sigmas.values.push(t.item());
        } else if name == SLOPE_KEY {
            slope = t.item();
        } else if name == FLOOR_KEY {
            sigmas.floor = t.item();
        } else {
            params.insert(name, t.clone());
        }
    }
    let model = ModelConfig::infer(&params, slope)?;
    Ok(Checkpoint {
        params,
        sigmas,
        model,
    })
}

struct RunFiles {
    dir: PathBuf,
    log: fs::File,
}

impl RunFiles {
    fn create(dir: &Path, header: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let mut log = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        log.write_all(header.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
        })
    }

    fn append(&mut self, row: &str) -> Result<()> {
        let path = self.dir.join(LOG_FILE);
        self.log
            .write_all(row.as_bytes())
            .and_then(|_| self.log.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Canonicalize, pad and attach descriptor targets.
pub fn prepare(
    graphs: &[crate::graph::Graph],
    n_max: usize,
    set: &DescriptorSet,
) -> Result<Vec<PreparedGraph>> {
    graphs
        .iter()
        .map(|g| PreparedGraph::new(&canonicalize(g), n_max, set))
        .collect()
}

/// Mean loss over `graphs` (taken as one batch) with fixed noise.
pub fn evaluate_loss(
    model: &ModelConfig,
    params: &ParamSet,
    graphs: &[PreparedGraph],
    set: &DescriptorSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tape = Tape::new();
    let vae = GraphVae::bind(model, params, &tape);
    let batch: Vec<&PreparedGraph> = graphs.iter().collect();
    Ok(mm_elbo_loss(&vae, &batch, set, cfg, &mut rng)?.total.item())
}

/// Train a model from a fresh initialization.
pub fn train(
    split: &DatasetSplit,
    model: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = init_params(model, &mut rng)?;
    train_from(split, model, cfg, params, &mut rng, out_dir)
}

/// Train starting from `params`, drawing minibatch order and latent noise
/// from `rng`.
pub fn train_from(
    split: &DatasetSplit,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut params: ParamSet,
    rng: &mut ChaCha8Rng,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let set = DescriptorSet::parse(&cfg.descriptors, model.n_max, cfg.slope)?;
    let train_set = prepare(&split.train, model.n_max, &set)?;
    let val_set = prepare(&split.validation, model.n_max, &set)?;
    let with_stats = cfg.gamma > 0.0 && !set.is_empty();
    let names = if with_stats { set.names() } else { Vec::new() };

    let mut log = TrainLog {
        label: cfg.label().to_string(),
        descriptors: names.clone(),
        records: Vec::with_capacity(cfg.epochs),
    };
    let mut files = match out_dir {
        Some(d) => Some(RunFiles::create(d, &log.header())?),
        None => None,
    };
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut sigmas = SigmaState::new(&set, cfg.sigma_floor);
    if !with_stats {
        sigmas = SigmaState {
            names: Vec::new(),
            values: Vec::new(),
            floor: cfg.sigma_floor,
        };
    }
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut sums = [0.0f64; 3];
        let mut stat_sums = vec![0.0; names.len()];
        let mut sigma_sums = vec![0.0; names.len()];
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PreparedGraph> = chunk.iter().map(|&i| &train_set[i]).collect();
            let tape = Tape::new();
            let vae = GraphVae::bind(model, &params, &tape);
            let loss = mm_elbo_loss(&vae, &batch, &set, cfg, rng)?;
            let total = loss.total.item();
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: step + 1,
                });
            }
            let grads = tape.backward(loss.total)?;
            let mut g = vae.params.gradients(&grads);
            if let Some(max) = cfg.effective_clip() {
                clip_grad_norm(&mut g, max);
            }
            adam.step(&mut params, &g)?;

            let w = batch.len() as f64;
            sums[0] += total * w;
            sums[1] += loss.edge * w;
            sums[2] += loss.kl * w;
            for (acc, v) in stat_sums.iter_mut().zip(&loss.stats) {
                *acc += v * w;
            }
            for (acc, v) in sigma_sums.iter_mut().zip(&loss.sigmas) {
                *acc += v;
            }
            if with_stats {
                sigmas.values.clone_from(&loss.sigmas);
            }
            steps += 1;
        }
        let n = train_set.len() as f64;

        let validate = epoch % cfg.validate_every == 0 || epoch == cfg.epochs;
        let val_total = if validate {
            let graphs = if val_set.is_empty() {
                &train_set
            } else {
                &val_set
            };
            let seed = cfg.seed ^ VALIDATION_STREAM;
            Some(evaluate_loss(model, &params, graphs, &set, cfg, seed)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            total: sums[0] / n,
            edge_nll: sums[1] / n,
            stat_nll: stat_sums.iter().map(|v| v / n).collect(),
            kl: sums[2] / n,
            sigma2: sigma_sums.iter().map(|v| v / steps as f64).collect(),
            val_total,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(f) = files.as_mut() {
            f.append(&log.csv_row(&record))?;
        }
        log.records.push(record);

        if let Some(v) = val_total {
            if v < best.0 || best.1 == 0 {
                best = (v, epoch, params.clone());
                if let Some(d) = out_dir {
                    save_checkpoint(
                        &params,
                        &sigmas,
                        model.leaky_slope,
                        &d.join(BEST_CHECKPOINT),
                    )?;
                }
            }
            if let Some(d) = out_dir {
                save_checkpoint(
                    &params,
                    &sigmas,
                    model.leaky_slope,
                    &d.join(LAST_CHECKPOINT),
                )?;
            }
        }
    }

    Ok(TrainOutcome {
        params,
        best_params: best.2,
        best_epoch: best.1,
        sigmas,
        model: model.clone(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::split_dataset;
    use crate::generators::{lobster, LobsterParams};

    fn tiny_model(n_max: usize) -> ModelConfig {
        ModelConfig {
            n_max,
            feature_dim: 1,
            gcn_dims: vec![8, 8],
            readout_dim: 8,
            latent_dim: 4,
            decoder_dims: vec![16, 16, 16],
            leaky_slope: autodiff::LEAKY_SLOPE,
        }
    }

    fn small_split(count: usize) -> DatasetSplit {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = LobsterParams {
            backbone_n: 5,
            min_nodes: 5,
            max_nodes: 12,
            ..Default::default()
        };
        let graphs = (0..count)
            .map(|_| lobster(&params, &mut rng).unwrap())
            .collect();
        split_dataset(graphs, [0.7, 0.1, 0.2], 0).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_keeps_sigmas() {
        let model = tiny_model(6);
        let params = init_params(&model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let sigmas = SigmaState {
            names: vec!["triangle_count".into(), "transition_2".into()],
            values: vec![6.87e-6, 0.0123],
            floor: 1e-6,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        save_checkpoint(&params, &sigmas, model.leaky_slope, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params, params);
        assert_eq!(back.sigmas, sigmas);
        assert_eq!(back.model, model);
    }

    #[test]
    fn short_run_writes_log_and_checkpoints() {
        let split = small_split(12);
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 4,
            lr: 1e-3,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let out = train(&split, &tiny_model(12), &cfg, Some(dir.path())).unwrap();
        assert_eq!(out.log.records.len(), 12);
        assert!(out.log.records.iter().all(|r| r.total.is_finite()));
        let csv = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert!(csv.starts_with("# model=graphvae-mm\n"));
        assert!(csv.contains("sigma2_triangle_count"));
        assert_eq!(csv.lines().count(), 2 + 12);
        assert!(load_checkpoint(&dir.path().join(BEST_CHECKPOINT)).is_ok());
        let last = load_checkpoint(&dir.path().join(LAST_CHECKPOINT)).unwrap();
        assert_eq!(last.params, out.params);
        assert_eq!(last.sigmas.names.len(), 7);
    }

    #[test]
    fn plain_run_has_no_sigma_columns() {
        let split = small_split(10);
        let cfg = TrainConfig {
            gamma: 0.0,
            beta: 1.0,
            epochs: 2,
            ..Default::default()
        };
        let out = train(&split, &tiny_model(12), &cfg, None).unwrap();
        assert!(out.log.header().starts_with("# model=graphvae\n"));
        assert!(!out.log.header().contains("sigma2"));
    }

    #[test]
    fn oversized_graph_is_rejected() {
        let split = small_split(10);
        assert!(train(&split, &tiny_model(4), &TrainConfig::default(), None).is_err());
    }
}
