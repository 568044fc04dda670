//! Plain-text run configuration: one `key = value` per line, `#` comments.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `dataset` | dataset directory (edge lists + manifest) | required for training |
//! | `n_max` | node budget; 0 = largest graph in the dataset | 0 |
//! | `gamma`, `beta` | statistic and KL weights | 40, 1500 |
//! | `lr` | Adam learning rate | 0.0003 |
//! | `epochs` | training epochs | 200 |
//! | `batch_size` | minibatch size | 8 |
//! | `latent_dim` | latent size | 128 |
//! | `descriptors` | comma list, see `DescriptorSet::parse` | default |
//! | `seed` | seed for split, init and training | 0 |
//! | `slope` | degree-histogram membership slope | 0.1 |
//! | `sigma_floor` | variance floor | 1e-6 |
//! | `gcn_dims`, `readout_dim`, `decoder_dims` | layer widths | 256,1026 / 1024 / 1024,1024,1024 |
//! | `clip_norm` | gradient-norm clip when gamma > 0; `none` disables | 5 |
//! | `validate_every` | epochs between validation passes | 10 |
//! | `split` | train/validation/test ratios | 0.7,0.1,0.2 |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use autodiff::LEAKY_SLOPE;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::TrainConfig;

pub const KEYS: [&str; 18] = [
    "dataset",
    "n_max",
    "gamma",
    "beta",
    "lr",
    "epochs",
    "batch_size",
    "latent_dim",
    "descriptors",
    "seed",
    "slope",
    "sigma_floor",
    "gcn_dims",
    "readout_dim",
    "decoder_dims",
    "clip_norm",
    "validate_every",
    "split",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    /// 0 means "fit the dataset".
    pub n_max: usize,
    pub latent_dim: usize,
    pub gcn_dims: Vec<usize>,
    pub readout_dim: usize,
    pub decoder_dims: Vec<usize>,
    pub split: [f64; 3],
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let paper = ModelConfig::paper(0);
        Self {
            dataset: None,
            n_max: 0,
            latent_dim: paper.latent_dim,
            gcn_dims: paper.gcn_dims,
            readout_dim: paper.readout_dim,
            decoder_dims: paper.decoder_dims,
            split: [0.7, 0.1, 0.2],
            train: TrainConfig::default(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Named presets: `grid`, `triangle-grid`, `lobster` (desk scale) and the
    /// same names with a `-paper` suffix (paper architecture and epochs).
    pub fn preset(name: &str) -> Result<Self> {
        let (base, paper) = match name.strip_suffix("-paper") {
            Some(b) => (b, true),
            None => (name, false),
        };
        let (gamma, beta, paper_epochs) = match base {
            "grid" | "triangle-grid" => (50.0, 2e3, 20_000),
            "lobster" => (40.0, 1.5e3, 10_000),
            _ => return Err(Error::Config(format!("unknown preset {name:?}"))),
        };
        let mut cfg = Self::default();
        cfg.train.gamma = gamma;
        cfg.train.beta = beta;
        if paper {
            cfg.train.epochs = paper_epochs;
        } else {
            cfg.train.epochs = 1000;
            cfg.latent_dim = 64;
            cfg.gcn_dims = vec![128, 513];
            cfg.readout_dim = 512;
            cfg.decoder_dims = vec![512, 512, 512];
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(v)),
            "n_max" => self.n_max = parse_num(key, v)?,
            "gamma" => t.gamma = parse_num(key, v)?,
            "beta" => t.beta = parse_num(key, v)?,
            "lr" => t.lr = parse_num(key, v)?,
            "epochs" => t.epochs = parse_num(key, v)?,
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "latent_dim" => self.latent_dim = parse_num(key, v)?,
            "descriptors" => t.descriptors = v.to_string(),
            "seed" => t.seed = parse_num(key, v)?,
            "slope" => t.slope = parse_num(key, v)?,
            "sigma_floor" => t.sigma_floor = parse_num(key, v)?,
            "gcn_dims" => self.gcn_dims = parse_list(key, v)?,
            "readout_dim" => self.readout_dim = parse_num(key, v)?,
            "decoder_dims" => self.decoder_dims = parse_list(key, v)?,
            "clip_norm" => {
                t.clip_norm = if v == "none" {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "validate_every" => t.validate_every = parse_num(key, v)?,
            "split" => {
                let r: Vec<f64> = parse_list(key, v)?;
                self.split = r
                    .try_into()
                    .map_err(|_| Error::Config("split needs three ratios".into()))?;
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected key = value, found {line:?}"),
            })?;
            self.set(k.trim(), v).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, path)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Every key with its effective value; parsing this text reproduces
    /// `self`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(d) = &self.dataset {
            kv("dataset", d.display().to_string());
        }
        kv("n_max", self.n_max.to_string());
        kv("gamma", t.gamma.to_string());
        kv("beta", t.beta.to_string());
        kv("lr", t.lr.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("latent_dim", self.latent_dim.to_string());
        kv("descriptors", t.descriptors.clone());
        kv("seed", t.seed.to_string());
        kv("slope", t.slope.to_string());
        kv("sigma_floor", t.sigma_floor.to_string());
        kv("gcn_dims", join(&self.gcn_dims));
        kv("readout_dim", self.readout_dim.to_string());
        kv("decoder_dims", join(&self.decoder_dims));
        kv(
            "clip_norm",
            t.clip_norm.map_or("none".into(), |c| c.to_string()),
        );
        kv("validate_every", t.validate_every.to_string());
        kv("split", join(&self.split));
        s
    }

    /// Model architecture for a dataset whose largest graph has
    /// `largest` nodes.
    pub fn model(&self, largest: usize, feature_dim: usize) -> Result<ModelConfig> {
        let n_max = if self.n_max == 0 {
            largest.max(2)
        } else {
            self.n_max
        };
        if largest > n_max {
            return Err(Error::Config(format!(
                "n_max = {n_max} but the dataset has a {largest}-node graph"
            )));
        }
        let cfg = ModelConfig {
            n_max,
            feature_dim,
            gcn_dims: self.gcn_dims.clone(),
            readout_dim: self.readout_dim,
            latent_dim: self.latent_dim,
            decoder_dims: self.decoder_dims.clone(),
            leaky_slope: LEAKY_SLOPE,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
