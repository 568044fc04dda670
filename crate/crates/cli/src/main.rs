use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use micromacro::config::RunConfig;
use micromacro::dataset::{load_dataset, save_dataset, save_dot, split_dataset, MANIFEST};
use micromacro::eval::{evaluate, ideal_split_score, EvalConfig};
use micromacro::generators::{grid, lobster, triangle_grid, LobsterParams};
use micromacro::gradcheck::run_suite;
use micromacro::model::{sample_graphs, SampleMode};
use micromacro::trainer::{load_checkpoint, train};
use micromacro::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const EFFECTIVE_CONFIG: &str = "config.txt";

#[derive(Parser)]
#[command(
    name = "micromacro",
    version,
    about = "Train a graph VAE with graph-statistic supervision, sample from it and score the samples",
    after_help = "Exit codes: 0 success, 1 usage error, 2 data or config error, 3 numerical failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (edge lists plus manifest).
    GenerateData {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Lobster backbone length.
        #[arg(long, default_value_t = 40)]
        backbone: usize,
        #[arg(long, default_value_t = 0.5)]
        p1: f64,
        #[arg(long, default_value_t = 0.5)]
        p2: f64,
        /// Lobster size bounds (inclusive).
        #[arg(long, default_value_t = 10)]
        min_nodes: usize,
        #[arg(long, default_value_t = 100)]
        max_nodes: usize,
        /// Grid side range, inclusive; the default keeps 100 <= |V| < 400.
        #[arg(long, default_value_t = 10)]
        min_side: usize,
        #[arg(long, default_value_t = 19)]
        max_side: usize,
    },
    /// Train a model. Settings are layered: preset, then config file, then --set.
    Train {
        /// Key-value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// grid, triangle-grid or lobster, optionally with a -paper suffix.
        #[arg(long)]
        preset: Option<String>,
        /// Override one key, e.g. --set epochs=50. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory: checkpoints, log, effective config and the split.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw graphs from a trained model.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the size of the test split stored next to the checkpoint.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value = "bernoulli")]
        mode: SampleMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generated graphs against a test set and print a JSON report.
    Evaluate {
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        /// Seed of the reference GNN weights (and of the split with --ideal).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = micromacro::eval::DEFAULT_K)]
        k: usize,
        /// Score a random 50/50 split of the test set against itself.
        #[arg(long)]
        ideal: bool,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of the descriptor and loss gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Grid,
    TriGrid,
    Lobster,
}

/// Failures that map to exit code 3.
#[derive(Debug)]
struct NumericalFailure(String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.downcast_ref::<NumericalFailure>().is_some()
                || e.chain().any(|c| {
                    c.downcast_ref::<micromacro::Error>()
                        .is_some_and(|m| m.is_numerical())
                });
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::GenerateData {
            kind,
            count,
            seed,
            out,
            backbone,
            p1,
            p2,
            min_nodes,
            max_nodes,
            min_side,
            max_side,
        } => {
            if count == 0 {
                bail!("--count must be at least 1");
            }
            if min_side < 2 || min_side > max_side {
                bail!("grid sides need 2 <= min_side <= max_side");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lp = LobsterParams {
                backbone_n: backbone,
                p1,
                p2,
                min_nodes,
                max_nodes,
            };
            let graphs = (0..count)
                .map(|_| match kind {
                    Kind::Lobster => lobster(&lp, &mut rng),
                    Kind::Grid | Kind::TriGrid => {
                        let r = rng.random_range(min_side..=max_side);
                        let c = rng.random_range(min_side..=max_side);
                        if matches!(kind, Kind::Grid) {
                            grid(r, c)
                        } else {
                            triangle_grid(r, c)
                        }
                    }
                })
                .collect::<micromacro::Result<Vec<Graph>>>()?;
            save_dataset(&out, &graphs)?;
            println!("wrote {count} graphs to {}", out.display());
        }
        Command::Train {
            config,
            preset,
            overrides,
            out,
        } => {
            let mut cfg = match &preset {
                Some(p) => RunConfig::preset(p)?,
                None => RunConfig::default(),
            };
            if let Some(path) = &config {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                cfg.apply_text(&text, path)?;
            }
            for kv in &overrides {
                let (k, v) = kv
                    .split_once('=')
                    .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
                cfg.set(k.trim(), v)?;
            }
            let Some(dataset) = cfg.dataset.clone() else {
                bail!("no dataset given (set `dataset` in the config or via --set)");
            };
            let graphs = load_dataset(&dataset)?;
            let feature_dim = graphs[0].features().cols();
            if graphs.iter().any(|g| g.features().cols() != feature_dim) {
                bail!("graphs in {} disagree on feature width", dataset.display());
            }
            let largest = graphs.iter().map(Graph::n).max().unwrap_or(1);
            let model = cfg.model(largest, feature_dim)?;
            cfg.train.validate()?;

            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut echo = cfg.clone();
            echo.n_max = model.n_max;
            write(&out.join(EFFECTIVE_CONFIG), &echo.to_text())?;

            let split = split_dataset(graphs, cfg.split, cfg.train.seed)?;
            save_dataset(&out.join("train"), &split.train)?;
            if !split.validation.is_empty() {
                save_dataset(&out.join("validation"), &split.validation)?;
            }
            if !split.test.is_empty() {
                save_dataset(&out.join("test"), &split.test)?;
            }
            eprintln!(
                "training {} on {} graphs (n_max {}, {} epochs)",
                cfg.train.label(),
                split.train.len(),
                model.n_max,
                cfg.train.epochs
            );
            let outcome = train(&split, &model, &cfg.train, Some(&out))?;
            let last = outcome.log.records.last().expect("at least one epoch");
            println!(
                "done: final loss {:.4}, best epoch {}, run dir {}",
                last.total,
                outcome.best_epoch,
                out.display()
            );
        }
        Command::Sample {
            checkpoint,
            count,
            mode,
            seed,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))?;
            let count = match count {
                Some(c) => c,
                None => default_count(&checkpoint)?,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let graphs = sample_graphs(&ckpt.model, &ckpt.params, count, mode, &mut rng)?;
            let paths = save_dataset(&out, &graphs)?;
            for (g, p) in graphs.iter().zip(&paths) {
                save_dot(g, &p.with_extension("dot"))?;
            }
            println!("wrote {count} graphs to {}", out.display());
        }
        Command::Evaluate {
            generated,
            test,
            seed,
            k,
            ideal,
            out,
        } => {
            let cfg = EvalConfig {
                gnn_seed: seed,
                k,
                ..EvalConfig::default()
            };
            let test_graphs = load_dataset(&test)?;
            let report = if ideal {
                ideal_split_score(&test_graphs, &cfg, seed)?
            } else {
                let Some(dir) = generated else {
                    bail!("--generated is required unless --ideal is given");
                };
                evaluate(&load_dataset(&dir)?, &test_graphs, &cfg)?
            };
            let json = report.to_json();
            if let Some(path) = &out {
                write(path, &json)?;
            }
            println!("{json}");
        }
        Command::Gradcheck { seed } => {
            let report = run_suite(seed)?;
            print!("{}", report.render());
            if !report.passed() {
                return Err(NumericalFailure("gradient check failed".into()).into());
            }
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Size of the `test` split saved by `train` in the checkpoint's run directory.
fn default_count(checkpoint: &Path) -> anyhow::Result<usize> {
    let manifest = checkpoint
        .parent()
        .unwrap_or(Path::new("."))
        .join("test")
        .join(MANIFEST);
    let text = fs::read_to_string(&manifest).with_context(|| {
        format!(
            "no --count given and no test split at {}",
            manifest.display()
        )
    })?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .count())
}
