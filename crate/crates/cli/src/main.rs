use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alter_cli::commands::{self, EncodeOptions, SplitName};
use alter_cli::config::{self, RunConfig};
use alter_core::alga::KernelOptions;
use alter_core::synth::SynthConfig;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "alter",
    version,
    about = "Long-range random-walk encodings and graph transformers for brain graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build per-subject graph caches (X, A, F, E) from a dataset directory.
    Encode {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
        /// Hop count of the embedding.
        #[arg(long, default_value_t = 16)]
        k: usize,
        /// Only write X and A.
        #[arg(long)]
        graph_only: bool,
        /// Divide kernel columns by their weighted sums.
        #[arg(long)]
        renormalize: bool,
    },
    /// Recompute F and E in existing graph caches.
    Alga {
        cache: PathBuf,
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long)]
        renormalize: bool,
    },
    /// Train one model; writes checkpoints and metrics.json.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        checkpoint: PathBuf,
        /// Run config; defaults to config.json next to the checkpoint.
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Output JSON; defaults to eval_<split>.json next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every configured seed at each hop count and summarize.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
        hops: Vec<usize>,
    },
    /// Export attention maps of one subject as CSV and PGM.
    Attn {
        checkpoint: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        subject: String,
        /// One file per head of the last layer instead of the head mean.
        #[arg(long)]
        per_head: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Run config for commands that start from a checkpoint.
fn checkpoint_config(checkpoint: &Path, cfg: &ConfigArgs) -> Result<RunConfig> {
    let path = match &cfg.config {
        Some(p) => p.clone(),
        None => checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(commands::CONFIG_FILE),
    };
    config::load(Some(&path), &cfg.overrides)
}

fn kernel(renormalize: bool) -> KernelOptions {
    KernelOptions { renormalize }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { cfg, out, seed } => {
            let mut c: SynthConfig = config::load(cfg.config.as_deref(), &cfg.overrides)?;
            if let Some(s) = seed {
                c.seed = s;
            }
            let m = commands::cmd_synth(&c, &out)?;
            println!("wrote {} subjects to {}", m.subjects.len(), out.display());
        }
        Command::Encode {
            dataset,
            out,
            threshold,
            k,
            graph_only,
            renormalize,
        } => {
            let opts = EncodeOptions {
                threshold,
                k_hops: (!graph_only).then_some(k),
                kernel: kernel(renormalize),
            };
            let m = commands::cmd_encode(&dataset, &out, &opts)?;
            println!("encoded {} subjects into {}", m.len(), out.display());
        }
        Command::Alga { cache, k, renormalize } => {
            let m = commands::cmd_alga(&cache, k, kernel(renormalize))?;
            println!("wrote K={k} embeddings for {} subjects", m.len());
        }
        Command::Train { cfg, out, seed } => {
            let mut c: RunConfig = config::load(cfg.config.as_deref(), &cfg.overrides)?;
            if let Some(s) = seed {
                c.train.seed = s;
            }
            let m = commands::cmd_train(&c, &out)?;
            println!(
                "best epoch {} (val auc {:.4}); test acc {:.4} auc {:.4} sen {:.4} spe {:.4} f1 {:.4}",
                m.best_epoch, m.best_val_auc, m.test.acc, m.test.auc, m.test.sen, m.test.spe, m.test.f1
            );
        }
        Command::Eval {
            checkpoint,
            cfg,
            split,
            out,
        } => {
            let c = checkpoint_config(&checkpoint, &cfg)?;
            let split_name = serde_json::to_value(split)?;
            let out = out.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join(format!("eval_{}.json", split_name.as_str().unwrap_or("split")))
            });
            let r = commands::cmd_eval(&checkpoint, &c, split, &out)?;
            println!(
                "{} samples: acc {:.4} auc {:.4} sen {:.4} spe {:.4} f1 {:.4} -> {}",
                r.samples,
                r.metrics.acc,
                r.metrics.auc,
                r.metrics.sen,
                r.metrics.spe,
                r.metrics.f1,
                out.display()
            );
        }
        Command::Sweep { cfg, out, seed, hops } => {
            let mut c: RunConfig = config::load(cfg.config.as_deref(), &cfg.overrides)?;
            if let Some(s) = seed {
                c.seeds = vec![s];
            }
            let rows = commands::cmd_sweep(&c, &hops, &out)?;
            println!("{:>6} {:>5} {:>16} {:>16}", "K", "runs", "auc", "acc");
            for r in rows {
                let (auc, acc) = (r.metrics["auc"], r.metrics["acc"]);
                println!(
                    "{:>6} {:>5} {:>7.4} ± {:<6.4} {:>7.4} ± {:<6.4}",
                    r.k_hops, r.runs, auc.mean, auc.std, acc.mean, acc.std
                );
            }
        }
        Command::Attn {
            checkpoint,
            cfg,
            subject,
            per_head,
            out,
        } => {
            let c = checkpoint_config(&checkpoint, &cfg)?;
            for p in commands::cmd_attn(&checkpoint, &c, &subject, per_head, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ALTER_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("ALTER_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
