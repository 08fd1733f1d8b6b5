//! One function per subcommand. Each writes plain files under its output
//! path and removes what it created if it fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use alter_core::alga::{self, KernelOptions};
use alter_core::checkpoint::{encode_checkpoint, load_checkpoint};
use alter_core::dataset::{
    load_dataset, load_series, read_graph_cache, source_hash, write_graph_cache, write_json, write_matrix_csv,
    DatasetManifest, GraphCache, GraphCacheManifest, CACHE_MANIFEST,
};
use alter_core::graph::{build_graph, split_dataset, BrainGraph, LabeledDataset, SplitIndices};
use alter_core::metrics::Metrics;
use alter_core::model::{export_attention, AlterModel, AttentionReduction};
use alter_core::synth::{generate_dataset, SynthConfig};
use alter_core::train::{evaluate, summarize, train_loop, EncodedDataset, MeanStd, RunRecord};
use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::outputs::{format_pgm, write_text, OutputGuard};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const INIT_CKPT: &str = "init.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const FINAL_CKPT: &str = "final.ckpt";
const PGM_CELL: usize = 8;

fn plain_name(id: &str) -> Result<&str> {
    ensure!(
        !id.is_empty() && !id.contains(['/', '\\']) && !id.starts_with('.'),
        "subject id {id:?} cannot be used as a file name"
    );
    Ok(id)
}

pub fn cmd_synth(cfg: &SynthConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let guard = OutputGuard::new(out)?;
    let manifest = generate_dataset(cfg, out)?;
    guard.commit();
    Ok(manifest)
}

#[derive(Clone, Copy, Debug)]
pub struct EncodeOptions {
    pub threshold: f64,
    /// Also compute `F` and `E` with this many hops.
    pub k_hops: Option<usize>,
    pub kernel: KernelOptions,
}

fn embed(g: &BrainGraph, k: usize, kernel: KernelOptions) -> Result<(alter_core::Matrix, alter_core::Matrix)> {
    let f = alga::adaptive_factors_from_graph(g)?;
    let r = alga::rw_kernel_with(&f, &g.a, kernel)?;
    Ok((f.f, alga::long_range_embedding(&r, k)?.e))
}

/// Writes `<out>/<subject>/` with `X.csv`, `A.csv`, optionally `F.csv` and
/// `E.csv`, and `manifest.json`.
pub fn cmd_encode(dataset: &Path, out: &Path, opts: &EncodeOptions) -> Result<Vec<GraphCacheManifest>> {
    let guard = OutputGuard::new(out)?;
    let (_, series) = load_series(dataset)?;
    let manifests = series
        .par_iter()
        .map(|s| -> Result<GraphCacheManifest> {
            let id = plain_name(s.table.subject_id())?;
            let g = build_graph(&s.table, opts.threshold)?;
            let (f, e) = match opts.k_hops {
                Some(k) => {
                    let (f, e) = embed(&g, k, opts.kernel)?;
                    (Some(f), Some(e))
                }
                None => (None, None),
            };
            let cache = GraphCache {
                manifest: GraphCacheManifest {
                    subject_id: id.to_string(),
                    label: s.label,
                    threshold: opts.threshold,
                    source_hash: source_hash(&s.table),
                    k_hops: opts.k_hops,
                    kernel: opts.kernel,
                    files: Vec::new(),
                },
                x: g.x,
                a: g.a,
                f,
                e,
            };
            Ok(write_graph_cache(&out.join(id), &cache)?)
        })
        .collect::<Result<Vec<_>>>()?;
    guard.commit();
    Ok(manifests)
}

/// Subject cache directories under `root`, sorted by name.
fn cache_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let p = entry?.path();
        if p.join(CACHE_MANIFEST).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    ensure!(!dirs.is_empty(), "no graph caches under {}", root.display());
    Ok(dirs)
}

/// Recomputes `F.csv` and `E.csv` for every graph cache under `cache`.
pub fn cmd_alga(cache: &Path, k_hops: usize, kernel: KernelOptions) -> Result<Vec<GraphCacheManifest>> {
    let guard = OutputGuard::new(cache)?;
    let dirs = cache_dirs(cache)?;
    let manifests = dirs
        .par_iter()
        .map(|dir| -> Result<GraphCacheManifest> {
            let mut c = read_graph_cache(dir)?;
            let g = BrainGraph {
                x: c.x.clone(),
                a: c.a.clone(),
                roi_names: None,
            };
            let (f, e) = embed(&g, k_hops, kernel)?;
            c.f = Some(f);
            c.e = Some(e);
            c.manifest.k_hops = Some(k_hops);
            c.manifest.kernel = kernel;
            Ok(write_graph_cache(dir, &c)?)
        })
        .collect::<Result<Vec<_>>>()?;
    guard.commit();
    Ok(manifests)
}

/// A dataset loaded, encoded and split as a run config describes.
pub struct Prepared {
    pub dataset: LabeledDataset,
    pub data: EncodedDataset,
    pub split: SplitIndices,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let dataset = load_dataset(&cfg.data.dataset, cfg.data.threshold)
        .with_context(|| format!("loading dataset {}", cfg.data.dataset.display()))?;
    let data = EncodedDataset::from_dataset(&dataset, cfg.model.k_hops, cfg.data.kernel)?;
    let split = split_dataset(dataset.len(), cfg.split_ratios(), cfg.split_seed())?;
    Ok(Prepared { dataset, data, split })
}

/// Per-epoch series of a run, one entry per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochSeries {
    pub lr: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub val_auc: Vec<f64>,
    pub val_sen: Vec<f64>,
    pub val_spe: Vec<f64>,
    pub val_f1: Vec<f64>,
}

/// Contents of a run's `metrics.json`. The flattened metrics are those of the
/// best checkpoint on the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub config_hash: String,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_checkpoint: Option<String>,
    #[serde(flatten)]
    pub test: Metrics,
    pub epochs: EpochSeries,
}

impl RunMetrics {
    pub fn from_record(r: &RunRecord, best_checkpoint: Option<&str>) -> Self {
        let mut s = EpochSeries::default();
        for e in &r.epochs {
            s.lr.push(e.lr);
            s.train_loss.push(e.train_loss);
            s.val_acc.push(e.val.acc);
            s.val_auc.push(e.val.auc);
            s.val_sen.push(e.val.sen);
            s.val_spe.push(e.val.spe);
            s.val_f1.push(e.val.f1);
        }
        RunMetrics {
            seed: r.seed,
            config_hash: r.config_hash.clone(),
            best_epoch: r.best_epoch,
            best_val_auc: r.best_val_auc,
            best_checkpoint: best_checkpoint.map(str::to_string),
            test: r.test,
            epochs: s,
        }
    }
}

fn write_checkpoint(path: &Path, model: &AlterModel, seed: u64) -> Result<()> {
    let bytes = encode_checkpoint(model, seed)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Trains one model and writes the effective config, the initial, best and
/// final checkpoints and `metrics.json` into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<RunMetrics> {
    let guard = OutputGuard::new(out)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let p = prepare(cfg)?;
    let outcome = train_loop(&p.data, &p.split, &cfg.model, &cfg.train)?;
    let seed = cfg.train.seed;
    write_checkpoint(&out.join(INIT_CKPT), &outcome.initial, seed)?;
    write_checkpoint(&out.join(BEST_CKPT), &outcome.best, seed)?;
    write_checkpoint(&out.join(FINAL_CKPT), &outcome.last, seed)?;
    let metrics = RunMetrics::from_record(&outcome.record, Some(BEST_CKPT));
    write_json(&out.join(METRICS_FILE), &metrics)?;

    // the stored best checkpoint must reproduce the recorded test metrics
    let (_, reloaded) = load_checkpoint(&out.join(BEST_CKPT))?;
    let again = evaluate(&reloaded, &p.data, &p.split.test, cfg.train.threshold)?;
    ensure!(
        again == outcome.record.test,
        "reloaded best checkpoint does not reproduce the recorded test metrics"
    );
    guard.commit();
    Ok(metrics)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

impl SplitName {
    pub fn indices(self, split: &SplitIndices, len: usize) -> Vec<usize> {
        match self {
            SplitName::Train => split.train.clone(),
            SplitName::Val => split.val.clone(),
            SplitName::Test => split.test.clone(),
            SplitName::All => (0..len).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub split: SplitName,
    pub samples: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Loads a checkpoint and evaluates it on one split of the configured
/// dataset. The checkpoint's model config decides the hop count.
pub fn cmd_eval(checkpoint: &Path, cfg: &RunConfig, split: SplitName, out: &Path) -> Result<EvalReport> {
    let (header, model) =
        load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let cfg = RunConfig {
        model: header.model,
        ..cfg.clone()
    };
    let p = prepare(&cfg)?;
    let idx = split.indices(&p.split, p.data.len());
    let metrics = evaluate(&model, &p.data, &idx, cfg.train.threshold)?;
    let report = EvalReport {
        checkpoint: checkpoint.display().to_string(),
        split,
        samples: idx.len(),
        metrics,
    };
    let guard = OutputGuard::new(out)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_json(out, &report)?;
    guard.commit();
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k_hops: usize,
    pub runs: usize,
    pub metrics: BTreeMap<String, MeanStd>,
}

const SWEEP_METRICS: [&str; 5] = ["acc", "auc", "sen", "spe", "f1"];

pub fn format_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("k_hops,runs");
    for m in SWEEP_METRICS {
        out.push_str(&format!(",{m}_mean,{m}_std"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{}", r.k_hops, r.runs));
        for m in SWEEP_METRICS {
            let s = r.metrics[m];
            out.push_str(&format!(",{:?},{:?}", s.mean, s.std));
        }
        out.push('\n');
    }
    out
}

/// Trains every seed at every hop count. Writes `k<K>/seed<s>.json` per run,
/// `summary.json` with mean and std per hop count, and `sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig, hops: &[usize], out: &Path) -> Result<Vec<SweepRow>> {
    ensure!(!hops.is_empty(), "no hop counts given");
    let seeds = cfg.sweep_seeds();
    let guard = OutputGuard::new(out)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let dataset = load_dataset(&cfg.data.dataset, cfg.data.threshold)
        .with_context(|| format!("loading dataset {}", cfg.data.dataset.display()))?;
    let mut rows = Vec::with_capacity(hops.len());
    for &k in hops {
        let data = EncodedDataset::from_dataset(&dataset, k, cfg.data.kernel)?;
        let model = alter_core::model::ModelConfig {
            k_hops: k,
            ..cfg.model.clone()
        };
        let records = seeds
            .par_iter()
            .map(|&seed| -> Result<RunRecord> {
                let train = alter_core::train::TrainConfig {
                    seed,
                    ..cfg.train.clone()
                };
                let split_seed = cfg.data.split_seed.unwrap_or(seed);
                let split = split_dataset(dataset.len(), cfg.split_ratios(), split_seed)?;
                Ok(train_loop(&data, &split, &model, &train)?.record)
            })
            .collect::<Result<Vec<_>>>()?;
        let dir = out.join(format!("k{k}"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for r in &records {
            write_json(
                &dir.join(format!("seed{}.json", r.seed)),
                &RunMetrics::from_record(r, None),
            )?;
        }
        let row = SweepRow {
            k_hops: k,
            runs: records.len(),
            metrics: summarize(&records),
        };
        log::info!(
            "K={k}: test auc {:.4} ± {:.4}",
            row.metrics["auc"].mean,
            row.metrics["auc"].std
        );
        rows.push(row);
    }
    write_json(&out.join(SUMMARY_FILE), &rows)?;
    write_text(&out.join("sweep.csv"), &format_sweep_csv(&rows))?;
    guard.commit();
    Ok(rows)
}

/// Attention of one subject under a checkpoint: the head mean of the last
/// layer, or with `per_head` one matrix per last-layer head. Each is written as
/// CSV and as a PGM heatmap; returns the CSV paths.
pub fn cmd_attn(checkpoint: &Path, cfg: &RunConfig, subject: &str, per_head: bool, out: &Path) -> Result<Vec<PathBuf>> {
    let subject = plain_name(subject)?;
    let (header, model) =
        load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let (_, series) =
        load_series(&cfg.data.dataset).with_context(|| format!("loading dataset {}", cfg.data.dataset.display()))?;
    let Some(s) = series.iter().find(|s| s.table.subject_id() == subject) else {
        bail!("subject {subject:?} is not in {}", cfg.data.dataset.display());
    };
    let g = build_graph(&s.table, cfg.data.threshold)?;
    let (_, e) = embed(&g, header.model.k_hops, cfg.data.kernel)?;
    let (_, record) = model.forward(&g.x, &e)?;
    let last = record.layers.len().saturating_sub(1);
    let mats = if per_head {
        (0..header.model.heads)
            .map(|h| {
                let m = export_attention(&record, AttentionReduction::Head { layer: last, head: h })?;
                Ok((format!("attn_{subject}_head{h}"), m))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![(
            format!("attn_{subject}"),
            export_attention(&record, AttentionReduction::MeanLastLayer)?,
        )]
    };
    let guard = OutputGuard::new(out)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::with_capacity(mats.len());
    for (stem, m) in &mats {
        let csv = out.join(format!("{stem}.csv"));
        write_matrix_csv(&csv, m)?;
        write_text(&out.join(format!("{stem}.pgm")), &format_pgm(m, PGM_CELL))?;
        written.push(csv);
    }
    guard.commit();
    Ok(written)
}
