//! Experiment runner and artifact emission.
//!
//! [`run_experiment`] executes the full pipeline — pre-train, adapt, evaluate
//! — once per seed (seeds fan out across threads; each owns its output
//! subdirectory exclusively) and aggregates the results into a
//! [`MetricsReport`]: per-seed metrics, mean ± std (std is `n/a` under two
//! seeds), wall-clock per stage, and trainable-parameter counts, with the
//! config echoed back. Everything lands under the configured output
//! directory:
//!
//! ```text
//! out/
//!   report.json           aggregated MetricsReport
//!   report.csv            (metric, mean, std) rows
//!   seed_7/
//!     manifest.json       schema-versioned run manifest
//!     training_log.json   per-epoch losses and validation metrics
//!     backbone.ckpt       pre-trained backbone archive
//!     prompt.ckpt         adapted prompt + head archive
//!   ```
//!
//! A run is reconstructible from its manifest alone: the manifest embeds the
//! full config, the seed, and content hashes of both the config and the
//! dataset. Reports are deterministic for a fixed config — rerunning changes
//! only wall-clock fields.
//!
//! [`sweep`] repeats the experiment along one axis (`prompt_fraction`,
//! `prompt_dim`, `pretrain_fraction`) with shared seeds and writes a combined
//! CSV sorted by value. [`report_efficiency`] times one adaptation epoch per
//! regime and counts trainable scalars against full fine-tuning.
//! [`emit_plots`] renders reports to CSV (always) and SVG (best-effort).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{pretrain, PretrainOutcome, TrainingLog};
use crate::checkpoint::{save_backbone, save_prompt};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::LinkEvalReport;
use crate::graph::TemporalGraph;
use crate::orchestrate::{
    adapt, adapt_nc, frozen_link_report, AdaptOutcome, EvalStage, Mode, NcStrategy, Task,
    TaskReport,
};
use crate::split::{chronological_split, mask_inductive_nodes, StageBounds};
use crate::tprog::PromptKind;

/// Version written into every `manifest.json`.
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

// ============================================================================
// Report types
// ============================================================================

/// A metric summarized across seeds. `std` is the sample standard deviation,
/// present only when at least two seeds contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: Option<f64>,
}

impl Aggregate {
    pub fn over(values: &[f64]) -> Aggregate {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Aggregate { mean, std }
    }

    /// `mean ± std`, or `mean (std n/a)` under two seeds.
    pub fn display(&self) -> String {
        match self.std {
            Some(s) => format!("{:.4} ± {:.4}", self.mean, s),
            None => format!("{:.4} (std n/a)", self.mean),
        }
    }
}

/// Wall-clock seconds per pipeline stage. `adapt` includes the adapted
/// model's validation and test evaluations; `baseline_eval` is the frozen
/// no-prompt comparison (link prediction only).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageTiming {
    pub pretrain_seconds: f64,
    pub adapt_seconds: f64,
    pub baseline_eval_seconds: f64,
}

/// Everything one seed produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Best validation AP reached during pre-training.
    pub pretrain_best_val_ap: f64,
    /// Test-stage evaluation of the adapted model.
    pub adapted: TaskReport,
    /// Test-stage evaluation of the frozen backbone without any prompt
    /// (link prediction only).
    pub baseline: Option<LinkEvalReport>,
    /// One comparable number (transductive-else-inductive AP, or AUROC).
    pub headline: f64,
    pub baseline_headline: Option<f64>,
    pub trainable_pretrain: usize,
    pub trainable_adapt: usize,
    pub timing: StageTiming,
}

/// Aggregated outcome of [`run_experiment`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// The config that produced this report, echoed verbatim.
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub dataset_hash: String,
    /// Set by [`sweep`]: which axis produced this report and at what value.
    pub axis: Option<(String, f64)>,
    pub seeds: Vec<SeedResult>,
    /// Headline metric across seeds.
    pub headline: Aggregate,
    /// All named metrics across seeds (`transductive_ap`, `node_auroc`, …).
    pub metrics: BTreeMap<String, Aggregate>,
}

impl MetricsReport {
    /// Human-readable summary for terminals.
    pub fn render_text(&self) -> String {
        let mode = match self.config.paradigm.mode {
            Mode::Prompt => "prompt",
            Mode::PromptFinetune => "prompt_finetune",
        };
        let task = match self.config.paradigm.task {
            Task::LinkPrediction => "link_prediction",
            Task::NodeClassification => "node_classification",
        };
        let mut out = String::new();
        out.push_str(&format!(
            "dataset {} (hash {})\n",
            self.config.data.describe(),
            &self.dataset_hash[..12.min(self.dataset_hash.len())]
        ));
        out.push_str(&format!(
            "paradigm {mode}/{task} with {} prompts, seeds {:?}\n",
            self.config.paradigm.tprog.name(),
            self.config.run.seeds,
        ));
        out.push_str(&format!("headline  {}\n", self.headline.display()));
        for (name, agg) in &self.metrics {
            out.push_str(&format!("{name:<28} {}\n", agg.display()));
        }
        out
    }
}

/// Schema-versioned description of one seed's run; a run is reconstructible
/// from this file alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
    /// `[start, end)` event index per chronological stage.
    pub stage_boundaries: Vec<[usize; 2]>,
    pub wall_clock: StageTiming,
}

/// Per-epoch trajectories written next to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingLogs {
    pub pretrain: TrainingLog,
    pub adapt: TrainingLog,
}

// ============================================================================
// run_experiment
// ============================================================================

/// Execute the configured experiment once per seed and aggregate. All
/// artifacts land under `config.run.out_dir` (see the module docs for the
/// layout).
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    run_with_axis(config, None)
}

fn run_with_axis(
    config: &ExperimentConfig,
    axis: Option<(String, f64)>,
) -> Result<MetricsReport> {
    config.validate()?;
    let graph = config.data.load().map_err(|e| e.in_stage("data"))?;
    let bounds = chronological_split(&graph, &config.split.fractions)
        .map_err(|e| e.in_stage("split"))?;
    let config_hash = config.content_hash();
    let dataset_hash = config.data.content_hash().map_err(|e| e.in_stage("data"))?;

    let out_dir = &config.run.out_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let seeds: Vec<SeedResult> = config
        .run
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, &graph, &bounds, seed, &config_hash, &dataset_hash))
        .collect::<Result<_>>()?;

    let mut report = aggregate(config, &config_hash, &dataset_hash, seeds);
    report.axis = axis;
    write_json(&out_dir.join("report.json"), &report)?;
    write_report_csv(&out_dir.join("report.csv"), &report)?;
    Ok(report)
}

fn run_seed(
    config: &ExperimentConfig,
    graph: &TemporalGraph,
    bounds: &StageBounds,
    seed: u64,
    config_hash: &str,
    dataset_hash: &str,
) -> Result<SeedResult> {
    let dims = config.dims();
    let pcfg = config.pcfg();
    let kind = config.paradigm.tprog;
    let mode = config.paradigm.mode;
    let seed_dir = config.run.out_dir.join(format!("seed_{seed}"));
    std::fs::create_dir_all(&seed_dir)
        .map_err(|e| Error::io(seed_dir.display().to_string(), e))?;

    let inductive = mask_inductive_nodes(graph, bounds, config.split.inductive_fraction, seed)
        .map_err(|e| e.in_stage("split"))?;

    let t0 = Instant::now();
    let pre = pretrain(graph, bounds, &inductive, &dims, &config.pretrain_cfg(), seed)
        .map_err(|e| e.in_stage("pretrain"))?;
    let pretrain_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let outcome = (|| match config.paradigm.task {
        Task::LinkPrediction => adapt(
            graph,
            bounds,
            &inductive,
            &pre,
            &dims,
            &pcfg,
            &config.adapt_cfg(),
            kind,
            mode,
            Task::LinkPrediction,
            seed,
        ),
        Task::NodeClassification => {
            let strategy = config.effective_nc_strategy();
            // Two of the strategies start from a link-prediction-tuned
            // generator, so that run happens first.
            let lp = match strategy {
                NcStrategy::Reinit => None,
                NcStrategy::ReuseFrozen | NcStrategy::InitAndTune => Some(adapt(
                    graph,
                    bounds,
                    &inductive,
                    &pre,
                    &dims,
                    &pcfg,
                    &config.adapt_cfg(),
                    kind,
                    mode,
                    Task::LinkPrediction,
                    seed,
                )?),
            };
            adapt_nc(
                graph,
                bounds,
                &inductive,
                &pre,
                &dims,
                &pcfg,
                &config.adapt_cfg(),
                kind,
                mode,
                strategy,
                lp.as_ref(),
                seed,
            )
        }
    })()
    .map_err(|e| e.in_stage("adapt"))?;
    let adapt_seconds = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let baseline = match config.paradigm.task {
        Task::LinkPrediction => Some(
            frozen_link_report(
                graph,
                bounds,
                &inductive,
                &pre,
                &dims,
                &config.adapt_cfg(),
                EvalStage::Test,
                seed,
            )
            .map_err(|e| e.in_stage("eval"))?,
        ),
        Task::NodeClassification => None,
    };
    let baseline_eval_seconds = t2.elapsed().as_secs_f64();

    let timing = StageTiming {
        pretrain_seconds,
        adapt_seconds,
        baseline_eval_seconds,
    };
    write_artifacts(
        config,
        bounds,
        seed,
        config_hash,
        dataset_hash,
        &seed_dir,
        &pre,
        &outcome,
        &timing,
    )
    .map_err(|e| e.in_stage("artifacts"))?;

    let baseline_headline = baseline.as_ref().map(link_headline);
    Ok(SeedResult {
        seed,
        pretrain_best_val_ap: pre.log.best_val_ap,
        headline: outcome.test_report.headline(),
        baseline_headline,
        adapted: outcome.test_report.clone(),
        baseline,
        trainable_pretrain: pre.params.n_scalars(),
        trainable_adapt: outcome.trainable_scalars,
        timing,
    })
}

fn link_headline(r: &LinkEvalReport) -> f64 {
    r.transductive
        .as_ref()
        .or(r.inductive.as_ref())
        .map(|m| m.ap)
        .unwrap_or(f64::NAN)
}

#[allow(clippy::too_many_arguments)]
fn write_artifacts(
    config: &ExperimentConfig,
    bounds: &StageBounds,
    seed: u64,
    config_hash: &str,
    dataset_hash: &str,
    seed_dir: &Path,
    pre: &PretrainOutcome,
    outcome: &AdaptOutcome,
    timing: &StageTiming,
) -> Result<()> {
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        config: config.clone(),
        config_hash: config_hash.to_string(),
        dataset_hash: dataset_hash.to_string(),
        seed,
        stage_boundaries: bounds
            .stages
            .iter()
            .map(|r| [r.start, r.end])
            .collect(),
        wall_clock: timing.clone(),
    };
    write_json(&seed_dir.join("manifest.json"), &manifest)?;
    write_json(
        &seed_dir.join("training_log.json"),
        &TrainingLogs {
            pretrain: pre.log.clone(),
            adapt: outcome.log.clone(),
        },
    )?;
    save_backbone(
        &seed_dir.join("backbone.ckpt"),
        &pre.params,
        &pre.memory,
        &config.dims(),
        config_hash,
        seed,
    )?;
    save_prompt(
        &seed_dir.join("prompt.ckpt"),
        &outcome.prompt,
        &outcome.head,
        config_hash,
        seed,
    )?;
    Ok(())
}

fn aggregate(
    config: &ExperimentConfig,
    config_hash: &str,
    dataset_hash: &str,
    seeds: Vec<SeedResult>,
) -> MetricsReport {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut push = |name: &str, v: f64| columns.entry(name.to_string()).or_default().push(v);
    for s in &seeds {
        push("pretrain_best_val_ap", s.pretrain_best_val_ap);
        match &s.adapted {
            TaskReport::Link(r) => {
                if let Some(m) = &r.transductive {
                    push("transductive_ap", m.ap);
                    push("transductive_auroc", m.auroc);
                }
                if let Some(m) = &r.inductive {
                    push("inductive_ap", m.ap);
                    push("inductive_auroc", m.auroc);
                }
            }
            TaskReport::Node(m) => {
                push("node_auroc", m.auroc);
                push("node_ap", m.ap);
            }
        }
        if let Some(b) = &s.baseline {
            if let Some(m) = &b.transductive {
                push("baseline_transductive_ap", m.ap);
                push("baseline_transductive_auroc", m.auroc);
            }
            if let Some(m) = &b.inductive {
                push("baseline_inductive_ap", m.ap);
                push("baseline_inductive_auroc", m.auroc);
            }
        }
        if let Some(base) = s.baseline_headline {
            push("headline_margin_vs_frozen", s.headline - base);
        }
    }

    let headline = Aggregate::over(&seeds.iter().map(|s| s.headline).collect::<Vec<_>>());
    let metrics = columns
        .into_iter()
        .map(|(name, values)| (name, Aggregate::over(&values)))
        .collect();
    MetricsReport {
        config: config.clone(),
        config_hash: config_hash.to_string(),
        dataset_hash: dataset_hash.to_string(),
        axis: None,
        seeds,
        headline,
        metrics,
    }
}

// ============================================================================
// Sweeps
// ============================================================================

/// Run the experiment once per axis value with shared seeds. Each value gets
/// its own subdirectory (`<axis>_<value>/`), and a combined
/// `sweep_<axis>.csv` of `(value, mean, std)` rows — sorted by value — lands
/// in the base output directory.
pub fn sweep(config: &ExperimentConfig, axis: &str, values: &[f64]) -> Result<Vec<MetricsReport>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig {
            field: "sweep.values".into(),
            message: "need at least one value".into(),
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));

    let base = config.run.out_dir.clone();
    let mut reports = Vec::with_capacity(sorted.len());
    for &value in &sorted {
        let mut point = config.clone();
        point.apply_axis(axis, value)?;
        point.run.out_dir = base.join(format!("{axis}_{value}"));
        reports.push(run_with_axis(&point, Some((axis.to_string(), value)))?);
    }

    std::fs::create_dir_all(&base).map_err(|e| Error::io(base.display().to_string(), e))?;
    write_sweep_csv(&base.join(format!("sweep_{axis}.csv")), &reports)?;
    Ok(reports)
}

// ============================================================================
// Efficiency
// ============================================================================

/// One timed adaptation regime.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyRow {
    /// `prompt` or `finetune`.
    pub stage: String,
    /// Prompt-generator variant.
    pub kind: String,
    /// Scalars the optimizer updated.
    pub trainable_scalars: usize,
    /// Wall-clock of one training epoch (validation excluded).
    pub epoch_seconds: f64,
    /// One-off embedding-cache build time (0 for on-tape regimes).
    pub cache_seconds: f64,
    /// `trainable_scalars` relative to full fine-tuning.
    pub scalars_vs_finetune: f64,
    /// `epoch_seconds` relative to full fine-tuning.
    pub seconds_vs_finetune: f64,
}

/// Comparison of prompt-only adaptation against full fine-tuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub config_hash: String,
    pub dataset: String,
    pub rows: Vec<EfficiencyRow>,
}

impl EfficiencyReport {
    pub fn render_text(&self) -> String {
        let mut out = format!("dataset {}\n", self.dataset);
        out.push_str(&format!(
            "{:<22} {:>14} {:>12} {:>12} {:>10} {:>10}\n",
            "regime", "trainable", "epoch s", "cache s", "×scalars", "×seconds"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<22} {:>14} {:>12.3} {:>12.3} {:>10.3} {:>10.3}\n",
                format!("{}:{}", r.stage, r.kind),
                r.trainable_scalars,
                r.epoch_seconds,
                r.cache_seconds,
                r.scalars_vs_finetune,
                r.seconds_vs_finetune,
            ));
        }
        out
    }
}

/// Time one adaptation epoch per regime on the configured dataset: frozen
/// prompt tuning for the configured generator plus the `vanilla` and
/// `projection` ones, against one full fine-tune epoch (the reference row).
/// Results land in `efficiency.{json,csv}` under the output directory.
pub fn report_efficiency(config: &ExperimentConfig) -> Result<EfficiencyReport> {
    config.validate()?;
    let graph = config.data.load().map_err(|e| e.in_stage("data"))?;
    let bounds = chronological_split(&graph, &config.split.fractions)
        .map_err(|e| e.in_stage("split"))?;
    let seed = config.run.seeds[0];
    let inductive = mask_inductive_nodes(&graph, &bounds, config.split.inductive_fraction, seed)
        .map_err(|e| e.in_stage("split"))?;
    let dims = config.dims();
    let pcfg = config.pcfg();
    let pre = pretrain(&graph, &bounds, &inductive, &dims, &config.pretrain_cfg(), seed)
        .map_err(|e| e.in_stage("pretrain"))?;

    // One epoch, no early-stopping interplay: epoch_seconds[0] is the number.
    let mut one_epoch = config.adapt_cfg();
    one_epoch.max_epochs = 1;
    one_epoch.patience = 1;
    let measure = |kind: PromptKind, mode: Mode| -> Result<AdaptOutcome> {
        adapt(
            &graph, &bounds, &inductive, &pre, &dims, &pcfg, &one_epoch, kind, mode,
            config.paradigm.task, seed,
        )
        .map_err(|e| e.in_stage("adapt"))
    };

    let finetune = measure(config.paradigm.tprog, Mode::PromptFinetune)?;
    let fin_scalars = finetune.trainable_scalars as f64;
    let fin_seconds = finetune.epoch_seconds[0];

    let mut kinds: Vec<PromptKind> = Vec::new();
    for k in [config.paradigm.tprog, PromptKind::Vanilla, PromptKind::Projection] {
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }

    let mut rows = Vec::new();
    for kind in kinds {
        let out = measure(kind, Mode::Prompt)?;
        rows.push(EfficiencyRow {
            stage: "prompt".into(),
            kind: kind.name().into(),
            trainable_scalars: out.trainable_scalars,
            epoch_seconds: out.epoch_seconds[0],
            cache_seconds: out.cache_seconds,
            scalars_vs_finetune: out.trainable_scalars as f64 / fin_scalars,
            seconds_vs_finetune: out.epoch_seconds[0] / fin_seconds,
        });
    }
    rows.push(EfficiencyRow {
        stage: "finetune".into(),
        kind: config.paradigm.tprog.name().into(),
        trainable_scalars: finetune.trainable_scalars,
        epoch_seconds: fin_seconds,
        cache_seconds: finetune.cache_seconds,
        scalars_vs_finetune: 1.0,
        seconds_vs_finetune: 1.0,
    });

    let report = EfficiencyReport {
        config_hash: config.content_hash(),
        dataset: config.data.describe(),
        rows,
    };
    let out_dir = &config.run.out_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    write_json(&out_dir.join("efficiency.json"), &report)?;
    write_efficiency_csv(&out_dir.join("efficiency.csv"), &report)?;
    Ok(report)
}

// ============================================================================
// Plots
// ============================================================================

/// What `emit_plots` draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Headline metric against a swept axis value: line with error bars.
    Sweep,
    /// One bar per report (labeled by generator and mode) with error bars.
    Comparison,
}

/// Render reports into `out_dir`. The CSV is the contract and is always
/// written; the SVG is best-effort (a failure there is reported in the
/// return value by its absence, never as an error).
pub fn emit_plots(
    reports: &[MetricsReport],
    kind: PlotKind,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::InvalidRequest("no reports to plot".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut written = Vec::new();
    match kind {
        PlotKind::Sweep => {
            let mut rows: Vec<(f64, Aggregate)> = reports
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let value = r.axis.as_ref().map(|(_, v)| *v).unwrap_or(i as f64);
                    (value, r.headline.clone())
                })
                .collect();
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            let axis_name = reports
                .iter()
                .find_map(|r| r.axis.as_ref().map(|(a, _)| a.clone()))
                .unwrap_or_else(|| "value".into());

            let csv = out_dir.join("plot_sweep.csv");
            let mut w = csv::Writer::from_path(&csv)
                .map_err(|e| Error::io(csv.display().to_string(), std::io::Error::other(e)))?;
            w.write_record([axis_name.as_str(), "mean", "std"]).and_then(|_| {
                rows.iter().try_for_each(|(v, a)| {
                    w.write_record([v.to_string(), a.mean.to_string(), std_cell(a)])
                })
            })
            .map_err(|e| Error::io(csv.display().to_string(), std::io::Error::other(e)))?;
            w.flush().map_err(|e| Error::io(csv.display().to_string(), e))?;
            written.push(csv);

            let svg = out_dir.join("plot_sweep.svg");
            if std::fs::write(&svg, svg_sweep(&rows, &axis_name)).is_ok() {
                written.push(svg);
            }
        }
        PlotKind::Comparison => {
            let mut labels_seen: BTreeMap<String, usize> = BTreeMap::new();
            let bars: Vec<(String, Aggregate)> = reports
                .iter()
                .map(|r| {
                    let base = format!(
                        "{}/{}",
                        r.config.paradigm.tprog.name(),
                        match r.config.paradigm.mode {
                            Mode::Prompt => "prompt",
                            Mode::PromptFinetune => "finetune",
                        }
                    );
                    let n = labels_seen.entry(base.clone()).or_insert(0);
                    *n += 1;
                    let label = if *n > 1 { format!("{base} #{n}") } else { base };
                    (label, r.headline.clone())
                })
                .collect();

            let csv = out_dir.join("plot_comparison.csv");
            let mut w = csv::Writer::from_path(&csv)
                .map_err(|e| Error::io(csv.display().to_string(), std::io::Error::other(e)))?;
            w.write_record(["label", "mean", "std"]).and_then(|_| {
                bars.iter().try_for_each(|(label, a)| {
                    w.write_record([label.clone(), a.mean.to_string(), std_cell(a)])
                })
            })
            .map_err(|e| Error::io(csv.display().to_string(), std::io::Error::other(e)))?;
            w.flush().map_err(|e| Error::io(csv.display().to_string(), e))?;
            written.push(csv);

            let svg = out_dir.join("plot_comparison.svg");
            if std::fs::write(&svg, svg_bars(&bars)).is_ok() {
                written.push(svg);
            }
        }
    }
    Ok(written)
}

/// Load every `report.json` under `dir`: the directory's own, then one per
/// immediate subdirectory (sorted by name). Reports with an axis value sort
/// by it.
pub fn load_reports_under(dir: &Path) -> Result<Vec<MetricsReport>> {
    let mut paths = Vec::new();
    let own = dir.join("report.json");
    if own.is_file() {
        paths.push(own);
    }
    if dir.is_dir() {
        let mut subs: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir.display().to_string(), e))?
            .filter_map(|entry| entry.ok().map(|e| e.path().join("report.json")))
            .filter(|p| p.is_file())
            .collect();
        subs.sort();
        paths.extend(subs);
    }
    if paths.is_empty() {
        return Err(Error::InvalidRequest(format!(
            "no report.json found under {}",
            dir.display()
        )));
    }
    let mut reports = Vec::with_capacity(paths.len());
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
        let report: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidRequest(format!("{}: {e}", p.display())))?;
        reports.push(report);
    }
    reports.sort_by(|a, b| {
        let va = a.axis.as_ref().map(|(_, v)| *v).unwrap_or(f64::INFINITY);
        let vb = b.axis.as_ref().map(|(_, v)| *v).unwrap_or(f64::INFINITY);
        va.total_cmp(&vb)
    });
    Ok(reports)
}

// ============================================================================
// File writers
// ============================================================================

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn std_cell(a: &Aggregate) -> String {
    a.std.map(|s| s.to_string()).unwrap_or_else(|| "n/a".into())
}

fn write_report_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    let rows = std::iter::once(("headline".to_string(), report.headline.clone()))
        .chain(report.metrics.iter().map(|(k, v)| (k.clone(), v.clone())));
    w.write_record(["metric", "mean", "std"])
        .and_then(|_| {
            rows.into_iter().try_for_each(|(name, agg)| {
                w.write_record([name, agg.mean.to_string(), std_cell(&agg)])
            })
        })
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_sweep_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    w.write_record(["value", "mean", "std"])
        .and_then(|_| {
            reports.iter().try_for_each(|r| {
                let value = r.axis.as_ref().map(|(_, v)| *v).unwrap_or(f64::NAN);
                w.write_record([
                    value.to_string(),
                    r.headline.mean.to_string(),
                    std_cell(&r.headline),
                ])
            })
        })
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_efficiency_csv(path: &Path, report: &EfficiencyReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    w.write_record([
        "stage",
        "kind",
        "trainable_scalars",
        "epoch_seconds",
        "cache_seconds",
        "scalars_vs_finetune",
        "seconds_vs_finetune",
    ])
    .and_then(|_| {
        report.rows.iter().try_for_each(|r| {
            w.write_record([
                r.stage.clone(),
                r.kind.clone(),
                r.trainable_scalars.to_string(),
                r.epoch_seconds.to_string(),
                r.cache_seconds.to_string(),
                r.scalars_vs_finetune.to_string(),
                r.seconds_vs_finetune.to_string(),
            ])
        })
    })
    .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

// ============================================================================
// SVG rendering (no external backend; kept deliberately small)
// ============================================================================

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_hi - self.x_lo).max(1e-12);
        MARGIN_L + (v - self.x_lo) / span * (SVG_W - MARGIN_L - MARGIN_R)
    }
    fn y(&self, v: f64) -> f64 {
        let span = (self.y_hi - self.y_lo).max(1e-12);
        SVG_H - MARGIN_B - (v - self.y_lo) / span * (SVG_H - MARGIN_T - MARGIN_B)
    }
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        SVG_W / 2.0
    )
}

fn svg_axes(frame: &Frame, x_label: &str) -> String {
    let mut s = String::new();
    let (x0, x1) = (MARGIN_L, SVG_W - MARGIN_R);
    let (y0, y1) = (SVG_H - MARGIN_B, MARGIN_T);
    s.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let v = frame.y_lo + (frame.y_hi - frame.y_lo) * i as f64 / 4.0;
        let y = frame.y(v);
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.3}</text>\n",
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        (x0 + x1) / 2.0,
        SVG_H - 12.0
    ));
    s
}

fn error_bar(x: f64, mean_y: f64, half_px: f64) -> String {
    format!(
        "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        mean_y - half_px,
        mean_y + half_px,
        x - 4.0,
        mean_y - half_px,
        x + 4.0,
        mean_y - half_px,
        x - 4.0,
        mean_y + half_px,
        x + 4.0,
        mean_y + half_px,
    )
}

fn svg_sweep(rows: &[(f64, Aggregate)], axis: &str) -> String {
    let spread = |r: &(f64, Aggregate)| r.1.std.unwrap_or(0.0);
    let y_min = rows.iter().map(|r| r.1.mean - spread(r)).fold(f64::INFINITY, f64::min);
    let y_max = rows.iter().map(|r| r.1.mean + spread(r)).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((y_max - y_min) * 0.1).max(1e-3);
    let frame = Frame {
        x_lo: rows.first().map(|r| r.0).unwrap_or(0.0),
        x_hi: rows.last().map(|r| r.0).unwrap_or(1.0),
        y_lo: y_min - pad,
        y_hi: y_max + pad,
    };
    let mut s = svg_open(&format!("headline vs {axis}"));
    s.push_str(&svg_axes(&frame, axis));
    let pts: Vec<String> = rows
        .iter()
        .map(|(v, a)| format!("{},{}", frame.x(*v), frame.y(a.mean)))
        .collect();
    s.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n",
        pts.join(" ")
    ));
    for (v, a) in rows {
        let (x, y) = (frame.x(*v), frame.y(a.mean));
        if let Some(std) = a.std {
            let half = frame.y(a.mean) - frame.y(a.mean + std);
            s.push_str(&error_bar(x, y, half.abs()));
        }
        s.push_str(&format!(
            "<circle cx=\"{x}\" cy=\"{y}\" r=\"4\" fill=\"steelblue\"/>\n\
             <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{v}</text>\n",
            SVG_H - MARGIN_B + 16.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn svg_bars(bars: &[(String, Aggregate)]) -> String {
    let y_max = bars
        .iter()
        .map(|(_, a)| a.mean + a.std.unwrap_or(0.0))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1e-3);
    let frame = Frame {
        x_lo: 0.0,
        x_hi: bars.len() as f64,
        y_lo: 0.0,
        y_hi: y_max * 1.1,
    };
    let mut s = svg_open("headline by regime");
    s.push_str(&svg_axes(&frame, ""));
    let slot = (SVG_W - MARGIN_L - MARGIN_R) / bars.len() as f64;
    for (i, (label, a)) in bars.iter().enumerate() {
        let cx = frame.x(i as f64 + 0.5);
        let w = slot * 0.6;
        let y = frame.y(a.mean);
        let y0 = frame.y(0.0);
        s.push_str(&format!(
            "<rect x=\"{}\" y=\"{y}\" width=\"{w}\" height=\"{}\" fill=\"steelblue\"/>\n",
            cx - w / 2.0,
            (y0 - y).max(0.0)
        ));
        if let Some(std) = a.std {
            let half = (frame.y(a.mean) - frame.y(a.mean + std)).abs();
            s.push_str(&error_bar(cx, y, half));
        }
        s.push_str(&format!(
            "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{label}</text>\n",
            SVG_H - MARGIN_B + 16.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

// ============================================================================
// Tests
// ============================================================================
