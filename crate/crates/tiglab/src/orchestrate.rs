//! Stage orchestration: adapting a pre-trained backbone to downstream data.
//!
//! Two paradigms share one engine:
//!
//! - **Prompt tuning** ([`prompt_tune`]) trains only the prompt generator,
//!   the fusion MLP ρ, and the task head Φ. The backbone Θ (time encoder
//!   included) stays byte-identical — [`adapt`] verifies this after training
//!   and hard-fails if anything drifted.
//! - **Prompt fine-tuning** ([`prompt_finetune`]) trains Θ jointly with the
//!   prompt parts, all under one learning rate. Optimizer state for Θ is
//!   reset at the stage boundary, so pre-training moments never leak in.
//!
//! Node classification additionally chooses how to initialize its prompt
//! generator from a finished link-prediction run ([`adapt_nc`],
//! [`NcStrategy`]): reuse it frozen, reuse it as initialization, or start
//! from scratch. The fusion MLP and head are always fresh for a new task.
//!
//! # Memory is replayed, not trained
//!
//! Node memory is *state*, not a parameter. Every epoch replays it forward:
//! reset to the pre-training checkpoint's memory, stream the prompt-stage
//! events (training on them), then continue through validation — and, for the
//! final report, test — purely as replay. Under the frozen paradigm the
//! whole trajectory is identical every epoch, which the engine exploits: all
//! backbone embeddings the stage can ever need are computed once into a
//! cache, and epochs reduce to cheap passes over cached rows. Fine-tuning
//! (and input-side static prompts, which alter the backbone's inputs) cannot
//! cache and run on-tape instead. Pre-training-stage memory is treated as
//! part of the checkpoint even while fine-tuning: only the prompt-range
//! replay sees the evolving weights.
//!
//! # Negative sampling
//!
//! Training corruption under the frozen paradigm is drawn once per run
//! (stream [`streams::PROMPT_NEG`]) and reused across epochs — the price of
//! the frozen-trajectory cache. Validation and test corruption always comes
//! from independent evaluation streams, so model selection is unbiased.
//! Fine-tuning redraws training negatives per epoch, matching pre-training.
//!
//! # Data discipline
//!
//! Under inductive masking, training batches and training-time history both
//! exclude events touching masked nodes; evaluation replays the full stream.
//! Gradient and early-stopping provenance land in a [`DisciplineAudit`] so
//! tests can assert that no evaluation event ever fed a gradient.

use std::time::Instant;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::backbone::{
    build_flush, commit_flush, embed_on_tape, score_pairs_plain, seeded_rng, store_raw_messages,
    streams, BackboneDims, DisciplineAudit, EmbedQuery, EpochLog, MemoryState, PretrainOutcome,
    ReplayCursor, TrainCfg, TrainingLog,
};
use crate::error::{Error, Result};
use crate::eval::{
    draw_negatives, evaluate_link_prediction, evaluate_node_classification, LinkEvalReport,
    Metrics,
};
use crate::fusion::{fuse, init_fusion, init_nc_head, link_logits, nc_logits};
use crate::graph::{
    FeatureTable, InteractionEvent, LastInteractionTracker, NeighborIndex, TemporalGraph,
};
use crate::nn::{Adam, Bound, ParamSet};
use crate::split::{filter_training_events, InductiveSpec, StageBounds};
use crate::tprog::{
    build_neighborhoods, init_prompt, static_prompt_rows, transformer_prompt, vanilla_prompt,
    NodeNeighborhood, PromptCfg, PromptKind, PromptQuery, PromptState,
};

// ============================================================================
// Public types
// ============================================================================

/// Adaptation paradigm: what trains alongside the prompt parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Backbone frozen; prompt generator + fusion + head train.
    Prompt,
    /// Backbone trains jointly with the prompt parts.
    PromptFinetune,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Prompt => "prompt",
            Mode::PromptFinetune => "prompt_finetune",
        }
    }
}

/// Downstream task the adapted model is trained and scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    LinkPrediction,
    NodeClassification,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::LinkPrediction => "link_prediction",
            Task::NodeClassification => "node_classification",
        }
    }
}

/// How node classification initializes its prompt generator from a finished
/// link-prediction adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NcStrategy {
    /// Keep the link-tuned generator byte-frozen; train only fusion + head.
    ReuseFrozen,
    /// Start from the link-tuned generator and keep training it.
    InitAndTune,
    /// Fresh generator, trained from scratch.
    Reinit,
}

impl NcStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            NcStrategy::ReuseFrozen => "reuse_frozen",
            NcStrategy::InitAndTune => "init_and_tune",
            NcStrategy::Reinit => "reinit",
        }
    }
}

/// Final evaluation of an adapted model on the test stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskReport {
    Link(LinkEvalReport),
    Node(Metrics),
}

impl TaskReport {
    pub fn link(&self) -> Option<&LinkEvalReport> {
        match self {
            TaskReport::Link(r) => Some(r),
            TaskReport::Node(_) => None,
        }
    }

    pub fn node(&self) -> Option<&Metrics> {
        match self {
            TaskReport::Link(_) => None,
            TaskReport::Node(m) => Some(m),
        }
    }

    /// One comparable number: transductive (else inductive) AP for link
    /// prediction, AUROC for node classification.
    pub fn headline(&self) -> f64 {
        match self {
            TaskReport::Link(r) => link_headline(r),
            TaskReport::Node(m) => m.auroc,
        }
    }
}

fn link_headline(report: &LinkEvalReport) -> f64 {
    report
        .transductive
        .as_ref()
        .or(report.inductive.as_ref())
        .map(|m| m.ap)
        .unwrap_or(0.0)
}

/// Everything an adaptation run produces, at its best validation epoch.
pub struct AdaptOutcome {
    pub kind: PromptKind,
    pub mode: Mode,
    pub task: Task,
    /// Prompt generator parameters.
    pub prompt: PromptState,
    /// Fusion MLP (absent for static prompts) plus the task head.
    pub head: ParamSet,
    /// Backbone Θ — byte-identical to the checkpoint under [`Mode::Prompt`].
    pub backbone: ParamSet,
    /// Memory after replaying the prompt stage at the best epoch.
    pub memory_prompt_end: MemoryState,
    /// Per-epoch train loss and validation metric (AP for link prediction,
    /// AUROC for node classification).
    pub log: TrainingLog,
    pub audit: DisciplineAudit,
    /// Scalars the optimizer actually updated.
    pub trainable_scalars: usize,
    /// Wall-clock seconds per training pass (validation excluded).
    pub epoch_seconds: Vec<f64>,
    /// Wall-clock seconds spent building the embedding cache (0 on-tape).
    pub cache_seconds: f64,
    /// Classes the node head predicts (0 for link prediction).
    pub n_classes: usize,
    /// Test-stage evaluation at the best validation epoch.
    pub test_report: TaskReport,
}

// ============================================================================
// Entry points
// ============================================================================

/// Adapt with the backbone frozen: train prompt generator + fusion + head.
#[allow(clippy::too_many_arguments)]
pub fn prompt_tune(
    graph: &TemporalGraph,
    bounds: &StageBounds,
    inductive: &InductiveSpec,
    pre: &PretrainOutcome,
    dims: &BackboneDims,
    pcfg: &PromptCfg,
    cfg: &TrainCfg,
    kind: PromptKind,
    task: Task,
    seed: u64,
) -> Result<AdaptOutcome> {
    adapt(
        graph, bounds, inductive, pre, dims, pcfg, cfg, kind, Mode::Prompt, task, seed,
    )
}

/// Adapt with the backbone training jointly with the prompt parts.
#[allow(clippy::too_many_arguments)]
pub fn prompt_finetune(
    graph: &TemporalGraph,
    bounds: &StageBounds,
    inductive: &InductiveSpec,
    pre: &PretrainOutcome,
    dims: &BackboneDims,
    pcfg: &PromptCfg,
    cfg: &TrainCfg,
    kind: PromptKind,
    task: Task,
    seed: u64,
) -> Result<AdaptOutcome> {
    adapt(
        graph,
        bounds,
        inductive,
        pre,
        dims,
        pcfg,
        cfg,
        kind,
        Mode::PromptFinetune,
        task,
        seed,
    )
}

/// Adapt to either task under an explicit paradigm with a fresh prompt.
#[allow(clippy::too_many_arguments)]
pub fn adapt(
    graph: &TemporalGraph,
    bounds: &StageBounds,
    inductive: &InductiveSpec,
    pre: &PretrainOutcome,
    dims: &BackboneDims,
    pcfg: &PromptCfg,
    cfg: &TrainCfg,
    kind: PromptKind,
    mode: Mode,
    task: Task,
    seed: u64,
) -> Result<AdaptOutcome> {
    let ctx = Ctx::build(
        graph, bounds, inductive, pre, dims, pcfg, cfg, kind, mode, task, seed,
    )?;
    let prompt = init_prompt(
        kind,
        graph.n_nodes(),
        pcfg,
        graph.edge_feats.dim(),
        graph.node_feats.dim(),
        seed,
    )?;
    run_adaptation(&ctx, prompt, false)
}

/// Node classification with an explicit prompt-transfer strategy.
///
/// `lp` must be a finished link-prediction adaptation of the same prompt
/// kind for [`NcStrategy::ReuseFrozen`] and [`NcStrategy::InitAndTune`];
/// [`NcStrategy::Reinit`] ignores it. Fusion and head start fresh in every
/// strategy; reused generators get fresh optimizer state.
#[allow(clippy::too_many_arguments)]
pub fn adapt_nc(
    graph: &TemporalGraph,
    bounds: &StageBounds,
    inductive: &InductiveSpec,
    pre: &PretrainOutcome,
    dims: &BackboneDims,
    pcfg: &PromptCfg,
    cfg: &TrainCfg,
    kind: PromptKind,
    mode: Mode,
    strategy: NcStrategy,
    lp: Option<&AdaptOutcome>,
    seed: u64,
) -> Result<AdaptOutcome> {
    let ctx = Ctx::build(
        graph,
        bounds,
        inductive,
        pre,
        dims,
        pcfg,
        cfg,
        kind,
        mode,
        Task::NodeClassification,
        seed,
    )?;
    let (prompt, freeze_prompt) = match strategy {
        NcStrategy::Reinit => {
            let prompt = init_prompt(
                kind,
                graph.n_nodes(),
                pcfg,
                graph.edge_feats.dim(),
                graph.node_feats.dim(),
                seed,
            )?;
            (prompt, false)
        }
        NcStrategy::ReuseFrozen | NcStrategy::InitAndTune => {
            let lp = lp.ok_or_else(|| {
                Error::InvalidRequest(format!(
                    "strategy `{}` needs a finished link-prediction adaptation",
                    strategy.name()
                ))
            })?;
            if lp.task != Task::LinkPrediction {
                return Err(Error::InvalidRequest(
                    "prompt transfer must start from a link-prediction run".into(),
                ));
            }
            if lp.kind != kind {
                return Err(Error::InvalidRequest(format!(
                    "prompt transfer kind mismatch: source is {}, requested {}",
                    lp.kind.name(),
                    kind.name()
                )));
            }
            match strategy {
                NcStrategy::ReuseFrozen => (lp.prompt.clone(), true),
                _ => {
                    let prompt = PromptState {
                        kind,
                        params: fresh_params(&lp.prompt.params),
                    };
                    (prompt, false)
                }
            }
        }
    };
    run_adaptation(&ctx, prompt, freeze_prompt)
}

/// Which stage a standalone evaluation scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStage {
    Val,
    Test,
}

/// Score a stage with the *unadapted* checkpoint (its own pre-training head,
/// no prompt) — the baseline every adaptation is compared against. Uses the
/// same negative streams as adapted runs with the same seed.
pub fn frozen_link_report(
    graph: &TemporalGraph,
    bounds: &StageBounds,
    inductive: &InductiveSpec,
    pre: &PretrainOutcome,
    dims: &BackboneDims,
    cfg: &TrainCfg,
    stage: EvalStage,
    seed: u64,
) -> Result<LinkEvalReport> {
    let full_index = NeighborIndex::build(graph);
    let mut cursor = ReplayCursor::new(&pre.params, dims, graph, &full_index, pre.memory.clone());
    if let Some(prompt_range) = bounds.prompt() {
        cursor.advance(&graph.events[prompt_range], cfg.batch_size);
    }
    let (range, eval_seed) = match stage {
        EvalStage::Val => (bounds.val(), val_neg_seed(seed)),
        EvalStage::Test => {
            cursor.advance(&graph.events[bounds.val()], cfg.batch_size);
            (bounds.test(), test_neg_seed(seed))
        }
    };
    let seen = seen_before_val(graph, bounds, inductive);
    evaluate_link_prediction(
        graph,
        range,
        &seen,
        inductive,
        eval_seed,
        cfg.batch_size,
        |batch, negatives| {
            let queries = ReplayCursor::batch_queries(batch, negatives);
            let z = cursor.embed(&queries);
            let scores = score_pairs_plain(&pre.params, "head", &z, batch.len());
            cursor.ingest(batch);
            scores
        },
    )
}

/// Nodes that appear in some unmasked event before the validation stage —
/// the transductive side of the evaluation bucketing.
pub fn seen_before_val(
    graph: &TemporalGraph,
    bounds: &StageBounds,
    inductive: &InductiveSpec,
) -> Vec<bool> {
    let mut seen = vec![false; graph.n_nodes()];
    for e in &graph.events[..bounds.val().start] {
        if !inductive.touches_masked(e) {
            seen[e.src] = true;
            seen[e.dst] = true;
        }
    }
    seen
}

// ============================================================================
// Shared context
// ============================================================================

fn val_neg_seed(seed: u64) -> u64 {
    seed ^ streams::EVAL_NEG
}

fn test_neg_seed(seed: u64) -> u64 {
    (seed ^ streams::EVAL_NEG).wrapping_add(0x7E57_0001)
}

/// Salt separating head initialization from prompt initialization, which
/// shares the same stream id.
const HEAD_INIT_SALT: u64 = 0x4845_4144;

struct Ctx<'a> {
    graph: &'a TemporalGraph,
    bounds: &'a StageBounds,
    inductive: &'a InductiveSpec,
    pre: &'a PretrainOutcome,
    dims: &'a BackboneDims,
    pcfg: &'a PromptCfg,
    cfg: &'a TrainCfg,
    kind: PromptKind,
    mode: Mode,
    task: Task,
    seed: u64,
    /// Classes the node head predicts (0 for link prediction).
    n_classes: usize,
    /// History visible while training: all unmasked events before validation.
    train_index: NeighborIndex,
    /// History visible while evaluating: the full stream.
    full_index: NeighborIndex,
    /// Prompt-stage events with masked endpoints filtered out.
    prompt_events: Vec<InteractionEvent>,
    seen: Vec<bool>,
    /// The frozen time-encoder tensors alone, for binding onto cache tapes
    /// without copying the whole backbone.
    time_view: ParamSet,
}

impl<'a> Ctx<'a> {
    #[allow(clippy::too_many_arguments)]
    fn build(
        graph: &'a TemporalGraph,
        bounds: &'a StageBounds,
        inductive: &'a InductiveSpec,
        pre: &'a PretrainOutcome,
        dims: &'a BackboneDims,
        pcfg: &'a PromptCfg,
        cfg: &'a TrainCfg,
        kind: PromptKind,
        mode: Mode,
        task: Task,
        seed: u64,
    ) -> Result<Ctx<'a>> {
        dims.validate()?;
        // Per-node generators feed the fusion MLP, which absorbs any width;
        // static and transformer prompts are tied to the embedding width
        // (addition for the former, token layout for the latter).
        let width_free = matches!(kind, PromptKind::Vanilla | PromptKind::Projection);
        if !width_free && pcfg.d != dims.d {
            return Err(Error::InvalidConfig {
                field: "prompt.d".into(),
                message: format!(
                    "{} prompts must match backbone width {} (got {})",
                    kind.name(),
                    dims.d,
                    pcfg.d
                ),
            });
        }
        if pcfg.d_t != dims.d_t {
            return Err(Error::InvalidConfig {
                field: "prompt.d_t".into(),
                message: format!(
                    "must match backbone time width {} (got {})",
                    dims.d_t, pcfg.d_t
                ),
            });
        }
        let prompt_range = bounds.prompt().ok_or_else(|| {
            Error::InvalidSplit("adaptation needs a four-stage split with a prompt stage".into())
        })?;
        let prompt_events = filter_training_events(&graph.events[prompt_range], inductive);
        if prompt_events.is_empty() {
            return Err(Error::InvalidSplit(
                "no prompt-stage events left after masking".into(),
            ));
        }
        let n_classes = match task {
            Task::LinkPrediction => 0,
            Task::NodeClassification => {
                let max = graph.events.iter().map(|e| e.label).max().unwrap_or(0);
                if max == 0 {
                    return Err(Error::InvalidRequest(
                        "node classification needs at least two observed classes".into(),
                    ));
                }
                max as usize + 1
            }
        };
        let visible = filter_training_events(&graph.events[..bounds.val().start], inductive);
        let train_index = NeighborIndex::build_from_events(graph.n_nodes(), &visible);
        let full_index = NeighborIndex::build(graph);
        let seen = seen_before_val(graph, bounds, inductive);
        let mut time_view = ParamSet::new();
        time_view.insert("time.omega", pre.params.get("time.omega").clone());
        time_view.insert("time.b", pre.params.get("time.b").clone());
        Ok(Ctx {
            graph,
            bounds,
            inductive,
            pre,
            dims,
            pcfg,
            cfg,
            kind,
            mode,
            task,
            seed,
            n_classes,
            train_index,
            full_index,
            prompt_events,
            seen,
            time_view,
        })
    }

    fn is_link(&self) -> bool {
        self.task == Task::LinkPrediction
    }

    /// Tracker primed with everything training may see before the prompt
    /// stage (unmasked pre-training events).
    fn train_tracker(&self) -> LastInteractionTracker {
        let mut tracker = LastInteractionTracker::new(self.graph.n_nodes());
        for e in filter_training_events(&self.graph.events[self.bounds.pretrain()], self.inductive)
        {
            tracker.observe_event(&e);
        }
        tracker
    }

    /// Tracker primed with the full stream up to `end` (evaluation view).
    fn full_tracker(&self, end: usize) -> LastInteractionTracker {
        let mut tracker = LastInteractionTracker::new(self.graph.n_nodes());
        for e in &self.graph.events[..end] {
            tracker.observe_event(e);
        }
        tracker
    }
}

/// Clone parameter values into a new set with zeroed optimizer state.
fn fresh_params(set: &ParamSet) -> ParamSet {
    let mut out = ParamSet::new();
    for name in set.names() {
        out.insert(name, set.get(name).clone());
    }
    out
}

/// Hard check of the freeze contract: the backbone that comes out of a
/// frozen-paradigm run must be byte-identical to the checkpoint that went in.
pub(crate) fn ensure_frozen(expected: &ParamSet, actual: &ParamSet) -> Result<()> {
    if expected != actual {
        return Err(Error::InvalidRequest(
            "freeze contract violated: backbone parameters changed during prompt adaptation"
                .into(),
        ));
    }
    Ok(())
}

// ============================================================================
// Query assembly and fused embeddings
// ============================================================================

/// Per-query metadata the prompt generators consume alongside embeddings.
struct RowMeta {
    /// Query node per scored row.
    nodes: Vec<usize>,
    /// Time since the query node's previous interaction, per scored row.
    deltas: Vec<f64>,
    /// Token sequences (transformer generator only); `z_row`/`z_self` index
    /// the deduplicated embedding matrix.
    hoods: Option<Vec<NodeNeighborhood>>,
}

/// Queries for one scored batch, in scoring order: `[sources | destinations
/// | negatives]` for link prediction (3n rows), `[sources]` for node
/// classification (n rows). Every query excludes its own event from history.
fn scoring_queries(
    task: Task,
    batch: &[InteractionEvent],
    negatives: &[usize],
) -> Vec<EmbedQuery> {
    match task {
        Task::LinkPrediction => ReplayCursor::batch_queries(batch, negatives),
        Task::NodeClassification => batch
            .iter()
            .map(|e| EmbedQuery {
                node: e.src,
                t: e.t,
                exclude_event: Some(e.idx),
            })
            .collect(),
    }
}

/// Resolve a batch into the embedding queries to compute plus [`RowMeta`].
/// For the transformer generator the queries are the deduplicated token
/// requests (endpoints included); otherwise they are the scoring queries
/// themselves.
fn assemble_queries(
    ctx: &Ctx,
    index: &NeighborIndex,
    tracker: &LastInteractionTracker,
    batch: &[InteractionEvent],
    negatives: &[usize],
) -> (Vec<EmbedQuery>, RowMeta) {
    let scoring = scoring_queries(ctx.task, batch, negatives);
    let nodes: Vec<usize> = scoring.iter().map(|q| q.node).collect();
    let deltas: Vec<f64> = scoring
        .iter()
        .map(|q| tracker.delta_since(q.node, q.t, ctx.graph.t_min))
        .collect();
    if ctx.kind == PromptKind::Transformer {
        let prompt_queries: Vec<PromptQuery> = scoring
            .iter()
            .map(|q| PromptQuery {
                node: q.node,
                t: q.t,
                exclude_event: q.exclude_event,
            })
            .collect();
        let (hoods, rows) = build_neighborhoods(index, &prompt_queries, ctx.pcfg.k_recent);
        (
            rows,
            RowMeta {
                nodes,
                deltas,
                hoods: Some(hoods),
            },
        )
    } else {
        (
            scoring,
            RowMeta {
                nodes,
                deltas,
                hoods: None,
            },
        )
    }
}

/// Prompted embeddings z̃ for one batch, aligned to scoring order. `z` holds
/// one row per assembled query; `tb` must expose the time-encoder tensors,
/// `pb` the prompt generator, `hb` fusion (+ head).
#[allow(clippy::too_many_arguments)]
fn fused_rows(
    tape: &mut Tape,
    tb: &Bound,
    pb: &Bound,
    hb: &Bound,
    kind: PromptKind,
    pcfg: &PromptCfg,
    edge_feats: &FeatureTable,
    z: Var,
    meta: &RowMeta,
) -> Result<Var> {
    match kind {
        PromptKind::Vanilla => {
            let p = vanilla_prompt(tape, pb, &meta.nodes);
            fuse(tape, hb, z, p)
        }
        PromptKind::Projection => {
            let omega = tb.var("time.omega");
            let b = tb.var("time.b");
            let p = crate::tprog::projection_prompt(tape, pb, &meta.nodes, &meta.deltas, omega, b);
            fuse(tape, hb, z, p)
        }
        PromptKind::Transformer => {
            let hoods = meta.hoods.as_ref().expect("transformer metadata");
            let omega = tb.var("time.omega");
            let b = tb.var("time.b");
            let p = transformer_prompt(tape, pb, pcfg, edge_feats, omega, b, z, hoods);
            let self_rows: Vec<usize> = hoods.iter().map(|h| h.z_self).collect();
            let z_sel = tape.gather_rows(z, &self_rows);
            fuse(tape, hb, z_sel, p)
        }
        PromptKind::StaticOutput => {
            let srows = static_prompt_rows(tape, pb, meta.nodes.len());
            Ok(tape.add(z, srows))
        }
        // Input-side prompts act before the backbone; z is already prompted.
        PromptKind::StaticInput => Ok(z),
    }
}

/// Pair loss over prompted embeddings in scoring order (3n rows).
fn link_loss(tape: &mut Tape, hb: &Bound, zt: Var, n: usize) -> Var {
    let left: Vec<usize> = (0..n).chain(0..n).collect();
    let right: Vec<usize> = (n..2 * n).chain(2 * n..3 * n).collect();
    let lz = tape.gather_rows(zt, &left);
    let rz = tape.gather_rows(zt, &right);
    let logits = link_logits(tape, hb, lz, rz);
    let mut targets = Array2::zeros((2 * n, 1));
    targets.slice_mut(s![..n, ..]).fill(1.0);
    tape.bce_with_logits_mean(logits, targets)
}

/// (positive, negative) logits per event from prompted embeddings (3n rows).
fn link_pair_scores(tape: &mut Tape, hb: &Bound, zt: Var, n: usize) -> Vec<(f64, f64)> {
    let left: Vec<usize> = (0..n).chain(0..n).collect();
    let right: Vec<usize> = (n..2 * n).chain(2 * n..3 * n).collect();
    let lz = tape.gather_rows(zt, &left);
    let rz = tape.gather_rows(zt, &right);
    let logits = link_logits(tape, hb, lz, rz);
    let vals = tape.value(logits);
    (0..n).map(|i| (vals[(i, 0)], vals[(n + i, 0)])).collect()
}

/// Probability of class 1 per event from prompted embeddings (n rows).
fn nc_probs(tape: &mut Tape, hb: &Bound, zt: Var) -> Vec<f64> {
    let logits = nc_logits(tape, hb, zt, None);
    let probs = tape.softmax_rows(logits);
    let vals = tape.value(probs);
    (0..vals.nrows()).map(|i| vals[(i, 1)]).collect()
}

// ============================================================================
// Frozen-trajectory embedding cache
// ============================================================================

/// One scored batch's cached inputs.
struct CachedBatch {
    /// Original index of the first event (order check against the evaluator).
    first_idx: usize,
    /// Min/max original event index (gradient provenance).
    idx_lo: usize,
    idx_hi: usize,
    /// Events scored.
    n: usize,
    /// Row offset/count of this batch's slice of the cache matrix.
    z0: usize,
    rows: usize,
    meta: RowMeta,
    /// Negative destinations drawn at build time (link prediction).
    negs: Vec<usize>,
    /// Source labels (node classification).
    labels: Vec<usize>,
}

/// Every backbone embedding a frozen-paradigm run can need, computed once.
struct FrozenCache {
    /// total_rows × d.
    z: Array2<f64>,
    train: Vec<CachedBatch>,
    val: Vec<CachedBatch>,
    /// Memory after the prompt-stage replay (identical every epoch).
    state_prompt_end: MemoryState,
    seconds: f64,
}

fn build_cache(ctx: &Ctx) -> Result<FrozenCache> {
    let t0 = Instant::now();
    let d = ctx.dims.d;
    let mut zbuf: Vec<f64> = Vec::new();
    let mut total_rows = 0usize;
    let record = |cursor: &mut ReplayCursor,
                      index: &NeighborIndex,
                      tracker: &LastInteractionTracker,
                      batch: &[InteractionEvent],
                      negs: Vec<usize>,
                      zbuf: &mut Vec<f64>,
                      total_rows: &mut usize|
     -> CachedBatch {
        let (queries, meta) = assemble_queries(ctx, index, tracker, batch, &negs);
        let z = cursor.embed(&queries);
        debug_assert_eq!(z.ncols(), d);
        zbuf.extend(z.iter().copied());
        let z0 = *total_rows;
        *total_rows += z.nrows();
        CachedBatch {
            first_idx: batch[0].idx,
            idx_lo: batch.iter().map(|e| e.idx).min().unwrap(),
            idx_hi: batch.iter().map(|e| e.idx).max().unwrap(),
            n: batch.len(),
            z0,
            rows: z.nrows(),
            meta,
            negs,
            labels: batch.iter().map(|e| e.label as usize).collect(),
        }
    };

    // Prompt stage: training view (masked events hidden, training history).
    let mut train = Vec::new();
    let mut cursor = ReplayCursor::new(
        &ctx.pre.params,
        ctx.dims,
        ctx.graph,
        &ctx.train_index,
        ctx.pre.memory.clone(),
    );
    let mut tracker = ctx.train_tracker();
    let mut neg_rng = seeded_rng(ctx.seed, streams::PROMPT_NEG);
    for batch in ctx.prompt_events.chunks(ctx.cfg.batch_size) {
        let negs = if ctx.is_link() {
            draw_negatives(&mut neg_rng, ctx.graph, batch.len())
        } else {
            Vec::new()
        };
        train.push(record(
            &mut cursor,
            &ctx.train_index,
            &tracker,
            batch,
            negs,
            &mut zbuf,
            &mut total_rows,
        ));
        cursor.ingest(batch);
        for e in batch {
            tracker.observe_event(e);
        }
    }
    cursor.flush_now();
    let state_prompt_end = cursor.into_state();

    // Validation stage: evaluation view (full stream, evaluation negatives).
    let mut val = Vec::new();
    let mut cursor = ReplayCursor::new(
        &ctx.pre.params,
        ctx.dims,
        ctx.graph,
        &ctx.full_index,
        state_prompt_end.clone(),
    );
    let val_range = ctx.bounds.val();
    let mut tracker = ctx.full_tracker(val_range.start);
    let mut val_rng = ChaCha12Rng::seed_from_u64(val_neg_seed(ctx.seed));
    for batch in ctx.graph.events[val_range].chunks(ctx.cfg.batch_size) {
        let negs = if ctx.is_link() {
            draw_negatives(&mut val_rng, ctx.graph, batch.len())
        } else {
            Vec::new()
        };
        val.push(record(
            &mut cursor,
            &ctx.full_index,
            &tracker,
            batch,
            negs,
            &mut zbuf,
            &mut total_rows,
        ));
        cursor.ingest(batch);
        for e in batch {
            tracker.observe_event(e);
        }
    }

    let z = Array2::from_shape_vec((total_rows, d), zbuf)
        .expect("cache row accounting matches buffer length");
    Ok(FrozenCache {
        z,
        train,
        val,
        state_prompt_end,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Prompted embeddings for one cached batch on a fresh tape.
fn cached_batch_zt(
    tape: &mut Tape,
    ctx: &Ctx,
    cache: &FrozenCache,
    cb: &CachedBatch,
    tb: &Bound,
    pb: &Bound,
    hb: &Bound,
) -> Var {
    let rows = cache.z.slice(s![cb.z0..cb.z0 + cb.rows, ..]).to_owned();
    let z = tape.constant(rows);
    fused_rows(
        tape,
        tb,
        pb,
        hb,
        ctx.kind,
        ctx.pcfg,
        &ctx.graph.edge_feats,
        z,
        &cb.meta,
    )
    .expect("dimensions validated at context build")
}

/// One training pass over the cached prompt stage; returns mean batch loss.
#[allow(clippy::too_many_arguments)]
fn cached_epoch(
    ctx: &Ctx,
    cache: &FrozenCache,
    prompt: &mut PromptState,
    head: &mut ParamSet,
    freeze_prompt: bool,
    adam: &mut Adam,
    audit: &mut DisciplineAudit,
    drop_rng: &mut ChaCha12Rng,
) -> Result<f64> {
    let mut loss_sum = 0.0;
    for cb in &cache.train {
        let mut tape = Tape::new();
        let tb = ctx.time_view.bind(&mut tape);
        let pb = prompt.params.bind(&mut tape);
        let hb = head.bind(&mut tape);
        let zt = cached_batch_zt(&mut tape, ctx, cache, cb, &tb, &pb, &hb);
        let loss = match ctx.task {
            Task::LinkPrediction => link_loss(&mut tape, &hb, zt, cb.n),
            Task::NodeClassification => {
                let logits = nc_logits(&mut tape, &hb, zt, Some(drop_rng));
                tape.softmax_cross_entropy_mean(logits, cb.labels.clone())
            }
        };
        tape.backward(loss);
        if !freeze_prompt {
            adam.step(&mut prompt.params, &tape, &pb);
        }
        adam.step(head, &tape, &hb);
        audit.grad_event_ranges.push((cb.idx_lo, cb.idx_hi));
        loss_sum += tape.value(loss)[(0, 0)];
    }
    Ok(loss_sum / cache.train.len().max(1) as f64)
}

/// Validation metric from cached rows, assembled through the standard
/// evaluation protocol (same negative stream, same score order).
fn cached_val_metric(
    ctx: &Ctx,
    cache: &FrozenCache,
    prompt: &PromptState,
    head: &ParamSet,
    audit: &mut DisciplineAudit,
) -> Result<f64> {
    let val_range = ctx.bounds.val();
    audit
        .early_stop_ranges
        .push((val_range.start, val_range.end));
    let mut batches = cache.val.iter();
    let mut score = |expected_first: usize, negs: &[usize]| -> (Vec<(f64, f64)>, Vec<f64>) {
        let cb = batches.next().expect("cache covers the validation stage");
        debug_assert_eq!(cb.first_idx, expected_first, "cache/evaluator batch drift");
        debug_assert_eq!(cb.negs, negs, "cache/evaluator negative drift");
        let mut tape = Tape::new();
        let tb = ctx.time_view.bind(&mut tape);
        let pb = prompt.params.bind(&mut tape);
        let hb = head.bind(&mut tape);
        let zt = cached_batch_zt(&mut tape, ctx, cache, cb, &tb, &pb, &hb);
        match ctx.task {
            Task::LinkPrediction => (link_pair_scores(&mut tape, &hb, zt, cb.n), Vec::new()),
            Task::NodeClassification => (Vec::new(), nc_probs(&mut tape, &hb, zt)),
        }
    };
    match ctx.task {
        Task::LinkPrediction => {
            let report = evaluate_link_prediction(
                ctx.graph,
                val_range,
                &ctx.seen,
                ctx.inductive,
                val_neg_seed(ctx.seed),
                ctx.cfg.batch_size,
                |batch, negs| score(batch[0].idx, negs).0,
            )?;
            Ok(link_headline(&report))
        }
        Task::NodeClassification => {
            let metrics = evaluate_node_classification(
                ctx.graph,
                val_range,
                ctx.cfg.batch_size,
                |batch| score(batch[0].idx, &[]).1,
            )?;
            Ok(metrics.auroc)
        }
    }
}

// ============================================================================
// On-tape training (fine-tuning and input-side prompts)
// ============================================================================

/// One training pass replaying the prompt stage on the live tape. Returns
/// (mean batch loss, memory after the stage).
#[allow(clippy::too_many_arguments)]
fn ontape_epoch(
    ctx: &Ctx,
    epoch: usize,
    prompt: &mut PromptState,
    head: &mut ParamSet,
    backbone: &mut ParamSet,
    train_backbone: bool,
    freeze_prompt: bool,
    adam: &mut Adam,
    audit: &mut DisciplineAudit,
) -> Result<(f64, MemoryState)> {
    let mut state = ctx.pre.memory.clone();
    // Frozen paradigm keeps one corruption set across epochs (matching the
    // cached strategy); fine-tuning redraws per epoch like pre-training.
    let neg_stream = match ctx.mode {
        Mode::Prompt => streams::PROMPT_NEG,
        Mode::PromptFinetune => streams::PROMPT_NEG | ((epoch as u64) << 8),
    };
    let mut neg_rng = seeded_rng(ctx.seed, neg_stream);
    let mut drop_rng = seeded_rng(ctx.seed, streams::DROPOUT | ((epoch as u64) << 8));
    let mut tracker = ctx.train_tracker();
    let mut loss_sum = 0.0;
    let mut n_batches = 0usize;
    for batch in ctx.prompt_events.chunks(ctx.cfg.batch_size) {
        let negs = if ctx.is_link() {
            draw_negatives(&mut neg_rng, ctx.graph, batch.len())
        } else {
            Vec::new()
        };
        let mut tape = Tape::new();
        let bb = backbone.bind(&mut tape);
        let pb = prompt.params.bind(&mut tape);
        let hb = head.bind(&mut tape);
        let plan = build_flush(&mut tape, &bb, ctx.dims, &state);
        let (queries, meta) = assemble_queries(ctx, &ctx.train_index, &tracker, batch, &negs);
        let feat_add = (ctx.kind == PromptKind::StaticInput).then(|| pb.var("prompt.static"));
        let z = embed_on_tape(
            &mut tape,
            &bb,
            ctx.dims,
            ctx.graph,
            &ctx.train_index,
            &state,
            plan.as_ref(),
            &queries,
            feat_add,
            if train_backbone {
                Some(&mut drop_rng)
            } else {
                None
            },
        );
        let zt = fused_rows(
            &mut tape,
            &bb,
            &pb,
            &hb,
            ctx.kind,
            ctx.pcfg,
            &ctx.graph.edge_feats,
            z,
            &meta,
        )?;
        let loss = match ctx.task {
            Task::LinkPrediction => link_loss(&mut tape, &hb, zt, batch.len()),
            Task::NodeClassification => {
                let logits = nc_logits(&mut tape, &hb, zt, Some(&mut drop_rng));
                let labels = batch.iter().map(|e| e.label as usize).collect();
                tape.softmax_cross_entropy_mean(logits, labels)
            }
        };
        tape.backward(loss);
        if !freeze_prompt {
            adam.step(&mut prompt.params, &tape, &pb);
        }
        adam.step(head, &tape, &hb);
        if train_backbone {
            adam.step(backbone, &tape, &bb);
        }
        audit.note_grad_batch(batch);
        loss_sum += tape.value(loss)[(0, 0)];
        n_batches += 1;
        if let Some(plan) = &plan {
            commit_flush(&mut state, &tape, plan);
        }
        store_raw_messages(&mut state, ctx.graph, batch);
        for e in batch {
            tracker.observe_event(e);
        }
    }
    Ok((loss_sum / n_batches.max(1) as f64, state))
}

/// Score one evaluation batch with frozen current parameters: embed through
/// the cursor, prompt and fuse on a throwaway tape.
#[allow(clippy::too_many_arguments)]
fn frozen_batch_scores(
    ctx: &Ctx,
    cursor: &mut ReplayCursor,
    tracker: &LastInteractionTracker,
    backbone: &ParamSet,
    prompt: &PromptState,
    head: &ParamSet,
    batch: &[InteractionEvent],
    negs: &[usize],
) -> (Vec<(f64, f64)>, Vec<f64>) {
    let (queries, meta) = assemble_queries(ctx, &ctx.full_index, tracker, batch, negs);
    let feat_add = (ctx.kind == PromptKind::StaticInput)
        .then(|| prompt.params.get("prompt.static").clone());
    let z = cursor.embed_with_feat(&queries, feat_add.as_ref());
    let mut tape = Tape::new();
    let bb = backbone.bind(&mut tape);
    let pb = prompt.params.bind(&mut tape);
    let hb = head.bind(&mut tape);
    let zc = tape.constant(z);
    let zt = fused_rows(
        &mut tape,
        &bb,
        &pb,
        &hb,
        ctx.kind,
        ctx.pcfg,
        &ctx.graph.edge_feats,
        zc,
        &meta,
    )
    .expect("dimensions validated at context build");
    match ctx.task {
        Task::LinkPrediction => (link_pair_scores(&mut tape, &hb, zt, batch.len()), Vec::new()),
        Task::NodeClassification => (Vec::new(), nc_probs(&mut tape, &hb, zt)),
    }
}

/// Validation metric by replaying from the epoch's prompt-end memory.
fn ontape_val_metric(
    ctx: &Ctx,
    backbone: &ParamSet,
    prompt: &PromptState,
    head: &ParamSet,
    state_prompt_end: &MemoryState,
    audit: &mut DisciplineAudit,
) -> Result<f64> {
    let val_range = ctx.bounds.val();
    audit
        .early_stop_ranges
        .push((val_range.start, val_range.end));
    let mut cursor = ReplayCursor::new(
        backbone,
        ctx.dims,
        ctx.graph,
        &ctx.full_index,
        state_prompt_end.clone(),
    );
    let mut tracker = ctx.full_tracker(val_range.start);
    match ctx.task {
        Task::LinkPrediction => {
            let report = evaluate_link_prediction(
                ctx.graph,
                val_range,
                &ctx.seen,
                ctx.inductive,
                val_neg_seed(ctx.seed),
                ctx.cfg.batch_size,
                |batch, negs| {
                    let scores =
                        frozen_batch_scores(ctx, &mut cursor, &tracker, backbone, prompt, head, batch, negs)
                            .0;
                    cursor.ingest(batch);
                    for e in batch {
                        tracker.observe_event(e);
                    }
                    scores
                },
            )?;
            Ok(link_headline(&report))
        }
        Task::NodeClassification => {
            let metrics = evaluate_node_classification(
                ctx.graph,
                val_range,
                ctx.cfg.batch_size,
                |batch| {
                    let probs =
                        frozen_batch_scores(ctx, &mut cursor, &tracker, backbone, prompt, head, batch, &[])
                            .1;
                    cursor.ingest(batch);
                    for e in batch {
                        tracker.observe_event(e);
                    }
                    probs
                },
            )?;
            Ok(metrics.auroc)
        }
    }
}

/// Test-stage report at the selected epoch: replay validation as pure state
/// advancement, then score the test stage.
fn final_test_report(
    ctx: &Ctx,
    backbone: &ParamSet,
    prompt: &PromptState,
    head: &ParamSet,
    memory_prompt_end: &MemoryState,
) -> Result<TaskReport> {
    let mut cursor = ReplayCursor::new(
        backbone,
        ctx.dims,
        ctx.graph,
        &ctx.full_index,
        memory_prompt_end.clone(),
    );
    cursor.advance(&ctx.graph.events[ctx.bounds.val()], ctx.cfg.batch_size);
    let test_range = ctx.bounds.test();
    let mut tracker = ctx.full_tracker(test_range.start);
    match ctx.task {
        Task::LinkPrediction => {
            let report = evaluate_link_prediction(
                ctx.graph,
                test_range,
                &ctx.seen,
                ctx.inductive,
                test_neg_seed(ctx.seed),
                ctx.cfg.batch_size,
                |batch, negs| {
                    let scores =
                        frozen_batch_scores(ctx, &mut cursor, &tracker, backbone, prompt, head, batch, negs)
                            .0;
                    cursor.ingest(batch);
                    for e in batch {
                        tracker.observe_event(e);
                    }
                    scores
                },
            )?;
            Ok(TaskReport::Link(report))
        }
        Task::NodeClassification => {
            let metrics = evaluate_node_classification(
                ctx.graph,
                test_range,
                ctx.cfg.batch_size,
                |batch| {
                    let probs =
                        frozen_batch_scores(ctx, &mut cursor, &tracker, backbone, prompt, head, batch, &[])
                            .1;
                    cursor.ingest(batch);
                    for e in batch {
                        tracker.observe_event(e);
                    }
                    probs
                },
            )?;
            Ok(TaskReport::Node(metrics))
        }
    }
}

// ============================================================================
// The adaptation engine
// ============================================================================

type Snapshot = (PromptState, ParamSet, ParamSet, MemoryState);

fn run_adaptation(ctx: &Ctx, prompt_init: PromptState, freeze_prompt: bool) -> Result<AdaptOutcome> {
    let mut prompt = prompt_init;
    let mut head = ParamSet::new();
    let mut head_rng = seeded_rng(ctx.seed ^ HEAD_INIT_SALT, streams::PROMPT_INIT);
    if !ctx.kind.is_static() {
        init_fusion(&mut head, ctx.dims.d, ctx.pcfg.d, &mut head_rng);
    }
    match ctx.task {
        // Link prediction continues the pre-trained scorer: the head keeps
        // training through adaptation (with fresh optimizer moments), it is
        // not re-drawn. Together with the identity-start fusion this puts
        // the first adaptation epoch at the frozen model's predictions.
        Task::LinkPrediction => {
            for part in ["l1.w", "l1.b", "l2.w", "l2.b"] {
                head.insert(&format!("phi.{part}"), ctx.pre.params.get(&format!("head.{part}")).clone());
            }
        }
        // The node head has no pre-trained counterpart; it is the one piece
        // that always starts fresh.
        Task::NodeClassification => {
            init_nc_head(&mut head, ctx.dims.d, ctx.n_classes, &mut head_rng)
        }
    }
    let train_backbone = ctx.mode == Mode::PromptFinetune;
    // Fine-tuning updates the checkpoint's values but never inherits its
    // optimizer moments; the frozen paradigm keeps the set byte-identical.
    let mut backbone = if train_backbone {
        fresh_params(&ctx.pre.params)
    } else {
        ctx.pre.params.clone()
    };
    let cache = if !train_backbone && ctx.kind != PromptKind::StaticInput {
        Some(build_cache(ctx)?)
    } else {
        None
    };
    let cache_seconds = cache.as_ref().map(|c| c.seconds).unwrap_or(0.0);

    let mut adam = Adam::new(ctx.cfg.lr);
    let mut audit = DisciplineAudit::default();
    let mut log = TrainingLog::default();
    let mut epoch_seconds = Vec::new();

    // A freshly initialized adaptation reproduces the frozen checkpoint:
    // fusion starts as the identity on z, prompt tables start at zero, and
    // the link head continues the pre-trained scorer. Measure that state on
    // validation before the first update and make it the snapshot to beat,
    // so a run never ships a model that early stopping judged worse than not
    // adapting at all. The on-tape path derives the initial prompt-stage
    // memory through the regular epoch code with a zero-rate optimizer over
    // throwaway clones (a zero step keeps values bit-identical but would
    // pollute Adam's moments, hence the clones).
    let init_state = match &cache {
        Some(cache) => cache.state_prompt_end.clone(),
        None => {
            let mut scratch_adam = Adam::new(0.0);
            let mut scratch_audit = DisciplineAudit::default();
            ontape_epoch(
                ctx,
                0,
                &mut prompt.clone(),
                &mut head.clone(),
                &mut backbone.clone(),
                train_backbone,
                freeze_prompt,
                &mut scratch_adam,
                &mut scratch_audit,
            )?
            .1
        }
    };
    let init_val = match &cache {
        Some(cache) => cached_val_metric(ctx, cache, &prompt, &head, &mut audit)?,
        None => ontape_val_metric(ctx, &backbone, &prompt, &head, &init_state, &mut audit)?,
    };
    log.init_val_ap = Some(init_val);
    log.kept_init = true;
    log.best_val_ap = init_val;
    let mut best: Option<Snapshot> =
        Some((prompt.clone(), head.clone(), backbone.clone(), init_state));
    let mut best_val = init_val;
    let mut since_best = 0usize;

    for epoch in 0..ctx.cfg.max_epochs {
        let t0 = Instant::now();
        let (train_loss, state_prompt_end) = match &cache {
            Some(cache) => {
                let mut drop_rng = seeded_rng(ctx.seed, streams::DROPOUT | ((epoch as u64) << 8));
                let loss = cached_epoch(
                    ctx,
                    cache,
                    &mut prompt,
                    &mut head,
                    freeze_prompt,
                    &mut adam,
                    &mut audit,
                    &mut drop_rng,
                )?;
                (loss, cache.state_prompt_end.clone())
            }
            None => ontape_epoch(
                ctx,
                epoch,
                &mut prompt,
                &mut head,
                &mut backbone,
                train_backbone,
                freeze_prompt,
                &mut adam,
                &mut audit,
            )?,
        };
        epoch_seconds.push(t0.elapsed().as_secs_f64());
        if !train_loss.is_finite() {
            return Err(Error::InvalidRequest(format!(
                "adaptation diverged at epoch {epoch} (non-finite loss)"
            )));
        }
        let val_metric = match &cache {
            Some(cache) => cached_val_metric(ctx, cache, &prompt, &head, &mut audit)?,
            None => ontape_val_metric(ctx, &backbone, &prompt, &head, &state_prompt_end, &mut audit)?,
        };
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_ap: val_metric,
        });
        if val_metric > best_val {
            best_val = val_metric;
            log.best_epoch = epoch;
            log.best_val_ap = val_metric;
            log.kept_init = false;
            best = Some((
                prompt.clone(),
                head.clone(),
                backbone.clone(),
                state_prompt_end,
            ));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= ctx.cfg.patience {
                break;
            }
        }
    }

    let (prompt, head, backbone, memory_prompt_end) = best.expect("snapshot seeded at init");
    if !train_backbone {
        ensure_frozen(&ctx.pre.params, &backbone)?;
    }
    let test_report = final_test_report(ctx, &backbone, &prompt, &head, &memory_prompt_end)?;
    let trainable_scalars = if freeze_prompt {
        0
    } else {
        prompt.params.n_scalars()
    } + head.n_scalars()
        + if train_backbone {
            backbone.n_scalars()
        } else {
            0
        };
    Ok(AdaptOutcome {
        kind: ctx.kind,
        mode: ctx.mode,
        task: ctx.task,
        prompt,
        head,
        backbone,
        memory_prompt_end,
        log,
        audit,
        trainable_scalars,
        epoch_seconds,
        cache_seconds,
        n_classes: ctx.n_classes,
        test_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::pretrain;
    use crate::split::{chronological_split, mask_inductive_nodes};
    use crate::synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec};

    fn small_dims() -> BackboneDims {
        BackboneDims {
            d: 16,
            d_mem: 16,
            d_t: 8,
            n_heads: 2,
            k_recent: 5,
            dropout: 0.1,
        }
    }

    fn small_pcfg() -> PromptCfg {
        PromptCfg {
            d: 16,
            d_pos: 4,
            k_recent: 5,
            n_heads: 2,
            d_t: 8,
        }
    }

    fn small_cfg(max_epochs: usize) -> TrainCfg {
        TrainCfg {
            batch_size: 50,
            lr: 1e-3,
            max_epochs,
            patience: 3,
        }
    }

    struct Fixture {
        graph: TemporalGraph,
        bounds: StageBounds,
        inductive: InductiveSpec,
        pre: PretrainOutcome,
    }

    fn fixture(kind: SyntheticKind, n_events: usize, seed: u64) -> Fixture {
        let mut spec = SyntheticSpec::new(kind, 20, 12, n_events, seed);
        spec.node_feature_dim = 16;
        let graph = generate_synthetic(&spec).unwrap();
        let bounds = chronological_split(&graph, &[0.5, 0.2, 0.15, 0.15]).unwrap();
        let inductive = InductiveSpec::none(graph.n_nodes());
        let pre = pretrain(
            &graph,
            &bounds,
            &inductive,
            &small_dims(),
            &small_cfg(2),
            seed,
        )
        .unwrap();
        Fixture {
            graph,
            bounds,
            inductive,
            pre,
        }
    }

    fn tune(fx: &Fixture, kind: PromptKind, cfg: &TrainCfg, seed: u64) -> AdaptOutcome {
        prompt_tune(
            &fx.graph,
            &fx.bounds,
            &fx.inductive,
            &fx.pre,
            &small_dims(),
            &small_pcfg(),
            cfg,
            kind,
            Task::LinkPrediction,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn test_freeze_contract_checker_rejects_drift() {
        let mut rng = seeded_rng(3, streams::INIT);
        let mut a = ParamSet::new();
        a.insert("w", crate::nn::xavier_uniform(3, 3, &mut rng));
        let b = a.clone();
        ensure_frozen(&a, &b).unwrap();
        let mut c = a.clone();
        c.get_mut("w")[(0, 0)] += 1e-12;
        assert!(ensure_frozen(&a, &c).is_err(), "any drift must hard-fail");
    }

    #[test]
    fn test_prompt_mode_keeps_backbone_frozen_and_counts_trainables() {
        let fx = fixture(SyntheticKind::PlantedRepeat, 400, 11);
        let out = tune(&fx, PromptKind::Vanilla, &small_cfg(2), 11);
        assert_eq!(out.backbone, fx.pre.params, "backbone must stay byte-identical");
        let expected = out.prompt.params.n_scalars() + out.head.n_scalars();
        assert_eq!(out.trainable_scalars, expected);
        assert!(out.cache_seconds > 0.0, "frozen paradigm builds a cache");
        assert!(out.test_report.link().is_some());
    }

    /// Prompt width is independent of the backbone for per-node generators:
    /// a narrow projection prompt trains end-to-end (fusion absorbs the
    /// width), while a static prompt — added directly to z — must match.
    #[test]
    fn test_narrow_prompt_width_trains_for_fused_kinds_only() {
        let fx = fixture(SyntheticKind::PlantedRepeat, 400, 17);
        let mut pcfg = small_pcfg();
        pcfg.d = 6;
        let out = prompt_tune(
            &fx.graph,
            &fx.bounds,
            &fx.inductive,
            &fx.pre,
            &small_dims(),
            &pcfg,
            &small_cfg(2),
            PromptKind::Projection,
            Task::LinkPrediction,
            17,
        )
        .unwrap();
        assert_eq!(out.head.get("rho.l1.w").nrows(), 16 + 6);
        let ap = out.test_report.headline();
        assert!(ap.is_finite() && ap > 0.0 && ap <= 1.0);

        let err = prompt_tune(
            &fx.graph,
            &fx.bounds,
            &fx.inductive,
            &fx.pre,
            &small_dims(),
            &pcfg,
            &small_cfg(1),
            PromptKind::StaticOutput,
            Task::LinkPrediction,
            17,
        );
        assert!(err.is_err(), "static prompts add to z and must match its width");
    }

    #[test]
    fn test_finetune_moves_backbone_and_adds_its_scalars() {
        let fx = fixture(SyntheticKind::PlantedRepeat, 400, 13);
        let cfg = small_cfg(2);
        let tuned = tune(&fx, PromptKind::Vanilla, &cfg, 13);
        let fine = prompt_finetune(
            &fx.graph,
            &fx.bounds,
            &fx.inductive,
            &fx.pre,
            &small_dims(),
            &small_pcfg(),
            &cfg,
            PromptKind::Vanilla,
            Task::LinkPrediction,
            13,
        )
        .unwrap();
        assert_ne!(fine.backbone, fx.pre.params, "fine-tuning must move Θ");
        assert_eq!(
            fine.trainable_scalars,
            tuned.trainable_scalars + fx.pre.params.n_scalars(),
            "fine-tuning adds exactly the backbone scalars"
        );
        assert_eq!(fine.cache_seconds, 0.0, "fine-tuning runs on-tape");
    }

    #[test]
    fn test_adaptation_is_deterministic_and_optimizer_isolated() {
        let fx = fixture(SyntheticKind::PlantedRepeat, 400, 17);
        let a = tune(&fx, PromptKind::Projection, &small_cfg(2), 17);
        let b = tune(&fx, PromptKind::Projection, &small_cfg(2), 17);
        assert_eq!(a.prompt.params, b.prompt.params, "same checkpoint, same result");
        assert_eq!(a.head, b.head);
        assert_eq!(
            a.test_report.headline(),
            b.test_report.headline(),
            "bit-identical test metric"
        );
    }

    #[test]
    fn test_cached_and_replayed_validation_agree_exactly() {
        let fx = fixture(SyntheticKind::PlantedRepeat, 400, 19);
        let (dims, pcfg, cfg) = (small_dims(), small_pcfg(), small_cfg(2));
        let ctx = Ctx::build(
            &fx.graph,
            &fx.bounds,
            &fx.inductive,
            &fx.pre,
            &dims,
            &pcfg,
            &cfg,
            PromptKind::Vanilla,
            Mode::Prompt,
            Task::LinkPrediction,
            19,
        )
        .unwrap();
        let out = tune(&fx, PromptKind::Vanilla, &small_cfg(2), 19);
        let cache = build_cache(&ctx).unwrap();
        let mut audit = DisciplineAudit::default();
        let cached = cached_val_metric(&ctx, &cache, &out.prompt, &out.head, &mut audit).unwrap();
        let replayed = ontape_val_metric(
            &ctx,
            &fx.pre.params,
            &out.prompt,
            &out.head,
            &cache.state_prompt_end,
            &mut audit,
        )
        .unwrap();
        assert_eq!(cached, replayed, "cache must be a pure memoization");
    }

    #[test]
    fn test_gradients_never_touch_evaluation_events() {
        let fx = fixture(SyntheticKind::PlantedRepeat, 400, 23);
        let out = tune(&fx, PromptKind::Vanilla, &small_cfg(2), 23);
        let val_start = fx.bounds.val().start;
        assert!(out.audit.max_grad_event().unwrap() < val_start);
        assert!(out
            .audit
            .early_stop_ranges
            .iter()
            .all(|&(s, e)| (s, e) == (val_start, fx.bounds.val().end)));
        let prompt_start = fx.bounds.prompt().unwrap().start;
        assert!(
            out.audit.grad_event_ranges.iter().all(|&(lo, _)| lo >= prompt_start),
            "adaptation gradients come from the prompt stage only"
        );
    }

    #[test]
    fn test_masked_events_feed_no_gradients() {
        let mut spec = SyntheticSpec::new(SyntheticKind::PlantedRepeat, 20, 12, 400, 29);
        spec.node_feature_dim = 16;
        let graph = generate_synthetic(&spec).unwrap();
        let bounds = chronological_split(&graph, &[0.5, 0.2, 0.15, 0.15]).unwrap();
        let inductive = mask_inductive_nodes(&graph, &bounds, 0.1, 29).unwrap();
        let pre = pretrain(&graph, &bounds, &inductive, &small_dims(), &small_cfg(2), 29).unwrap();
        let out = prompt_tune(
            &graph,
            &bounds,
            &inductive,
            &pre,
            &small_dims(),
            &small_pcfg(),
            &small_cfg(2),
            PromptKind::Vanilla,
            Task::LinkPrediction,
            29,
        )
        .unwrap();
        assert!(out.audit.max_grad_event().unwrap() < bounds.val().start);
        // The training view the engine builds must drop every masked event.
        let (dims, pcfg, cfg) = (small_dims(), small_pcfg(), small_cfg(2));
        let ctx = Ctx::build(
            &graph,
            &bounds,
            &inductive,
            &pre,
            &dims,
            &pcfg,
            &cfg,
            PromptKind::Vanilla,
            Mode::Prompt,
            Task::LinkPrediction,
            29,
        )
        .unwrap();
        assert!(ctx.prompt_events.iter().all(|e| !inductive.touches_masked(e)));
        assert!(!ctx.prompt_events.is_empty());
        assert!(
            ctx.prompt_events.len() < bounds.prompt().unwrap().len(),
            "fixture should actually mask something in the prompt stage"
        );
    }

    #[test]
    fn test_nc_strategies_transfer_as_specified() {
        let mut spec = SyntheticSpec::new(SyntheticKind::HeteroNodes, 20, 12, 400, 31);
        spec.node_feature_dim = 16;
        let graph = generate_synthetic(&spec).unwrap();
        let bounds = chronological_split(&graph, &[0.5, 0.2, 0.15, 0.15]).unwrap();
        let inductive = InductiveSpec::none(graph.n_nodes());
        let pre = pretrain(&graph, &bounds, &inductive, &small_dims(), &small_cfg(2), 31).unwrap();
        let cfg = small_cfg(2);
        let lp = prompt_tune(
            &graph, &bounds, &inductive, &pre, &small_dims(), &small_pcfg(), &cfg,
            PromptKind::Vanilla, Task::LinkPrediction, 31,
        )
        .unwrap();
        let frozen = adapt_nc(
            &graph, &bounds, &inductive, &pre, &small_dims(), &small_pcfg(), &cfg,
            PromptKind::Vanilla, Mode::Prompt, NcStrategy::ReuseFrozen, Some(&lp), 31,
        )
        .unwrap();
        assert_eq!(
            frozen.prompt.params, lp.prompt.params,
            "reuse_frozen must not move the generator"
        );
        assert_eq!(frozen.trainable_scalars, frozen.head.n_scalars());
        let tuned = adapt_nc(
            &graph, &bounds, &inductive, &pre, &small_dims(), &small_pcfg(), &cfg,
            PromptKind::Vanilla, Mode::Prompt, NcStrategy::InitAndTune, Some(&lp), 31,
        )
        .unwrap();
        assert_ne!(
            tuned.prompt.params, lp.prompt.params,
            "init_and_tune keeps training the generator"
        );
        let fresh = adapt_nc(
            &graph, &bounds, &inductive, &pre, &small_dims(), &small_pcfg(), &cfg,
            PromptKind::Vanilla, Mode::Prompt, NcStrategy::Reinit, None, 31,
        )
        .unwrap();
        assert!(fresh.test_report.node().is_some());
        assert!(fresh.test_report.headline().is_finite());
        assert!(adapt_nc(
            &graph, &bounds, &inductive, &pre, &small_dims(), &small_pcfg(), &cfg,
            PromptKind::Vanilla, Mode::Prompt, NcStrategy::ReuseFrozen, None, 31,
        )
        .is_err());
    }

    #[test]
    fn test_adaptation_requires_prompt_stage() {
        let spec = SyntheticSpec::new(SyntheticKind::PlantedRepeat, 20, 12, 300, 37);
        let graph = generate_synthetic(&spec).unwrap();
        let bounds = chronological_split(&graph, &[0.7, 0.15, 0.15]).unwrap();
        let inductive = InductiveSpec::none(graph.n_nodes());
        let pre = pretrain(&graph, &bounds, &inductive, &small_dims(), &small_cfg(1), 37).unwrap();
        let err = prompt_tune(
            &graph,
            &bounds,
            &inductive,
            &pre,
            &small_dims(),
            &small_pcfg(),
            &small_cfg(1),
            PromptKind::Vanilla,
            Task::LinkPrediction,
            37,
        );
        assert!(matches!(err, Err(Error::InvalidSplit(_))));
    }

    #[test]
    fn test_every_generator_adapts_end_to_end() {
        let fx = fixture(SyntheticKind::PlantedRepeat, 400, 41);
        let cfg = small_cfg(1);
        for kind in [
            PromptKind::Vanilla,
            PromptKind::Transformer,
            PromptKind::Projection,
            PromptKind::StaticOutput,
            PromptKind::StaticInput,
        ] {
            let out = tune(&fx, kind, &cfg, 41);
            assert_eq!(out.backbone, fx.pre.params, "{} froze Θ", kind.name());
            assert!(out.test_report.headline().is_finite());
            if kind.is_static() {
                assert!(
                    !out.head.contains("rho.l1.w"),
                    "static prompts bypass fusion"
                );
            }
        }
    }
}
