//! Memory-based temporal graph backbone.
//!
//! Each node carries a memory vector updated by its interactions: raw
//! messages are buffered per batch (deferred), then *flushed* — newest
//! message per node through a message MLP and a GRU cell — before the batch
//! that needs fresh memory is embedded. Embeddings come from one multi-head
//! attention layer over the node's most recent interactions, followed by a
//! two-layer merge MLP. A link-scoring head on embedding pairs closes the
//! loop for pre-training.
//!
//! Deferring messages keeps the pipeline causal: an event's own message is
//! applied only after that event has been scored, so scores never see their
//! own edge. The deferral also means gradients reach the message MLP and GRU
//! through the flush that happens at the start of the *next* batch.
//!
//! Concatenation layouts (fixed, relied on by the hand-computed oracles in
//! the tests):
//!
//! ```text
//! message input  = [own memory | other memory | edge features | φ(t − last_update)]
//! query input    = [memory | node features | φ(0)]
//! key/value      = [neighbor memory | edge features | φ(t − t_event)]
//! merge input    = [attention context | memory | node features]
//! pair scoring   = [z_left | z_right]
//! ```

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::eval::evaluate_link_prediction;
use crate::graph::{InteractionEvent, NeighborIndex, TemporalGraph};
use crate::nn::{
    dropout_mask, grouped_attention, gru_apply, gru_init, linear_apply, linear_init, mlp2_apply,
    mlp2_init, Adam, Bound, ParamSet,
};
use crate::split::{filter_training_events, InductiveSpec, StageBounds};
use crate::time_encoding::{encode_on_tape, TimeEncoder};

/// Derive an independent RNG from a run seed and a purpose tag, so the
/// training loop, negative samplers, and masks never share a stream.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    // splitmix64 over (seed, stream) — cheap, well-dispersed, stable.
    let mut z = seed ^ stream.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^= z >> 31;
    ChaCha12Rng::seed_from_u64(z)
}

/// RNG stream tags (see [`seeded_rng`]).
pub mod streams {
    pub const INIT: u64 = 1;
    pub const TRAIN_NEG: u64 = 2;
    pub const EVAL_NEG: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const PROMPT_INIT: u64 = 5;
    pub const PROMPT_NEG: u64 = 6;
}

// ============================================================================
// Dimensions and parameters
// ============================================================================

/// Width/shape knobs of the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneDims {
    /// Embedding width (also the prompt width downstream).
    pub d: usize,
    /// Memory width.
    pub d_mem: usize,
    /// Time-encoding width.
    pub d_t: usize,
    /// Attention heads (must divide `d`).
    pub n_heads: usize,
    /// Neighbors attended per query.
    pub k_recent: usize,
    /// Dropout on the merge MLP hidden layer during training.
    pub dropout: f64,
}

impl BackboneDims {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_mem == 0 || self.d_t == 0 || self.k_recent == 0 {
            return Err(Error::InvalidConfig {
                field: "model".into(),
                message: "widths and k_recent must be positive".into(),
            });
        }
        if self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(Error::InvalidConfig {
                field: "model.n_heads".into(),
                message: format!("{} must divide d={}", self.n_heads, self.d),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig {
                field: "model.dropout".into(),
                message: format!("{} outside [0, 1)", self.dropout),
            });
        }
        Ok(())
    }
}

/// Build the backbone parameter set Θ (message MLP, GRU, attention
/// projections, merge MLP, link head) together with the time-encoder
/// parameters, which train with the backbone and freeze with it.
pub fn init_backbone(dims: &BackboneDims, d_e: usize, d_n: usize, seed: u64) -> ParamSet {
    let mut rng = seeded_rng(seed, streams::INIT);
    let mut set = ParamSet::new();
    let enc = TimeEncoder::new(dims.d_t);
    set.insert("time.omega", enc.omega);
    set.insert("time.b", enc.b);
    let msg_in = 2 * dims.d_mem + d_e + dims.d_t;
    mlp2_init(&mut set, "msg", msg_in, dims.d_mem, dims.d_mem, &mut rng);
    gru_init(&mut set, "gru", dims.d_mem, dims.d_mem, &mut rng);
    let q_in = dims.d_mem + d_n + dims.d_t;
    let kv_in = dims.d_mem + d_e + dims.d_t;
    linear_init(&mut set, "att.q", q_in, dims.d, &mut rng);
    linear_init(&mut set, "att.k", kv_in, dims.d, &mut rng);
    linear_init(&mut set, "att.v", kv_in, dims.d, &mut rng);
    mlp2_init(&mut set, "merge", dims.d + dims.d_mem + d_n, dims.d, dims.d, &mut rng);
    mlp2_init(&mut set, "head", 2 * dims.d, dims.d, 1, &mut rng);
    set
}

// ============================================================================
// Memory state
// ============================================================================

/// One buffered raw message: everything needed to update `node`'s memory at
/// the next flush, snapshotted when the event was processed.
#[derive(Debug, Clone)]
pub struct RawMessage {
    pub node: usize,
    /// Memory of `node` when the message was stored.
    pub self_mem: Array1<f64>,
    /// Memory of the other endpoint when the message was stored.
    pub other_mem: Array1<f64>,
    /// Edge features of the event.
    pub edge_feat: Array1<f64>,
    pub t: f64,
    pub event_idx: usize,
}

/// Per-node memory plus the deferred-message buffer.
#[derive(Debug, Clone)]
pub struct MemoryState {
    /// n_nodes × d_mem.
    pub memory: Array2<f64>,
    /// Time each node's memory last advanced to.
    pub last_update: Vec<f64>,
    /// Raw messages from the most recently ingested batch.
    pending: Vec<RawMessage>,
}

impl MemoryState {
    /// All-zero memory with `last_update` at the stream origin.
    pub fn init(n_nodes: usize, d_mem: usize, t_min: f64) -> Self {
        MemoryState {
            memory: Array2::zeros((n_nodes, d_mem)),
            last_update: vec![t_min; n_nodes],
            pending: Vec::new(),
        }
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.memory.nrows()
    }
}

/// Buffer both endpoints' raw messages for a batch of events, snapshotting
/// current memory. Call after the batch has been scored and flushed state
/// committed, never before.
pub fn store_raw_messages(state: &mut MemoryState, graph: &TemporalGraph, batch: &[InteractionEvent]) {
    for e in batch {
        let src_mem = state.memory.row(e.src).to_owned();
        let dst_mem = state.memory.row(e.dst).to_owned();
        let feat = graph.edge_feats.row(e.idx);
        state.pending.push(RawMessage {
            node: e.src,
            self_mem: src_mem.clone(),
            other_mem: dst_mem.clone(),
            edge_feat: feat.clone(),
            t: e.t,
            event_idx: e.idx,
        });
        state.pending.push(RawMessage {
            node: e.dst,
            self_mem: dst_mem,
            other_mem: src_mem,
            edge_feat: feat,
            t: e.t,
            event_idx: e.idx,
        });
    }
}

// ============================================================================
// Flush (deferred memory update)
// ============================================================================

/// Tape-side result of a flush: fresh memory rows for the touched nodes.
/// Values are committed back into [`MemoryState`] via [`commit_flush`] after
/// the optimizer step (or immediately in frozen paths).
pub struct FlushPlan {
    /// Nodes with an aggregated message, ascending.
    pub nodes: Vec<usize>,
    /// len(nodes) × d_mem updated memory on the tape.
    pub new_memory: Var,
    /// New `last_update` per entry of `nodes`.
    pub new_last: Vec<f64>,
    pos: std::collections::HashMap<usize, usize>,
}

impl FlushPlan {
    /// Row of `new_memory` holding `node`'s fresh value, if it was updated.
    pub fn slot_of(&self, node: usize) -> Option<usize> {
        self.pos.get(&node).copied()
    }
}

/// Aggregate pending messages (newest per node wins, ties by event index),
/// then run message MLP + GRU on the tape. Returns `None` when nothing is
/// pending. Does not mutate `state`.
pub fn build_flush(
    tape: &mut Tape,
    bound: &Bound,
    dims: &BackboneDims,
    state: &MemoryState,
) -> Option<FlushPlan> {
    if state.pending.is_empty() {
        return None;
    }
    // Newest message per node.
    let mut newest: std::collections::HashMap<usize, &RawMessage> = std::collections::HashMap::new();
    for msg in &state.pending {
        let replace = match newest.get(&msg.node) {
            Some(cur) => (msg.t, msg.event_idx) > (cur.t, cur.event_idx),
            None => true,
        };
        if replace {
            newest.insert(msg.node, msg);
        }
    }
    let mut nodes: Vec<usize> = newest.keys().copied().collect();
    nodes.sort_unstable();
    let m = nodes.len();
    let d_e = newest[&nodes[0]].edge_feat.len();
    let mut self_mem = Array2::zeros((m, dims.d_mem));
    let mut other_mem = Array2::zeros((m, dims.d_mem));
    let mut edge = Array2::zeros((m, d_e));
    let mut deltas = Vec::with_capacity(m);
    let mut new_last = Vec::with_capacity(m);
    for (i, &v) in nodes.iter().enumerate() {
        let msg = newest[&v];
        self_mem.row_mut(i).assign(&msg.self_mem);
        other_mem.row_mut(i).assign(&msg.other_mem);
        edge.row_mut(i).assign(&msg.edge_feat);
        deltas.push(msg.t - state.last_update[v]);
        new_last.push(msg.t);
    }
    let omega = bound.var("time.omega");
    let b = bound.var("time.b");
    let phi = encode_on_tape(tape, omega, b, &deltas);
    let self_mem_v = tape.constant(self_mem);
    let other_mem_v = tape.constant(other_mem);
    let edge_v = tape.constant(edge);
    let msg_in = tape.concat_cols(&[self_mem_v, other_mem_v, edge_v, phi]);
    let msg = mlp2_apply(tape, bound, "msg", msg_in);
    let h = {
        let mut base = Array2::zeros((m, dims.d_mem));
        for (i, &v) in nodes.iter().enumerate() {
            base.row_mut(i).assign(&state.memory.row(v));
        }
        tape.constant(base)
    };
    let new_memory = gru_apply(tape, bound, "gru", msg, h);
    let pos = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    Some(FlushPlan {
        nodes,
        new_memory,
        new_last,
        pos,
    })
}

/// Write a flush's values into the state, advance `last_update`, and clear
/// the buffer. Memory never moves backwards in time.
pub fn commit_flush(state: &mut MemoryState, tape: &Tape, plan: &FlushPlan) {
    let values = tape.value(plan.new_memory);
    for (i, &v) in plan.nodes.iter().enumerate() {
        state.memory.row_mut(v).assign(&values.row(i));
        debug_assert!(plan.new_last[i] >= state.last_update[v], "memory time must advance");
        state.last_update[v] = plan.new_last[i];
    }
    state.pending.clear();
}

// ============================================================================
// Embedding read path
// ============================================================================

/// One embedding request: node `node` at time `t`. When `exclude_event` is
/// set, interactions at the same timestamp are visible only if their event
/// index is smaller (batch processing passes the query event's own index so
/// it never attends to itself).
#[derive(Debug, Clone, Copy)]
pub struct EmbedQuery {
    pub node: usize,
    pub t: f64,
    pub exclude_event: Option<usize>,
}

/// Gather memory rows for `ids`, preferring fresh flush rows when present.
fn memory_rows(
    tape: &mut Tape,
    state: &MemoryState,
    flush: Option<&FlushPlan>,
    ids: &[usize],
    d_mem: usize,
) -> Var {
    let mut base = Array2::zeros((ids.len(), d_mem));
    for (i, &v) in ids.iter().enumerate() {
        base.row_mut(i).assign(&state.memory.row(v));
    }
    match flush {
        Some(plan) => {
            let slots: Vec<Option<usize>> = ids.iter().map(|&v| plan.slot_of(v)).collect();
            tape.gather_mixed(plan.new_memory, slots, base)
        }
        None => tape.constant(base),
    }
}

/// Build embeddings for a batch of queries on the tape (len(queries) × d).
///
/// The attention query mixes the node's memory, static features, and a
/// zero-delta time code; keys and values mix each recent neighbor's memory
/// with the connecting edge's features and the encoded time gap. Nodes
/// without qualifying history skip attention (zero context) and still pass
/// through the merge MLP. `feat_add` optionally adds a shared 1 × d_n row to
/// every query node's static features before they enter the attention query
/// and the merge — the hook for input-side static prompts. `dropout_rng`
/// enables training-mode dropout on the merge hidden layer; pass `None` for
/// deterministic inference.
#[allow(clippy::too_many_arguments)]
pub fn embed_on_tape(
    tape: &mut Tape,
    bound: &Bound,
    dims: &BackboneDims,
    graph: &TemporalGraph,
    index: &NeighborIndex,
    state: &MemoryState,
    flush: Option<&FlushPlan>,
    queries: &[EmbedQuery],
    feat_add: Option<Var>,
    dropout_rng: Option<&mut ChaCha12Rng>,
) -> Var {
    let n = queries.len();
    let k = dims.k_recent;
    let d_e = graph.edge_feats.dim();
    // Neighbor slots, flattened n×k.
    let mut nbr_ids = Vec::with_capacity(n * k);
    let mut nbr_deltas = Vec::with_capacity(n * k);
    let mut edge_rows = Array2::zeros((n * k, d_e));
    let mut mask = Array2::zeros((n, k));
    for (qi, q) in queries.iter().enumerate() {
        let hits = match q.exclude_event {
            Some(idx) => index.recent_before_event(q.node, q.t, idx, k),
            None => index.recent_neighbors(q.node, q.t, k),
        };
        for (j, hit) in hits.iter().enumerate() {
            nbr_ids.push(hit.node);
            nbr_deltas.push(q.t - hit.t);
            edge_rows
                .row_mut(qi * k + j)
                .assign(&graph.edge_feats.row(hit.event_idx));
            mask[(qi, j)] = 1.0;
        }
        for _ in hits.len()..k {
            nbr_ids.push(0);
            nbr_deltas.push(0.0);
        }
    }
    let omega = bound.var("time.omega");
    let b = bound.var("time.b");

    // Query side.
    let q_ids: Vec<usize> = queries.iter().map(|q| q.node).collect();
    let q_mem = memory_rows(tape, state, flush, &q_ids, dims.d_mem);
    let mut q_feat = tape.constant(graph.node_feats.gather(&q_ids));
    if let Some(fa) = feat_add {
        q_feat = tape.add_row(q_feat, fa);
    }
    let zero_deltas = vec![0.0; n];
    let q_phi = encode_on_tape(tape, omega, b, &zero_deltas);
    let q_in = tape.concat_cols(&[q_mem, q_feat, q_phi]);
    let q_proj = linear_apply(tape, bound, "att.q", q_in);

    // Key/value side.
    let n_mem = memory_rows(tape, state, flush, &nbr_ids, dims.d_mem);
    let edge_v = tape.constant(edge_rows);
    let n_phi = encode_on_tape(tape, omega, b, &nbr_deltas);
    let kv_in = tape.concat_cols(&[n_mem, edge_v, n_phi]);
    let k_proj = linear_apply(tape, bound, "att.k", kv_in);
    let v_proj = linear_apply(tape, bound, "att.v", kv_in);

    let ctx = grouped_attention(tape, q_proj, k_proj, v_proj, k, dims.n_heads, &mask);

    // Merge with dropout on the hidden layer in training mode.
    let merge_in = tape.concat_cols(&[ctx, q_mem, q_feat]);
    let hidden = linear_apply(tape, bound, "merge.l1", merge_in);
    let mut hidden = tape.relu(hidden);
    if let Some(rng) = dropout_rng {
        if dims.dropout > 0.0 {
            let m = dropout_mask(n, dims.d, dims.dropout, rng);
            hidden = tape.mul_const(hidden, m);
        }
    }
    linear_apply(tape, bound, "merge.l2", hidden)
}

/// Score (left, right) embedding pairs with a two-layer head: rows of `z`
/// are selected by index, concatenated, and mapped to one logit per pair.
pub fn score_pairs_on_tape(
    tape: &mut Tape,
    bound: &Bound,
    head: &str,
    z: Var,
    left: &[usize],
    right: &[usize],
) -> Var {
    assert_eq!(left.len(), right.len());
    let zl = tape.gather_rows(z, left);
    let zr = tape.gather_rows(z, right);
    let pair = tape.concat_cols(&[zl, zr]);
    mlp2_apply(tape, bound, head, pair)
}

/// Read-only embedding of `nodes` at a common time `t` with the current
/// memory (pending messages are NOT applied — flush first if you need them).
/// Pure: repeated identical calls return identical rows.
pub fn embed_nodes(
    params: &ParamSet,
    dims: &BackboneDims,
    graph: &TemporalGraph,
    index: &NeighborIndex,
    state: &MemoryState,
    nodes: &[usize],
    t: f64,
) -> Array2<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let queries: Vec<EmbedQuery> = nodes
        .iter()
        .map(|&node| EmbedQuery {
            node,
            t,
            exclude_event: None,
        })
        .collect();
    let z = embed_on_tape(
        &mut tape, &bound, dims, graph, index, state, None, &queries, None, None,
    );
    tape.value(z).clone()
}

/// Apply any pending messages to memory immediately. Whether a flush runs
/// lazily (at the next embedding) or eagerly makes no numerical difference —
/// it depends only on the buffered messages, the parameters, and the current
/// memory — so callers may force one before snapshotting state.
pub fn flush_pending(params: &ParamSet, dims: &BackboneDims, state: &mut MemoryState) {
    if !state.has_pending() {
        return;
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    if let Some(plan) = build_flush(&mut tape, &bound, dims, state) {
        commit_flush(state, &tape, &plan);
    }
}

// ============================================================================
// Frozen replay cursor
// ============================================================================

/// Drives memory through an event stream with frozen parameters, exposing
/// embeddings along the way. Used by validation/test scoring and by the
/// prompt stage (where the backbone is frozen but state must stay causal).
pub struct ReplayCursor<'a> {
    pub params: &'a ParamSet,
    pub dims: &'a BackboneDims,
    pub graph: &'a TemporalGraph,
    pub index: &'a NeighborIndex,
    pub state: MemoryState,
}

impl<'a> ReplayCursor<'a> {
    pub fn new(
        params: &'a ParamSet,
        dims: &'a BackboneDims,
        graph: &'a TemporalGraph,
        index: &'a NeighborIndex,
        state: MemoryState,
    ) -> Self {
        ReplayCursor {
            params,
            dims,
            graph,
            index,
            state,
        }
    }

    /// Current memory state (pending messages included).
    pub fn state(&self) -> &MemoryState {
        &self.state
    }

    /// Consume the cursor, keeping its memory state.
    pub fn into_state(self) -> MemoryState {
        self.state
    }

    /// Apply pending messages to memory now (no-op when nothing is pending).
    pub fn flush_now(&mut self) {
        flush_pending(self.params, self.dims, &mut self.state);
    }

    /// Flush, then embed a batch of queries in inference mode.
    pub fn embed(&mut self, queries: &[EmbedQuery]) -> Array2<f64> {
        self.embed_with_feat(queries, None)
    }

    /// Like [`ReplayCursor::embed`], optionally adding a shared 1 × d_n row
    /// to every query node's static features (input-side static prompts).
    pub fn embed_with_feat(
        &mut self,
        queries: &[EmbedQuery],
        feat_add: Option<&Array2<f64>>,
    ) -> Array2<f64> {
        self.flush_now();
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let fa = feat_add.map(|row| tape.constant(row.clone()));
        let z = embed_on_tape(
            &mut tape,
            &bound,
            self.dims,
            self.graph,
            self.index,
            &self.state,
            None,
            queries,
            fa,
            None,
        );
        tape.value(z).clone()
    }

    /// Buffer a batch's raw messages (call after scoring the batch).
    pub fn ingest(&mut self, batch: &[InteractionEvent]) {
        store_raw_messages(&mut self.state, self.graph, batch);
    }

    /// Advance state through events without scoring them.
    pub fn advance(&mut self, events: &[InteractionEvent], batch_size: usize) {
        for batch in events.chunks(batch_size) {
            self.flush_now();
            self.ingest(batch);
        }
    }

    /// Embedding queries for a scored batch: sources, destinations, then
    /// negative destinations, each at its event's time and excluding the
    /// event itself from its own history.
    pub fn batch_queries(batch: &[InteractionEvent], negatives: &[usize]) -> Vec<EmbedQuery> {
        let mut queries = Vec::with_capacity(batch.len() * 3);
        for e in batch {
            queries.push(EmbedQuery {
                node: e.src,
                t: e.t,
                exclude_event: Some(e.idx),
            });
        }
        for e in batch {
            queries.push(EmbedQuery {
                node: e.dst,
                t: e.t,
                exclude_event: Some(e.idx),
            });
        }
        for (e, &neg) in batch.iter().zip(negatives) {
            queries.push(EmbedQuery {
                node: neg,
                t: e.t,
                exclude_event: Some(e.idx),
            });
        }
        queries
    }
}

// ============================================================================
// Pre-training
// ============================================================================

/// Loop hyperparameters shared by pre-training and the prompt stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainCfg {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

/// One epoch's record in a training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ap: f64,
}

/// Loss/validation trajectory with the selected epoch.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_ap: f64,
    /// Validation score of the starting state, measured before the first
    /// update. Adaptation seeds best-snapshot tracking with it (a fresh
    /// prompted model reproduces the frozen checkpoint, so epochs must beat
    /// that to ship); pre-training starts from random weights and leaves
    /// this `None`.
    #[serde(default)]
    pub init_val_ap: Option<f64>,
    /// True when no epoch beat the starting state and the run shipped it.
    #[serde(default)]
    pub kept_init: bool,
}

/// Record of which events fed gradients and which fed early stopping;
/// evaluation discipline is asserted on this after the fact.
#[derive(Debug, Clone, Default)]
pub struct DisciplineAudit {
    /// (min, max) original event index per gradient-contributing batch.
    pub grad_event_ranges: Vec<(usize, usize)>,
    /// (start, end) event ranges whose metrics drove early stopping.
    pub early_stop_ranges: Vec<(usize, usize)>,
}

impl DisciplineAudit {
    pub fn note_grad_batch(&mut self, batch: &[InteractionEvent]) {
        if batch.is_empty() {
            return;
        }
        let min = batch.iter().map(|e| e.idx).min().unwrap();
        let max = batch.iter().map(|e| e.idx).max().unwrap();
        self.grad_event_ranges.push((min, max));
    }

    /// Highest event index that ever contributed a gradient.
    pub fn max_grad_event(&self) -> Option<usize> {
        self.grad_event_ranges.iter().map(|&(_, hi)| hi).max()
    }
}

/// Everything pre-training hands to the downstream stages.
pub struct PretrainOutcome {
    /// Trained Θ (including time-encoder parameters).
    pub params: ParamSet,
    /// Memory after replaying the training stage at the best epoch.
    pub memory: MemoryState,
    pub log: TrainingLog,
    pub audit: DisciplineAudit,
}

/// Pre-train the backbone on link prediction over the first stage.
///
/// Protocol per epoch: reset memory, stream training batches (one uniform
/// negative destination per positive, binary cross-entropy on pair logits,
/// Adam), then measure validation AP by replaying the intermediate stage
/// (state only) and scoring the validation stage. Early-stops on validation
/// AP with the given patience and returns the best epoch's parameters and
/// training-stage memory snapshot. Masked (inductive) nodes' events are
/// removed from training batches and from the training-time neighbor index.
pub fn pretrain(
    graph: &TemporalGraph,
    bounds: &StageBounds,
    inductive: &InductiveSpec,
    dims: &BackboneDims,
    cfg: &TrainCfg,
    seed: u64,
) -> Result<PretrainOutcome> {
    dims.validate()?;
    let train_events = filter_training_events(&graph.events[bounds.pretrain()], inductive);
    if train_events.is_empty() {
        return Err(Error::InvalidSplit("no training events after masking".into()));
    }
    let train_index = NeighborIndex::build_from_events(graph.n_nodes(), &train_events);
    let full_index = NeighborIndex::build(graph);
    let mut params = init_backbone(dims, graph.edge_feats.dim(), graph.node_feats.dim(), seed);
    let mut adam = Adam::new(cfg.lr);
    let mut audit = DisciplineAudit::default();
    let mut log = TrainingLog::default();
    let mut best: Option<(ParamSet, MemoryState)> = None;
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut state = MemoryState::init(graph.n_nodes(), dims.d_mem, graph.t_min);
        let mut neg_rng = seeded_rng(seed, streams::TRAIN_NEG | ((epoch as u64) << 8));
        let mut drop_rng = seeded_rng(seed, streams::DROPOUT | ((epoch as u64) << 8));
        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;
        for batch in train_events.chunks(cfg.batch_size) {
            let negatives: Vec<usize> = batch
                .iter()
                .map(|_| graph.n_users + neg_rng.random_range(0..graph.n_items))
                .collect();
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let plan = build_flush(&mut tape, &bound, dims, &state);
            let queries = ReplayCursor::batch_queries(batch, &negatives);
            let z = embed_on_tape(
                &mut tape,
                &bound,
                dims,
                graph,
                &train_index,
                &state,
                plan.as_ref(),
                &queries,
                None,
                Some(&mut drop_rng),
            );
            let n = batch.len();
            let left: Vec<usize> = (0..n).chain(0..n).collect();
            let right: Vec<usize> = (n..2 * n).chain(2 * n..3 * n).collect();
            let logits = score_pairs_on_tape(&mut tape, &bound, "head", z, &left, &right);
            let mut targets = Array2::zeros((2 * n, 1));
            targets.slice_mut(ndarray::s![..n, ..]).fill(1.0);
            let loss = tape.bce_with_logits_mean(logits, targets);
            tape.backward(loss);
            adam.step(&mut params, &tape, &bound);
            audit.note_grad_batch(batch);
            loss_sum += tape.value(loss)[(0, 0)];
            loss_batches += 1;
            if let Some(plan) = &plan {
                commit_flush(&mut state, &tape, plan);
            }
            store_raw_messages(&mut state, graph, batch);
        }

        // Validation: replay the gap stages with frozen state, score val.
        let train_end_state = state.clone();
        let val_ap = validation_ap(
            &params, dims, graph, &full_index, state, bounds, cfg, seed, &mut audit,
        )?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / loss_batches.max(1) as f64,
            val_ap,
        });
        if val_ap > best_val {
            best_val = val_ap;
            log.best_epoch = epoch;
            log.best_val_ap = val_ap;
            best = Some((params.clone(), train_end_state));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (params, memory) = best.expect("at least one epoch ran");
    Ok(PretrainOutcome {
        params,
        memory,
        log,
        audit,
    })
}

/// Replay from the end of training through any intermediate stage, then
/// score the validation stage with the pre-training head.
#[allow(clippy::too_many_arguments)]
fn validation_ap(
    params: &ParamSet,
    dims: &BackboneDims,
    graph: &TemporalGraph,
    full_index: &NeighborIndex,
    state: MemoryState,
    bounds: &StageBounds,
    cfg: &TrainCfg,
    seed: u64,
    audit: &mut DisciplineAudit,
) -> Result<f64> {
    let mut cursor = ReplayCursor::new(params, dims, graph, full_index, state);
    if let Some(prompt_range) = bounds.prompt() {
        cursor.advance(&graph.events[prompt_range], cfg.batch_size);
    }
    let val_range = bounds.val();
    audit.early_stop_ranges.push((val_range.start, val_range.end));
    let seen = vec![true; graph.n_nodes()];
    let none = InductiveSpec::none(graph.n_nodes());
    let report = evaluate_link_prediction(
        graph,
        val_range,
        &seen,
        &none,
        seed ^ streams::EVAL_NEG,
        cfg.batch_size,
        |batch, negatives| {
            let queries = ReplayCursor::batch_queries(batch, negatives);
            let z = cursor.embed(&queries);
            let scores = score_pairs_plain(params, "head", &z, batch.len());
            cursor.ingest(batch);
            scores
        },
    )?;
    Ok(report.transductive.map(|m| m.ap).unwrap_or(0.0))
}

/// Inference-mode pair scoring on detached embeddings laid out as
/// [sources | destinations | negatives]; returns (pos, neg) logit pairs.
pub fn score_pairs_plain(params: &ParamSet, head: &str, z: &Array2<f64>, n: usize) -> Vec<(f64, f64)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let zv = tape.constant(z.clone());
    let left: Vec<usize> = (0..n).chain(0..n).collect();
    let right: Vec<usize> = (n..2 * n).chain(2 * n..3 * n).collect();
    let logits = score_pairs_on_tape(&mut tape, &bound, head, zv, &left, &right);
    let vals = tape.value(logits);
    (0..n).map(|i| (vals[(i, 0)], vals[(n + i, 0)])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::split::chronological_split;
    use ndarray::array;

    fn sigma(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn set_value(set: &mut ParamSet, name: &str, value: Array2<f64>) {
        *set.get_mut(name) = value;
    }

    fn tiny_dims() -> BackboneDims {
        BackboneDims {
            d: 1,
            d_mem: 1,
            d_t: 1,
            n_heads: 1,
            k_recent: 2,
            dropout: 0.0,
        }
    }

    /// Flush of a single pending message must equal a scalar GRU step
    /// computed by hand: message MLP on [self|other|edge|cos Δt], then the
    /// gate equations with the documented weight convention.
    #[test]
    fn test_flush_matches_hand_computed_gru_step() {
        let dims = tiny_dims();
        let mut params = init_backbone(&dims, 1, 0, 7);
        set_value(&mut params, "msg.l1.w", array![[0.1], [0.2], [0.3], [0.4]]);
        set_value(&mut params, "msg.l1.b", array![[0.05]]);
        set_value(&mut params, "msg.l2.w", array![[1.0]]);
        set_value(&mut params, "msg.l2.b", array![[0.0]]);
        set_value(&mut params, "gru.w_ir", array![[0.5]]);
        set_value(&mut params, "gru.w_hr", array![[0.25]]);
        set_value(&mut params, "gru.b_ir", array![[0.1]]);
        set_value(&mut params, "gru.b_hr", array![[0.0]]);
        set_value(&mut params, "gru.w_iz", array![[0.4]]);
        set_value(&mut params, "gru.w_hz", array![[0.3]]);
        set_value(&mut params, "gru.b_iz", array![[-0.2]]);
        set_value(&mut params, "gru.b_hz", array![[0.05]]);
        set_value(&mut params, "gru.w_in", array![[0.6]]);
        set_value(&mut params, "gru.w_hn", array![[0.7]]);
        set_value(&mut params, "gru.b_in", array![[0.0]]);
        set_value(&mut params, "gru.b_hn", array![[0.1]]);

        let mut state = MemoryState::init(2, 1, 0.0);
        state.memory[(0, 0)] = 0.3;
        state.memory[(1, 0)] = 0.7;
        state.last_update[1] = 1.0;
        state.pending.push(RawMessage {
            node: 1,
            self_mem: array![0.7],
            other_mem: array![0.3],
            edge_feat: array![0.9],
            t: 1.5,
            event_idx: 0,
        });

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let plan = build_flush(&mut tape, &bound, &dims, &state).expect("one message pending");
        assert_eq!(plan.nodes, vec![1]);
        commit_flush(&mut state, &tape, &plan);

        // Hand computation (d_t = 1 means the time code is cos(Δt)).
        let phi = (1.5f64 - 1.0).cos();
        let pre = 0.1 * 0.7 + 0.2 * 0.3 + 0.3 * 0.9 + 0.4 * phi + 0.05;
        let m = pre.max(0.0);
        let h = 0.7;
        let r = sigma(0.5 * m + 0.1 + 0.25 * h);
        let z = sigma(0.4 * m - 0.2 + 0.3 * h + 0.05);
        let n = (0.6 * m + r * (0.7 * h + 0.1)).tanh();
        let expected = (1.0 - z) * n + z * h;
        assert!(
            (state.memory[(1, 0)] - expected).abs() < 1e-6,
            "got {}, expected {}",
            state.memory[(1, 0)],
            expected
        );
        assert_eq!(state.last_update[1], 1.5);
        assert_eq!(state.last_update[0], 0.0, "untouched node keeps its clock");
        assert!(!state.has_pending(), "commit clears the buffer");
    }

    /// With exactly one visible neighbor the attention weight is 1, so the
    /// embedding reduces to merge([value-projection | memory | features])
    /// with every number computable by hand.
    #[test]
    fn test_attention_single_neighbor_matches_hand_computation() {
        let dims = tiny_dims();
        let events = vec![InteractionEvent {
            idx: 0,
            src: 0,
            dst: 1,
            t: 1.0,
            label: 0,
        }];
        let graph = build_graph(
            events,
            1,
            1,
            Some(Array2::zeros((2, 0))),
            Some(array![[0.9]]),
        )
        .unwrap();
        let index = NeighborIndex::build(&graph);
        let mut params = init_backbone(&dims, 1, 0, 7);
        set_value(&mut params, "att.v.w", array![[0.3], [0.5], [0.2]]);
        set_value(&mut params, "att.v.b", array![[0.1]]);
        set_value(&mut params, "merge.l1.w", array![[0.8], [-0.4]]);
        set_value(&mut params, "merge.l1.b", array![[0.2]]);
        set_value(&mut params, "merge.l2.w", array![[1.5]]);
        set_value(&mut params, "merge.l2.b", array![[-0.3]]);

        let mut state = MemoryState::init(2, 1, graph.t_min);
        state.memory[(0, 0)] = 0.4;
        state.memory[(1, 0)] = 0.8;

        let z = embed_nodes(&params, &dims, &graph, &index, &state, &[0], 2.0);

        let ctx = 0.3 * 0.8 + 0.5 * 0.9 + 0.2 * (2.0f64 - 1.0).cos() + 0.1;
        let hidden = (0.8 * ctx - 0.4 * 0.4 + 0.2).max(0.0);
        let expected = 1.5 * hidden - 0.3;
        assert!(
            (z[(0, 0)] - expected).abs() < 1e-6,
            "got {}, expected {}",
            z[(0, 0)],
            expected
        );
    }

    /// A node with no history and all-zero memory/features still flows
    /// through the merge MLP: the output is exactly the bias propagation
    /// relu(b1)·W2 + b2, computed here with plain matrix algebra.
    #[test]
    fn test_zero_history_embedding_is_bias_propagation() {
        let dims = BackboneDims {
            d: 6,
            d_mem: 4,
            d_t: 3,
            n_heads: 2,
            k_recent: 3,
            dropout: 0.0,
        };
        let events = vec![InteractionEvent {
            idx: 0,
            src: 0,
            dst: 2,
            t: 1.0,
            label: 0,
        }];
        let graph = build_graph(
            events,
            2,
            1,
            Some(Array2::zeros((3, 2))),
            Some(Array2::zeros((1, 2))),
        )
        .unwrap();
        let index = NeighborIndex::build(&graph);
        let params = init_backbone(&dims, 2, 2, 99);
        let state = MemoryState::init(3, dims.d_mem, graph.t_min);

        // Node 1 never interacted: no neighbors, zero memory, zero features.
        let z = embed_nodes(&params, &dims, &graph, &index, &state, &[1], 5.0);

        let b1 = params.get("merge.l1.b");
        let w2 = params.get("merge.l2.w");
        let b2 = params.get("merge.l2.b");
        let expected = b1.mapv(|x| x.max(0.0)).dot(w2) + b2;
        for c in 0..dims.d {
            assert!(
                (z[(0, c)] - expected[(0, c)]).abs() < 1e-12,
                "column {c}: {} vs {}",
                z[(0, c)],
                expected[(0, c)]
            );
        }
    }

    /// Identical embedding requests against the same state return identical
    /// rows, bit for bit, and leave the state untouched.
    #[test]
    fn test_embedding_is_pure() {
        let dims = BackboneDims {
            d: 4,
            d_mem: 4,
            d_t: 2,
            n_heads: 2,
            k_recent: 3,
            dropout: 0.0,
        };
        let graph = toy_stream(4, 3, 40, 5);
        let index = NeighborIndex::build(&graph);
        let params = init_backbone(&dims, graph.edge_feats.dim(), 0, 11);
        let mut state = MemoryState::init(graph.n_nodes(), dims.d_mem, graph.t_min);
        state.memory[(0, 0)] = 0.25;
        let before = state.memory.clone();

        let a = embed_nodes(&params, &dims, &graph, &index, &state, &[0, 2, 5], 30.0);
        let b = embed_nodes(&params, &dims, &graph, &index, &state, &[0, 2, 5], 30.0);
        assert_eq!(a, b);
        assert_eq!(state.memory, before);
        assert!(!state.has_pending());
    }

    /// newest-message-wins: flushing two buffered messages for one node must
    /// equal flushing only the later one.
    #[test]
    fn test_two_messages_same_node_newest_wins() {
        let dims = tiny_dims();
        let params = init_backbone(&dims, 1, 0, 3);
        let mk_state = || {
            let mut s = MemoryState::init(2, 1, 0.0);
            s.memory[(1, 0)] = 0.5;
            s
        };
        let older = RawMessage {
            node: 1,
            self_mem: array![0.5],
            other_mem: array![0.2],
            edge_feat: array![1.0],
            t: 1.0,
            event_idx: 0,
        };
        let newer = RawMessage {
            node: 1,
            self_mem: array![0.5],
            other_mem: array![-0.7],
            edge_feat: array![0.3],
            t: 2.0,
            event_idx: 1,
        };

        let mut both = mk_state();
        both.pending.push(older);
        both.pending.push(newer.clone());
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let plan = build_flush(&mut tape, &bound, &dims, &both).unwrap();
        commit_flush(&mut both, &tape, &plan);

        let mut only_newer = mk_state();
        only_newer.pending.push(newer);
        let mut tape2 = Tape::new();
        let bound2 = params.bind(&mut tape2);
        let plan2 = build_flush(&mut tape2, &bound2, &dims, &only_newer).unwrap();
        commit_flush(&mut only_newer, &tape2, &plan2);

        assert_eq!(both.memory, only_newer.memory);
        assert_eq!(both.last_update, only_newer.last_update);
    }

    /// Scoring a batch must not depend on that batch's own edge features:
    /// messages are deferred and an event is excluded from its own neighbor
    /// history. The features do reach memory at the next flush.
    #[test]
    fn test_deferred_messages_never_leak_into_own_batch_score() {
        let dims = BackboneDims {
            d: 4,
            d_mem: 3,
            d_t: 2,
            n_heads: 2,
            k_recent: 4,
            dropout: 0.0,
        };
        let events = vec![
            InteractionEvent { idx: 0, src: 0, dst: 2, t: 1.0, label: 0 },
            InteractionEvent { idx: 1, src: 1, dst: 3, t: 2.0, label: 0 },
            InteractionEvent { idx: 2, src: 0, dst: 3, t: 3.0, label: 0 },
        ];
        let feats_a = array![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]];
        let mut feats_b = feats_a.clone();
        feats_b[(2, 0)] = 9.0;
        feats_b[(2, 1)] = -9.0;
        let mk = |feats: Array2<f64>| {
            build_graph(
                events.clone(),
                2,
                2,
                Some(Array2::zeros((4, 0))),
                Some(feats),
            )
            .unwrap()
        };
        let graph_a = mk(feats_a.clone());
        let graph_b = mk(feats_b);
        let params = init_backbone(&dims, 2, 0, 21);

        let score_last = |graph: &TemporalGraph| {
            let index = NeighborIndex::build(graph);
            let state = MemoryState::init(graph.n_nodes(), dims.d_mem, graph.t_min);
            let mut cursor = ReplayCursor::new(&params, &dims, graph, &index, state);
            cursor.advance(&graph.events[..2], 1);
            let batch = &graph.events[2..];
            let z = cursor.embed(&ReplayCursor::batch_queries(batch, &[2]));
            let scores = score_pairs_plain(&params, "head", &z, 1);
            cursor.ingest(batch);
            cursor.flush_now();
            (scores[0], cursor.state.memory.clone())
        };

        let (score_a, mem_a) = score_last(&graph_a);
        let (score_b, mem_b) = score_last(&graph_b);
        assert_eq!(score_a, score_b, "own-batch features must not affect the score");
        assert_ne!(mem_a, mem_b, "the features do reach memory afterwards");

        // Contrast: perturbing an *earlier* event's features changes memory
        // before scoring, so the score moves.
        let mut feats_c = feats_a;
        feats_c[(1, 0)] = 9.0;
        let graph_c = mk(feats_c);
        let (score_c, _) = score_last(&graph_c);
        assert_ne!(score_a, score_c, "history features must affect the score");
    }

    fn toy_stream(n_users: usize, n_items: usize, n_events: usize, seed: u64) -> TemporalGraph {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut events = Vec::with_capacity(n_events);
        for i in 0..n_events {
            let u = rng.random_range(0..n_users);
            let item = if rng.random::<f64>() < 0.8 {
                u % n_items
            } else {
                rng.random_range(0..n_items)
            };
            events.push(InteractionEvent {
                idx: i,
                src: u,
                dst: n_users + item,
                t: (i + 1) as f64,
                label: 0,
            });
        }
        build_graph(
            events,
            n_users,
            n_items,
            Some(Array2::zeros((n_users + n_items, 0))),
            Some(Array2::zeros((n_events, 2))),
        )
        .unwrap()
    }

    /// Same seed twice → bitwise-identical training trajectory and weights;
    /// gradients only ever came from the training stage.
    #[test]
    fn test_pretrain_is_deterministic_and_disciplined() {
        let dims = BackboneDims {
            d: 4,
            d_mem: 4,
            d_t: 2,
            n_heads: 2,
            k_recent: 5,
            dropout: 0.1,
        };
        let graph = toy_stream(6, 4, 160, 9);
        let bounds = chronological_split(&graph, &[0.7, 0.15, 0.15]).unwrap();
        let cfg = TrainCfg {
            batch_size: 40,
            lr: 1e-3,
            max_epochs: 2,
            patience: 5,
        };
        let spec = InductiveSpec::none(graph.n_nodes());
        let a = pretrain(&graph, &bounds, &spec, &dims, &cfg, 42).unwrap();
        let b = pretrain(&graph, &bounds, &spec, &dims, &cfg, 42).unwrap();

        assert_eq!(
            serde_json::to_string(&a.log).unwrap(),
            serde_json::to_string(&b.log).unwrap()
        );
        let names: Vec<String> = a.params.names().map(|s| s.to_string()).collect();
        for name in &names {
            assert_eq!(a.params.get(name), b.params.get(name), "parameter {name} diverged");
        }
        assert_eq!(a.memory.memory, b.memory.memory);

        let pre_end = bounds.pretrain().end;
        assert!(a.audit.max_grad_event().unwrap() < pre_end);
        for &(start, end) in &a.audit.early_stop_ranges {
            assert_eq!((start, end), (bounds.val().start, bounds.val().end));
        }
        assert_eq!(a.log.epochs.len(), 2);
        assert!(a.log.epochs.iter().all(|e| e.train_loss.is_finite()));
    }
}
