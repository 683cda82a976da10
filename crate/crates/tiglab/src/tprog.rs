//! Temporal prompt generators.
//!
//! A prompt generator produces a per-node vector `p_v ∈ R^d` that downstream
//! fusion mixes into the frozen backbone's embedding. Three temporal variants
//! condition on the node and/or the time of the request; two static baselines
//! share one vector across all nodes:
//!
//! * **Vanilla** — a `|V| × d` learnable table, zero-initialized, indexed by
//!   node id (time-independent).
//! * **Transformer** — encodes the node's recent interactions: one token per
//!   recent neighbor (embeddings of both endpoints, a recency-rank position
//!   embedding, the edge features, and the encoded time gap), passed through
//!   a single-layer transformer encoder, mean-pooled, and projected to `d`.
//!   Nodes without history get a learnable placeholder token. Parameter count
//!   is independent of the node count.
//! * **Projection** — fuses a per-node personal vector with the encoded time
//!   since the node's previous interaction through a two-layer MLP whose
//!   final layer starts at zero, so prompts begin neutral like Vanilla's.
//! * **StaticOutput** — a single `d` vector added to every output embedding.
//! * **StaticInput** — a single `d` vector added to every node's input
//!   features before the backbone read path (requires feature dim = `d`).
//!
//! All generators build on the shared tape so their parameters train by the
//! same optimizer path as everything else; the time-encoder parameters are
//! passed in from the (frozen) backbone set.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{FeatureTable, LastInteractionTracker, NeighborIndex};
use crate::nn::{
    grouped_attention, linear_apply, linear_init, linear_zero_init, mlp2_apply, mlp2_init, Bound,
    ParamSet,
};
use crate::time_encoding::encode_on_tape;

/// Prompt-generator variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Vanilla,
    Transformer,
    Projection,
    StaticOutput,
    StaticInput,
}

impl PromptKind {
    /// Static baselines share one vector across nodes; temporal variants are
    /// per-node and (except Vanilla) time-aware.
    pub fn is_static(&self) -> bool {
        matches!(self, PromptKind::StaticOutput | PromptKind::StaticInput)
    }

    pub fn name(&self) -> &'static str {
        match self {
            PromptKind::Vanilla => "vanilla",
            PromptKind::Transformer => "transformer",
            PromptKind::Projection => "projection",
            PromptKind::StaticOutput => "static_output",
            PromptKind::StaticInput => "static_input",
        }
    }

    /// Inverse of [`PromptKind::name`].
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "vanilla" => PromptKind::Vanilla,
            "transformer" => PromptKind::Transformer,
            "projection" => PromptKind::Projection,
            "static_output" => PromptKind::StaticOutput,
            "static_input" => PromptKind::StaticInput,
            _ => return None,
        })
    }

    /// All variants, comparison order.
    pub fn all() -> [PromptKind; 5] {
        [
            PromptKind::Vanilla,
            PromptKind::Transformer,
            PromptKind::Projection,
            PromptKind::StaticOutput,
            PromptKind::StaticInput,
        ]
    }
}

/// Shape knobs for prompt generation. The transformer token width (model
/// dim) equals `d`: the raw token concatenation is linearly projected down
/// before entering the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptCfg {
    /// Prompt width; must match the backbone embedding width.
    pub d: usize,
    /// Position-embedding width (transformer variant).
    pub d_pos: usize,
    /// Recent neighbors per token sequence (transformer variant).
    pub k_recent: usize,
    /// Encoder heads (transformer variant); must divide `d`.
    pub n_heads: usize,
    /// Time-encoding width (must match the backbone's).
    pub d_t: usize,
}

/// A prompt generator's trainable state.
#[derive(Debug, Clone)]
pub struct PromptState {
    pub kind: PromptKind,
    pub params: ParamSet,
}

/// Number of trainable scalars in the generator.
pub fn count_prompt_parameters(state: &PromptState) -> usize {
    state.params.n_scalars()
}

/// Initialize a generator. Tables start at zero (Vanilla, and Projection's
/// personal vectors); Projection's output layer is zero-initialized so the
/// initial prompt is exactly zero; static vectors start at zero so the
/// baseline begins neutral; transformer weights use standard initialization.
pub fn init_prompt(
    kind: PromptKind,
    n_nodes: usize,
    cfg: &PromptCfg,
    d_e: usize,
    d_n: usize,
    seed: u64,
) -> Result<PromptState> {
    let mut params = ParamSet::new();
    let mut rng = crate::backbone::seeded_rng(seed, crate::backbone::streams::PROMPT_INIT);
    match kind {
        PromptKind::Vanilla => {
            params.insert("prompt.table", Array2::zeros((n_nodes, cfg.d)));
        }
        PromptKind::Projection => {
            params.insert("prompt.personal", Array2::zeros((n_nodes, cfg.d)));
            linear_init(&mut params, "prompt.mlp.l1", cfg.d + cfg.d_t, cfg.d, &mut rng);
            linear_zero_init(&mut params, "prompt.mlp.l2", cfg.d, cfg.d);
        }
        PromptKind::Transformer => {
            if cfg.n_heads == 0 || cfg.d % cfg.n_heads != 0 {
                return Err(Error::InvalidConfig {
                    field: "prompt.n_heads".into(),
                    message: format!("{} must divide d={}", cfg.n_heads, cfg.d),
                });
            }
            params.insert(
                "prompt.pos",
                crate::nn::xavier_uniform(cfg.k_recent, cfg.d_pos, &mut rng),
            );
            let tok_in = 2 * cfg.d + cfg.d_pos + d_e + cfg.d_t;
            linear_init(&mut params, "prompt.in_proj", tok_in, cfg.d, &mut rng);
            params.insert(
                "prompt.no_history",
                crate::nn::xavier_uniform(1, cfg.d, &mut rng),
            );
            linear_init(&mut params, "prompt.enc.q", cfg.d, cfg.d, &mut rng);
            linear_init(&mut params, "prompt.enc.k", cfg.d, cfg.d, &mut rng);
            linear_init(&mut params, "prompt.enc.v", cfg.d, cfg.d, &mut rng);
            linear_init(&mut params, "prompt.enc.out", cfg.d, cfg.d, &mut rng);
            params.insert("prompt.enc.ln1.g", Array2::ones((1, cfg.d)));
            params.insert("prompt.enc.ln1.b", Array2::zeros((1, cfg.d)));
            mlp2_init(&mut params, "prompt.enc.ffn", cfg.d, cfg.d, cfg.d, &mut rng);
            params.insert("prompt.enc.ln2.g", Array2::ones((1, cfg.d)));
            params.insert("prompt.enc.ln2.b", Array2::zeros((1, cfg.d)));
            linear_init(&mut params, "prompt.readout", cfg.d, cfg.d, &mut rng);
        }
        PromptKind::StaticOutput => {
            params.insert("prompt.static", Array2::zeros((1, cfg.d)));
        }
        PromptKind::StaticInput => {
            if d_n != cfg.d {
                return Err(Error::InvalidConfig {
                    field: "prompt.kind".into(),
                    message: format!(
                        "static_input adds to node features, so feature dim {d_n} must equal d={}",
                        cfg.d
                    ),
                });
            }
            params.insert("prompt.static", Array2::zeros((1, cfg.d)));
        }
    }
    Ok(PromptState { kind, params })
}

// ============================================================================
// Vanilla / Projection / Static
// ============================================================================

/// Vanilla: rows of the learnable table, one per requested node.
pub fn vanilla_prompt(tape: &mut Tape, bound: &Bound, nodes: &[usize]) -> Var {
    let table = bound.var("prompt.table");
    tape.gather_rows(table, nodes)
}

/// Projection: MLP over [personal_v | φ(Δt)] where Δt is the time since the
/// node's previous interaction (callers obtain it from a
/// [`LastInteractionTracker`]; nodes that never interacted use the time since
/// stream origin).
pub fn projection_prompt(
    tape: &mut Tape,
    bound: &Bound,
    nodes: &[usize],
    deltas: &[f64],
    omega: Var,
    b: Var,
) -> Var {
    assert_eq!(nodes.len(), deltas.len());
    let personal = bound.var("prompt.personal");
    let rows = tape.gather_rows(personal, nodes);
    let phi = encode_on_tape(tape, omega, b, deltas);
    let x = tape.concat_cols(&[rows, phi]);
    mlp2_apply(tape, bound, "prompt.mlp", x)
}

/// Time-since-previous-interaction inputs for [`projection_prompt`].
pub fn projection_deltas(
    tracker: &LastInteractionTracker,
    nodes: &[usize],
    times: &[f64],
    t_min: f64,
) -> Vec<f64> {
    nodes
        .iter()
        .zip(times)
        .map(|(&v, &t)| tracker.delta_since(v, t, t_min))
        .collect()
}

/// Static baselines: the shared vector broadcast to `n` rows (gradients from
/// every row accumulate into the single parameter).
pub fn static_prompt_rows(tape: &mut Tape, bound: &Bound, n: usize) -> Var {
    let s = bound.var("prompt.static");
    tape.gather_rows(s, &vec![0; n])
}

// ============================================================================
// Transformer
// ============================================================================

/// One neighbor token's inputs: the row of the shared embedding matrix
/// holding the neighbor's embedding, the event whose edge features the token
/// carries, and the time gap to the request.
#[derive(Debug, Clone, Copy)]
pub struct TokenSlot {
    pub z_row: usize,
    pub event_idx: usize,
    pub delta: f64,
}

/// A node's token sequence: its own embedding row plus one slot per recent
/// neighbor, newest first. Empty `slots` means no qualifying history.
#[derive(Debug, Clone)]
pub struct NodeNeighborhood {
    pub z_self: usize,
    pub slots: Vec<TokenSlot>,
}

/// A prompt request to resolve against the interaction history: node `v` at
/// time `t`, optionally excluding one event (batch scoring passes the scored
/// event itself so prompts stay causal).
#[derive(Debug, Clone, Copy)]
pub struct PromptQuery {
    pub node: usize,
    pub t: f64,
    pub exclude_event: Option<usize>,
}

/// Resolve prompt requests into token sequences plus the deduplicated list of
/// (node, time, exclusion) embeddings the caller must compute; `z_row` /
/// `z_self` fields index into that list. Only events strictly before the
/// request time (or earlier in the batch order at the same time) qualify.
pub fn build_neighborhoods(
    index: &NeighborIndex,
    queries: &[PromptQuery],
    k: usize,
) -> (Vec<NodeNeighborhood>, Vec<crate::backbone::EmbedQuery>) {
    let mut rows: Vec<crate::backbone::EmbedQuery> = Vec::new();
    let mut seen: std::collections::HashMap<(usize, u64, Option<usize>), usize> =
        std::collections::HashMap::new();
    let mut row_of = |node: usize, t: f64, exclude: Option<usize>, rows: &mut Vec<crate::backbone::EmbedQuery>| {
        *seen.entry((node, t.to_bits(), exclude)).or_insert_with(|| {
            rows.push(crate::backbone::EmbedQuery {
                node,
                t,
                exclude_event: exclude,
            });
            rows.len() - 1
        })
    };
    let mut hoods = Vec::with_capacity(queries.len());
    for q in queries {
        let z_self = row_of(q.node, q.t, q.exclude_event, &mut rows);
        let hits = match q.exclude_event {
            Some(idx) => index.recent_before_event(q.node, q.t, idx, k),
            None => index.recent_neighbors(q.node, q.t, k),
        };
        let slots = hits
            .iter()
            .map(|hit| TokenSlot {
                z_row: row_of(hit.node, q.t, q.exclude_event, &mut rows),
                event_idx: hit.event_idx,
                delta: q.t - hit.t,
            })
            .collect();
        hoods.push(NodeNeighborhood { z_self, slots });
    }
    (hoods, rows)
}

/// Raw token matrix plus bookkeeping, before the encoder. Exposed separately
/// so tests can check the concatenation layout field by field.
pub(crate) struct TokenBatch {
    /// (n·k) × d tokens after input projection and placeholder substitution.
    pub x: Var,
    /// (n·k) × (2d+d_pos+d_e+d_t) raw concatenation (pads are zero-masked).
    /// Only layout tests read this; the encoder consumes `x`.
    #[allow(dead_code)]
    pub raw: Var,
    /// n × k attention/pooling availability (1 = real token or placeholder).
    pub avail: Array2<f64>,
    pub n: usize,
    pub k: usize,
}

pub(crate) fn build_transformer_tokens(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &PromptCfg,
    edge_feats: &FeatureTable,
    omega: Var,
    b: Var,
    z: Var,
    hoods: &[NodeNeighborhood],
) -> TokenBatch {
    let n = hoods.len();
    let k = cfg.k_recent;
    let d_e = edge_feats.dim();
    let mut self_rows = Vec::with_capacity(n * k);
    let mut nbr_rows = Vec::with_capacity(n * k);
    let mut pos_rows = Vec::with_capacity(n * k);
    let mut deltas = Vec::with_capacity(n * k);
    let mut edges = Array2::zeros((n * k, d_e));
    let mut avail = Array2::zeros((n, k));
    // 1 where the slot must be replaced by the placeholder token.
    let mut placeholder = Array2::zeros((n * k, cfg.d));
    for (i, hood) in hoods.iter().enumerate() {
        for j in 0..k {
            if let Some(slot) = hood.slots.get(j) {
                self_rows.push(hood.z_self);
                nbr_rows.push(slot.z_row);
                pos_rows.push(j);
                deltas.push(slot.delta);
                edges.row_mut(i * k + j).assign(&edge_feats.row(slot.event_idx));
                avail[(i, j)] = 1.0;
            } else {
                self_rows.push(hood.z_self);
                nbr_rows.push(hood.z_self);
                pos_rows.push(j);
                deltas.push(0.0);
            }
        }
        if hood.slots.is_empty() {
            // The first slot becomes the learnable no-history token.
            placeholder.row_mut(i * k).fill(1.0);
            avail[(i, 0)] = 1.0;
        }
    }
    // Zero out pad rows of the raw concatenation so they carry no signal.
    let mut real = Array2::zeros((n * k, 2 * cfg.d + cfg.d_pos + d_e + cfg.d_t));
    for (i, hood) in hoods.iter().enumerate() {
        for j in 0..hood.slots.len() {
            real.row_mut(i * k + j).fill(1.0);
        }
    }
    let z_self = tape.gather_rows(z, &self_rows);
    let z_nbr = tape.gather_rows(z, &nbr_rows);
    let pos_table = bound.var("prompt.pos");
    let pos = tape.gather_rows(pos_table, &pos_rows);
    let edge_v = tape.constant(edges);
    let phi = encode_on_tape(tape, omega, b, &deltas);
    let raw = tape.concat_cols(&[z_self, z_nbr, pos, edge_v, phi]);
    let raw = tape.mul_const(raw, real);
    let x = linear_apply(tape, bound, "prompt.in_proj", raw);
    // Substitute the placeholder token where flagged.
    let keep = placeholder.mapv(|m| 1.0 - m);
    let x_kept = tape.mul_const(x, keep);
    let nh = bound.var("prompt.no_history");
    let nh_rows = tape.gather_rows(nh, &vec![0; n * k]);
    let nh_rows = tape.mul_const(nh_rows, placeholder);
    let x = tape.add(x_kept, nh_rows);
    TokenBatch {
        x,
        raw,
        avail,
        n,
        k,
    }
}

/// Apply a learnable per-column scale and shift (layer-norm affine part).
fn affine_rows(tape: &mut Tape, bound: &Bound, name: &str, x: Var, rows: usize) -> Var {
    let g = bound.var(&format!("{name}.g"));
    let g = tape.gather_rows(g, &vec![0; rows]);
    let scaled = tape.mul(x, g);
    let beta = bound.var(&format!("{name}.b"));
    tape.add_row(scaled, beta)
}

/// Transformer prompts for a batch of resolved neighborhoods. `z` holds the
/// frozen-backbone embeddings referenced by the neighborhoods (pass a
/// constant in prompt mode, or a live variable to let gradients reach the
/// backbone in fine-tune mode).
pub fn transformer_prompt(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &PromptCfg,
    edge_feats: &FeatureTable,
    omega: Var,
    b: Var,
    z: Var,
    hoods: &[NodeNeighborhood],
) -> Var {
    let batch = build_transformer_tokens(tape, bound, cfg, edge_feats, omega, b, z, hoods);
    let (n, k) = (batch.n, batch.k);
    let x = batch.x;
    const LN_EPS: f64 = 1e-5;

    // Self-attention: every token attends to its own node's available slots.
    let q = linear_apply(tape, bound, "prompt.enc.q", x);
    let key = linear_apply(tape, bound, "prompt.enc.k", x);
    let val = linear_apply(tape, bound, "prompt.enc.v", x);
    let mut expand = Vec::with_capacity(n * k * k);
    let mut mask = Array2::zeros((n * k, k));
    for i in 0..n {
        for j in 0..k {
            for jj in 0..k {
                expand.push(i * k + jj);
                // Pad queries keep an all-zero row (their output is unused).
                if batch.avail[(i, j)] == 1.0 {
                    mask[(i * k + j, jj)] = batch.avail[(i, jj)];
                }
            }
        }
    }
    let k_exp = tape.gather_rows(key, &expand);
    let v_exp = tape.gather_rows(val, &expand);
    let att = grouped_attention(tape, q, k_exp, v_exp, k, cfg.n_heads, &mask);
    let att = linear_apply(tape, bound, "prompt.enc.out", att);
    let x1 = tape.add(x, att);
    let x1 = tape.layer_norm_rows(x1, LN_EPS);
    let x1 = affine_rows(tape, bound, "prompt.enc.ln1", x1, n * k);
    let ffn = mlp2_apply(tape, bound, "prompt.enc.ffn", x1);
    let x2 = tape.add(x1, ffn);
    let x2 = tape.layer_norm_rows(x2, LN_EPS);
    let x2 = affine_rows(tape, bound, "prompt.enc.ln2", x2, n * k);

    // Mean-pool the available slots of each node, then project to d.
    let mut probs = Array2::zeros((n, k));
    for i in 0..n {
        let m: f64 = (0..k).map(|j| batch.avail[(i, j)]).sum();
        for j in 0..k {
            probs[(i, j)] = batch.avail[(i, j)] / m;
        }
    }
    let probs_v = tape.constant(probs);
    let pooled = tape.batched_weighted_sum(probs_v, x2);
    linear_apply(tape, bound, "prompt.readout", pooled)
}
