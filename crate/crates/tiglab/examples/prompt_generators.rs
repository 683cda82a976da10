//! Train every prompt generator on one fixture and line up the results.
//!
//! All five generators see the same pre-trained backbone, the same
//! prompt-stage events, and the same seed. What differs is where the prompt
//! comes from and where it enters the model:
//!
//! - `vanilla`       — a learned free vector per node, fused with z;
//! - `transformer`   — attention over the node's recent interaction tokens;
//! - `projection`    — an MLP over the node's last state and time gap;
//! - `static_output` — one learned vector per node added to z (no fusion);
//! - `static_input`  — one learned vector per node added to its raw features.
//!
//! Run with `cargo run --release -p tiglab --example prompt_generators`.

use tiglab::backbone::{pretrain, BackboneDims, TrainCfg};
use tiglab::orchestrate::{prompt_tune, Task};
use tiglab::split::{chronological_split, mask_inductive_nodes};
use tiglab::synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec};
use tiglab::tprog::{PromptCfg, PromptKind};

fn main() -> tiglab::Result<()> {
    let mut spec = SyntheticSpec::new(SyntheticKind::PlantedDrift, 50, 30, 4000, 17);
    spec.node_feature_dim = 32; // static_input adds the prompt to node features, so d_n = d
    spec.drift_point = 0.6;
    spec.repeat_prob = 0.9;
    let graph = generate_synthetic(&spec)?;
    let bounds = chronological_split(&graph, &[0.5, 0.2, 0.15, 0.15])?;
    let inductive = mask_inductive_nodes(&graph, &bounds, 0.1, 17)?;

    let dims = BackboneDims {
        d: 32,
        d_mem: 32,
        d_t: 16,
        n_heads: 2,
        k_recent: 10,
        dropout: 0.1,
    };
    let pcfg = PromptCfg {
        d: 32,
        d_pos: 8,
        k_recent: 10,
        n_heads: 2,
        d_t: 16,
    };
    let cfg = TrainCfg {
        batch_size: 100,
        lr: 1e-3,
        max_epochs: 6,
        patience: 3,
    };

    let pre = pretrain(&graph, &bounds, &inductive, &dims, &cfg, 17)?;
    println!("pre-trained: best val AP {:.4}\n", pre.log.best_val_ap);

    println!("{:<16} {:>10} {:>12} {:>10}", "generator", "test AP", "trainable", "epochs");
    for kind in [
        PromptKind::Vanilla,
        PromptKind::Transformer,
        PromptKind::Projection,
        PromptKind::StaticOutput,
        PromptKind::StaticInput,
    ] {
        let out = prompt_tune(
            &graph,
            &bounds,
            &inductive,
            &pre,
            &dims,
            &pcfg,
            &cfg,
            kind,
            Task::LinkPrediction,
            17,
        )?;
        println!(
            "{:<16} {:>10.4} {:>12} {:>10}",
            kind.name(),
            out.test_report.headline(),
            out.trainable_scalars,
            out.log.epochs.len()
        );
    }
    Ok(())
}
