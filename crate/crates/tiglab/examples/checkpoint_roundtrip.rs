//! Save a trained pipeline, reload it, and prove nothing moved.
//!
//! The archive format is deliberately boring: a magic header, a JSON
//! manifest naming every tensor, then little-endian `f64` payloads. Boring
//! means checkable — this example round-trips a backbone and a prompt
//! archive and asserts byte-level parameter equality, then shows the
//! config-fingerprint gate that stops a checkpoint from silently loading
//! under a different configuration.
//!
//! Run with `cargo run --release -p tiglab --example checkpoint_roundtrip`.

use tiglab::backbone::{pretrain, BackboneDims, TrainCfg};
use tiglab::checkpoint::{load_backbone, load_prompt, save_backbone, save_prompt};
use tiglab::error::Error;
use tiglab::orchestrate::{prompt_tune, Task};
use tiglab::split::{chronological_split, mask_inductive_nodes};
use tiglab::synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec};
use tiglab::tprog::{PromptCfg, PromptKind};

fn main() -> tiglab::Result<()> {
    let mut spec = SyntheticSpec::new(SyntheticKind::PlantedRepeat, 40, 20, 2000, 41);
    spec.node_feature_dim = 16;
    let graph = generate_synthetic(&spec)?;
    let bounds = chronological_split(&graph, &[0.5, 0.2, 0.15, 0.15])?;
    let inductive = mask_inductive_nodes(&graph, &bounds, 0.1, 41)?;

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
        max_epochs: 3,
        patience: 2,
    };

    let pre = pretrain(&graph, &bounds, &inductive, &dims, &cfg, 41)?;
    let tuned = prompt_tune(
        &graph,
        &bounds,
        &inductive,
        &pre,
        &dims,
        &pcfg,
        &cfg,
        PromptKind::Projection,
        Task::LinkPrediction,
        41,
    )?;

    let dir = tempfile::tempdir().expect("temp dir");
    let backbone_path = dir.path().join("backbone.ckpt");
    let prompt_path = dir.path().join("prompt.ckpt");
    let config_hash = "a3f1c2"; // stands in for ExperimentConfig::content_hash()

    save_backbone(&backbone_path, &pre.params, &pre.memory, &dims, config_hash, 41)?;
    save_prompt(&prompt_path, &tuned.prompt, &tuned.head, config_hash, 41)?;
    println!(
        "wrote {} ({} bytes) and {} ({} bytes)",
        backbone_path.display(),
        std::fs::metadata(&backbone_path).map(|m| m.len()).unwrap_or(0),
        prompt_path.display(),
        std::fs::metadata(&prompt_path).map(|m| m.len()).unwrap_or(0),
    );

    let backbone = load_backbone(&backbone_path, config_hash, false)?;
    assert_eq!(backbone.pre.params, pre.params, "backbone tensors must round-trip exactly");
    assert_eq!(backbone.seed, 41);
    let reloaded = load_prompt(&prompt_path, config_hash, false)?;
    assert_eq!(reloaded.prompt.params, tuned.prompt.params);
    assert_eq!(reloaded.head, tuned.head);
    println!("round-trip exact: every tensor byte-identical after reload");

    // The fingerprint gate: a different config hash is an error …
    match load_backbone(&backbone_path, "deadbeef", false) {
        Err(e @ Error::ConfigHashMismatch { .. }) => {
            println!("mismatched fingerprint refused as expected: {e}")
        }
        Err(e) => panic!("expected a config-hash mismatch, got {e}"),
        Ok(_) => panic!("expected a config-hash mismatch, got a loaded archive"),
    }
    // … unless explicitly forced.
    let forced = load_backbone(&backbone_path, "deadbeef", true)?;
    assert_eq!(forced.pre.params, pre.params);
    println!("force-load overrides the gate and still restores the same tensors");
    Ok(())
}
