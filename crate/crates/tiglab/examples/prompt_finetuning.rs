//! Compare the two adaptation paradigms: prompt-only vs prompt + fine-tune.
//!
//! Both runs start from the same pre-trained checkpoint and train the same
//! prompt generator on the same prompt-stage events. The prompt-only run
//! freezes the backbone; the fine-tune run lets the backbone join the
//! optimizer with fresh moments. Fine-tuning updates two orders of magnitude
//! more scalars and pays for it in wall-clock per epoch.
//!
//! Run with `cargo run --release -p tiglab --example prompt_finetuning`.

use tiglab::backbone::{pretrain, BackboneDims, TrainCfg};
use tiglab::orchestrate::{adapt, Mode, Task};
use tiglab::split::{chronological_split, mask_inductive_nodes};
use tiglab::synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec};
use tiglab::tprog::{PromptCfg, PromptKind};

fn main() -> tiglab::Result<()> {
    let mut spec = SyntheticSpec::new(SyntheticKind::PlantedDrift, 50, 30, 4000, 2);
    spec.node_feature_dim = 16;
    spec.drift_point = 0.55;
    spec.repeat_prob = 0.9;
    let graph = generate_synthetic(&spec)?;
    let bounds = chronological_split(&graph, &[0.5, 0.2, 0.15, 0.15])?;
    let inductive = mask_inductive_nodes(&graph, &bounds, 0.1, 2)?;

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
    let pre_cfg = TrainCfg {
        batch_size: 100,
        lr: 1e-3,
        max_epochs: 8,
        patience: 3,
    };
    let cfg = TrainCfg {
        batch_size: 100,
        lr: 2e-3,
        max_epochs: 60,
        patience: 12,
    };

    let pre = pretrain(&graph, &bounds, &inductive, &dims, &pre_cfg, 2)?;
    println!("pre-trained: best val AP {:.4}\n", pre.log.best_val_ap);

    let mut rows = Vec::new();
    for mode in [Mode::Prompt, Mode::PromptFinetune] {
        let out = adapt(
            &graph,
            &bounds,
            &inductive,
            &pre,
            &dims,
            &pcfg,
            &cfg,
            PromptKind::Projection,
            mode,
            Task::LinkPrediction,
            2,
        )?;
        let backbone_moved = out.backbone != pre.params;
        let mean_epoch =
            out.epoch_seconds.iter().sum::<f64>() / out.epoch_seconds.len().max(1) as f64;
        rows.push((mode, out.test_report.headline(), out.trainable_scalars, mean_epoch, backbone_moved));
    }

    println!(
        "{:<18} {:>10} {:>12} {:>12} {:>16}",
        "mode", "test AP", "trainable", "s/epoch", "backbone moved?"
    );
    for (mode, ap, trainable, secs, moved) in &rows {
        let name = match mode {
            Mode::Prompt => "prompt",
            Mode::PromptFinetune => "prompt_finetune",
        };
        println!(
            "{:<18} {:>10.4} {:>12} {:>12.3} {:>16}",
            name, ap, trainable, secs, moved
        );
    }

    assert!(!rows[0].4, "prompt mode must not touch the backbone");
    assert!(rows[1].4, "fine-tune mode must update the backbone");
    assert!(rows[1].2 > rows[0].2, "fine-tune trains strictly more scalars");
    Ok(())
}
