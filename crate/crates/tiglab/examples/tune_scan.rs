//! Temporary scan (not shipped): criterion-5 shaped verification.

use tiglab::backbone::{pretrain, BackboneDims, TrainCfg};
use tiglab::orchestrate::{adapt_nc, Mode, NcStrategy};
use tiglab::split::{chronological_split, mask_inductive_nodes};
use tiglab::synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec};
use tiglab::tprog::{PromptCfg, PromptKind};

fn main() -> tiglab::Result<()> {
    let dims = BackboneDims { d: 32, d_mem: 32, d_t: 16, n_heads: 2, k_recent: 10, dropout: 0.1 };
    let pcfg = PromptCfg { d: 32, d_pos: 8, k_recent: 10, n_heads: 2, d_t: 16 };
    let pre_cfg = TrainCfg { batch_size: 100, lr: 1e-3, max_epochs: 8, patience: 3 };
    let cfg = TrainCfg { batch_size: 100, lr: 2e-3, max_epochs: 60, patience: 12 };

    let kinds = [
        PromptKind::Vanilla,
        PromptKind::Projection,
        PromptKind::StaticOutput,
        PromptKind::StaticInput,
    ];
    let t0 = std::time::Instant::now();
    let mut means = Vec::new();
    for kind in kinds {
        let mut scores = Vec::new();
        for seed in [1u64, 2, 3] {
            let mut spec = SyntheticSpec::new(SyntheticKind::HeteroNodes, 50, 30, 4000, seed);
            spec.node_feature_dim = 32;
            let graph = generate_synthetic(&spec)?;
            let bounds = chronological_split(&graph, &[0.5, 0.2, 0.15, 0.15])?;
            let inductive = mask_inductive_nodes(&graph, &bounds, 0.1, seed)?;
            let pre = pretrain(&graph, &bounds, &inductive, &dims, &pre_cfg, seed)?;
            let out = adapt_nc(
                &graph, &bounds, &inductive, &pre, &dims, &pcfg, &cfg, kind,
                Mode::Prompt, NcStrategy::Reinit, None, seed,
            )?;
            scores.push(out.test_report.headline());
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        println!(
            "{:<16} AUROC mean {:.4}  ({})",
            kind.name(),
            mean,
            scores.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>().join(", ")
        );
        means.push(mean);
    }
    let per_node_worst = means[0].min(means[1]);
    let shared_best = means[2].max(means[3]);
    println!(
        "\nworst per-node {per_node_worst:.4} vs best shared {shared_best:.4}: margin {:+.4} (bar +0.03)",
        per_node_worst - shared_best
    );
    println!("elapsed {:.1}s (bar 300s)", t0.elapsed().as_secs_f64());
    Ok(())
}
