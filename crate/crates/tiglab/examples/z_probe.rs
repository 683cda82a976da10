//! Temporary probe (not shipped): embedding magnitude under the fusion shift.

use tiglab::backbone::{pretrain, BackboneDims, EmbedQuery, ReplayCursor, TrainCfg};
use tiglab::graph::NeighborIndex;
use tiglab::split::{chronological_split, mask_inductive_nodes};
use tiglab::synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec};

fn main() -> tiglab::Result<()> {
    for (nfeat, seed) in [(16usize, 2u64), (32, 2), (16, 1), (32, 1)] {
        let mut spec = SyntheticSpec::new(SyntheticKind::PlantedDrift, 50, 30, 4000, seed);
        spec.node_feature_dim = nfeat;
        spec.drift_point = 0.55;
        spec.repeat_prob = 0.9;
        let graph = generate_synthetic(&spec)?;
        let bounds = chronological_split(&graph, &[0.5, 0.2, 0.15, 0.15])?;
        let inductive = mask_inductive_nodes(&graph, &bounds, 0.1, seed)?;
        let dims = BackboneDims { d: 32, d_mem: 32, d_t: 16, n_heads: 2, k_recent: 10, dropout: 0.1 };
        let cfg = TrainCfg { batch_size: 100, lr: 1e-3, max_epochs: 8, patience: 4 };
        let pre = pretrain(&graph, &bounds, &inductive, &dims, &cfg, seed)?;

        let index = NeighborIndex::build(&graph);
        let mut cursor = ReplayCursor::new(&pre.params, &dims, &graph, &index, pre.memory.clone());
        let prompt_range = bounds.prompt().unwrap();
        for start in (prompt_range.start..prompt_range.end).step_by(100) {
            let end = (start + 100).min(prompt_range.end);
            cursor.ingest(&graph.events[start..end]);
        }
        let val = bounds.val();
        let queries: Vec<EmbedQuery> = graph.events[val.start..val.start + 200]
            .iter()
            .map(|e| EmbedQuery { node: e.src, t: e.t, exclude_event: None })
            .collect();
        let z = cursor.embed(&queries);
        let min = z.iter().cloned().fold(f64::MAX, f64::min);
        let max = z.iter().cloned().fold(f64::MIN, f64::max);
        let below = z.iter().filter(|v| **v < -3.0).count();
        let mean_abs = z.iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64;
        println!(
            "nfeat {nfeat} seed {seed}: z range [{min:.2}, {max:.2}], mean|z| {mean_abs:.3}, {}% below -3",
            100.0 * below as f64 / z.len() as f64
        );
    }
    Ok(())
}
