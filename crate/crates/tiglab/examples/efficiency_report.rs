//! Measure what prompt tuning saves: trainable scalars and seconds per epoch.
//!
//! The report times one adaptation epoch under each regime on the same data
//! and checkpoint: full fine-tuning (the reference row), then prompt tuning
//! with the configured generator plus the `vanilla` and `projection`
//! generators. The ×scalars and ×seconds columns are each row relative to
//! fine-tuning; the cache column shows the one-off cost prompt regimes pay
//! to precompute frozen embeddings before their cheap epochs.
//!
//! Run with `cargo run --release -p tiglab --example efficiency_report`.

use tiglab::config::ExperimentConfig;
use tiglab::report::report_efficiency;

const CONFIG: &str = r#"
[data]
source = "synthetic"

[data.synthetic]
kind = "planted_repeat"
n_users = 100
n_items = 50
n_events = 8000
seed = 37
node_feature_dim = 16
repeat_prob = 0.9

[paradigm]
tprog = "transformer"
mode = "prompt"
task = "link_prediction"

[model]
d = 32
d_mem = 32
d_t = 16
d_pos = 8
prompt_dim = 32
k_recent = 10
n_heads = 2
dropout = 0.1

[train]
pretrain_batch = 100
prompt_batch = 100
lr = 1e-3
max_epochs = 3
patience = 2

[run]
seeds = [37]
"#;

fn main() -> tiglab::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut config = ExperimentConfig::from_toml(CONFIG)?;
    config.run.out_dir = dir.path().join("runs");

    let report = report_efficiency(&config)?;
    print!("{}", report.render_text());

    let finetune = report
        .rows
        .iter()
        .find(|r| r.stage == "finetune")
        .expect("reference row");
    for row in report.rows.iter().filter(|r| r.stage == "prompt") {
        assert!(
            row.trainable_scalars < finetune.trainable_scalars,
            "prompt regimes must train fewer scalars than fine-tuning"
        );
    }
    println!("\nmachine-readable copies: {}", config.run.out_dir.join("efficiency.csv").display());
    Ok(())
}
