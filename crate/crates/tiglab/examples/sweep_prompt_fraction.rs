//! Sweep the prompt-stage data budget and watch test AP respond.
//!
//! More prompt-stage data means more events for the generator to learn the
//! post-drift regime from. The sweep keeps the validation and test stages
//! fixed, moves the pretrain/prompt boundary, and re-runs every seed at each
//! value, so the points are comparable.
//!
//! Run with `cargo run --release -p tiglab --example sweep_prompt_fraction`.

use tiglab::config::ExperimentConfig;
use tiglab::report::sweep;

const CONFIG: &str = r#"
[data]
source = "synthetic"

[data.synthetic]
kind = "planted_drift"
n_users = 50
n_items = 30
n_events = 4000
seed = 31
node_feature_dim = 16
drift_point = 0.6
repeat_prob = 0.9

[split]
fractions = [0.5, 0.2, 0.15, 0.15]

[paradigm]
tprog = "projection"
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
max_epochs = 4
patience = 2

[run]
seeds = [31, 32]
"#;

fn main() -> tiglab::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut config = ExperimentConfig::from_toml(CONFIG)?;
    config.run.out_dir = dir.path().join("sweep");

    let values = [0.05, 0.10, 0.15, 0.20];
    let reports = sweep(&config, "prompt_fraction", &values)?;

    println!("{:>16} {:>12} {:>12}", "prompt_fraction", "mean AP", "std");
    for report in &reports {
        let (_, value) = report.axis.as_ref().expect("sweep sets the axis");
        println!(
            "{:>16.2} {:>12.4} {:>12}",
            value,
            report.headline.mean,
            report
                .headline
                .std
                .map(|s| format!("{s:.4}"))
                .unwrap_or_else(|| "n/a".into())
        );
    }
    println!(
        "\ncombined CSV: {}",
        config.run.out_dir.join("sweep_prompt_fraction.csv").display()
    );
    println!("per-value artifacts live in {}/prompt_fraction_*/", config.run.out_dir.display());
    Ok(())
}
