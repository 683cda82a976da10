//! Load a Jodie-format interaction CSV and summarize it.
//!
//! Pass a dataset path as the first argument:
//!
//! ```bash
//! cargo run --release -p tiglab --example load_jodie_csv -- wikipedia.csv
//! ```
//!
//! Relative paths resolve under the `TIGLAB_DATA_DIR` environment variable.
//! Without an argument (or if the file is absent) the example writes a small
//! generated stream to a temporary CSV first, so it always has something to
//! demonstrate on.

use std::path::PathBuf;

use tiglab::dataio::{load_jodie_csv, resolve_data_path, write_jodie_csv, DATA_DIR_ENV};
use tiglab::split::chronological_split;
use tiglab::synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec};

fn main() -> tiglab::Result<()> {
    let arg = std::env::args().nth(1).map(PathBuf::from);
    let _keep_alive; // temp dir must outlive the load below
    let path = match &arg {
        Some(p) if resolve_data_path(p).exists() => resolve_data_path(p),
        _ => {
            if let Some(p) = &arg {
                eprintln!(
                    "{} not found (TIGLAB_DATA_DIR = {:?}); using a generated stand-in",
                    p.display(),
                    std::env::var(DATA_DIR_ENV).ok()
                );
            }
            let spec = SyntheticSpec::new(SyntheticKind::PlantedRepeat, 100, 60, 8000, 3);
            let graph = generate_synthetic(&spec)?;
            let dir = tempfile::tempdir().expect("temp dir");
            let csv = dir.path().join("stand_in.csv");
            write_jodie_csv(&graph, &csv)?;
            _keep_alive = dir;
            csv
        }
    };

    let graph = load_jodie_csv(&path)?;
    println!("loaded {}", path.display());
    println!(
        "  {} events over {} users and {} items ({} nodes total)",
        graph.events.len(),
        graph.n_users,
        graph.n_items,
        graph.n_nodes()
    );
    println!(
        "  time range [{:.1}, {:.1}], edge features {}-d",
        graph.t_min,
        graph.events.last().map(|e| e.t).unwrap_or(graph.t_min),
        graph.edge_feats.dim()
    );
    let labeled = graph.events.iter().filter(|e| e.label == 1).count();
    println!(
        "  {} events carry label 1 ({:.2}%)",
        labeled,
        100.0 * labeled as f64 / graph.events.len() as f64
    );

    // The standard four-stage chronological split used throughout.
    let bounds = chronological_split(&graph, &[0.5, 0.2, 0.15, 0.15])?;
    let names = ["pretrain", "prompt", "val", "test"];
    for (name, range) in names.iter().zip(&bounds.stages) {
        println!(
            "  {:<8} events [{:>6}, {:>6})  — {:5.1}%",
            name,
            range.start,
            range.end,
            100.0 * (range.end - range.start) as f64 / graph.events.len() as f64
        );
    }
    Ok(())
}
