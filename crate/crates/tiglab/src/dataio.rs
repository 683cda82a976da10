//! Reading and writing interaction datasets in the Jodie CSV layout.
//!
//! The format is one header line followed by one row per event:
//!
//! ```text
//! user_id,item_id,timestamp,state_label,comma_separated_list_of_features
//! 0,0,0.0,0,0.1,0.3
//! ```
//!
//! User and item ids are independently zero-based in the file; on load the
//! item partition is shifted by `n_users` so node ids are globally unique.
//! Every row must carry the same number of feature columns.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{build_graph, InteractionEvent, TemporalGraph};

/// Environment variable naming the directory searched for relative dataset
/// paths.
pub const DATA_DIR_ENV: &str = "TIGLAB_DATA_DIR";

/// Header written by [`write_jodie_csv`] and tolerated (but not required
/// verbatim) by the loader — any first line is treated as the header.
const CANONICAL_HEADER: &str = "user_id,item_id,timestamp,state_label,comma_separated_list_of_features";

/// Resolve a dataset path: absolute paths and paths that exist as given are
/// used directly, otherwise the path is joined onto `TIGLAB_DATA_DIR`.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    let base = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    resolve_with_base(path, base.as_deref())
}

fn resolve_with_base(path: &Path, base: Option<&Path>) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    match base {
        Some(dir) => dir.join(path),
        None => path.to_path_buf(),
    }
}

/// Load a Jodie-format CSV into a [`TemporalGraph`].
///
/// Node counts are inferred from the maximum ids seen. The per-event feature
/// columns become the edge-feature table; node features are absent from this
/// format and fall back to zeros. Errors: [`Error::Io`] when the file cannot
/// be read, [`Error::Parse`] (with a 1-based line number counting the header)
/// for malformed rows or inconsistent feature counts, and
/// [`Error::EmptyStream`] for a header-only file.
pub fn load_jodie_csv(path: &Path) -> Result<TemporalGraph> {
    let path = resolve_data_path(path);
    let display = path.display().to_string();
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&display, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(std::io::BufReader::new(file));

    let mut events: Vec<InteractionEvent> = Vec::new();
    let mut feats: Vec<f64> = Vec::new();
    let mut d_e: Option<usize> = None;
    let mut max_user = 0usize;
    let mut max_item = 0usize;

    for (row_i, record) in reader.records().enumerate() {
        let line = row_i + 2; // 1-based, after the header line
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() < 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected at least 4 columns, got {}", record.len()),
            });
        }
        let parse_field = |i: usize, name: &str| -> Result<f64> {
            record[i].trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("{name} `{}` is not a number", &record[i]),
            })
        };
        let user = parse_field(0, "user_id")?;
        let item = parse_field(1, "item_id")?;
        let t = parse_field(2, "timestamp")?;
        let label = parse_field(3, "state_label")?;
        if user < 0.0 || user.fract() != 0.0 || item < 0.0 || item.fract() != 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("ids must be non-negative integers, got ({}, {})", &record[0], &record[1]),
            });
        }
        if label < 0.0 || label.fract() != 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("state_label `{}` is not a non-negative integer", &record[3]),
            });
        }
        let n_feat = record.len() - 4;
        match d_e {
            None => d_e = Some(n_feat),
            Some(k) if k != n_feat => {
                return Err(Error::Parse {
                    line,
                    message: format!("row has {n_feat} feature columns, earlier rows had {k}"),
                });
            }
            _ => {}
        }
        for i in 0..n_feat {
            feats.push(parse_field(4 + i, "feature")?);
        }
        let user = user as usize;
        let item = item as usize;
        max_user = max_user.max(user);
        max_item = max_item.max(item);
        events.push(InteractionEvent {
            idx: 0,
            src: user,
            dst: item, // offset applied below once n_users is known
            t,
            label: label as u32,
        });
    }

    if events.is_empty() {
        return Err(Error::EmptyStream(format!("{display} holds no event rows")));
    }

    let n_users = max_user + 1;
    let n_items = max_item + 1;
    for e in &mut events {
        e.dst += n_users;
    }
    let d_e = d_e.unwrap_or(0);
    let edge_feats = if d_e == 0 {
        None
    } else {
        Some(
            Array2::from_shape_vec((events.len(), d_e), feats).map_err(|e| Error::Parse {
                line: 0,
                message: format!("feature table shape: {e}"),
            })?,
        )
    };
    build_graph(events, n_users, n_items, None, edge_feats)
}

/// Write a graph back out in the Jodie layout. Feature values use Rust's
/// shortest round-trip float formatting, so a load → write → load cycle
/// reproduces every value bit for bit.
pub fn write_jodie_csv(graph: &TemporalGraph, path: &Path) -> Result<()> {
    use std::io::Write;
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = std::io::BufWriter::new(file);
    let emit = |w: &mut dyn Write| -> std::io::Result<()> {
        writeln!(w, "{CANONICAL_HEADER}")?;
        for e in &graph.events {
            write!(w, "{},{},{},{}", e.src, e.dst - graph.n_users, e.t, e.label)?;
            let row = graph.edge_feats.row(e.idx);
            for x in row.iter() {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    };
    emit(&mut w).map_err(|e| Error::io(&display, e))
}
