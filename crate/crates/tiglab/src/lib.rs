//! # tiglab
//!
//! A laboratory for continuous-time interaction graphs: pre-train a
//! memory-based temporal graph backbone on link prediction, then adapt it to
//! downstream data cheaply with *node-time prompts* instead of full
//! fine-tuning.
//!
//! The crate is organized around a small number of moving parts:
//!
//! - [`graph`] — event streams, feature tables, chronological splits, and a
//!   time-indexed neighbor store.
//! - [`time_encoding`] — the trainable cosine basis that turns time deltas
//!   into vectors.
//! - [`backbone`] — node memory (message MLP + GRU) plus a temporal-attention
//!   read path, pre-trained end to end on link prediction.
//! - [`tprog`] — prompt generators: a per-node table (`Vanilla`), a
//!   transformer over recent-neighbor tokens (`Transformer`), a personalized
//!   time-aware MLP (`Projection`), and two single-vector static baselines.
//! - [`fusion`] — the MLP that combines a frozen embedding with its prompt,
//!   and the link / node-classification heads.
//! - [`orchestrate`] — the two adaptation paradigms (`prompt` freezes the
//!   backbone, `prompt_finetune` trains it jointly) and the replay machinery
//!   that keeps node memory causal across stages.
//! - [`eval`] — ranking metrics (average precision, AUROC) with exact
//!   brute-force semantics, and the transductive/inductive evaluation
//!   protocol.
//! - [`report`] — experiment runner, sweeps, efficiency accounting, and
//!   CSV/SVG outputs.
//!
//! ## Runnable examples
//!
//! Each major capability has a self-contained example:
//!
//! ```text
//! cargo run --release -p tiglab --example generate_synthetic
//! cargo run --release -p tiglab --example load_jodie_csv -- path/to/wikipedia.csv
//! cargo run --release -p tiglab --example pretrain_backbone
//! cargo run --release -p tiglab --example prompt_tuning
//! cargo run --release -p tiglab --example prompt_finetuning
//! cargo run --release -p tiglab --example prompt_generators
//! cargo run --release -p tiglab --example static_vs_temporal
//! cargo run --release -p tiglab --example node_classification
//! cargo run --release -p tiglab --example sweep_prompt_fraction
//! cargo run --release -p tiglab --example efficiency_report
//! cargo run --release -p tiglab --example checkpoint_roundtrip
//! ```
//!
//! The thin `tiglab` binary drives the same machinery from config files:
//! `tiglab run --config exp.toml`, `tiglab sweep --config exp.toml --axis
//! prompt_fraction --values 0.05,0.1,0.2`, `tiglab efficiency --config
//! exp.toml`, and `tiglab plot --in out/ --kind sweep`.
//!
//! Jodie-format CSV datasets are resolved relative to the `TIGLAB_DATA_DIR`
//! environment variable when paths are not absolute.

pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod graph;
pub mod nn;
pub mod orchestrate;
pub mod report;
pub mod split;
pub mod synthetic;
pub mod time_encoding;
pub mod tprog;

pub use error::{Error, Result};
