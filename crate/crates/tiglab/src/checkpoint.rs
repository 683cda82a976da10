//! Versioned checkpoint archives.
//!
//! One self-describing binary format serves both checkpoint kinds: the
//! pre-trained backbone (Θ with its time-encoder tensors, plus the memory
//! snapshot) and adapted prompt state (generator + fusion/head tensors,
//! tagged by generator variant). Layout:
//!
//! ```text
//! bytes 0..8     magic  b"TIGCKPT\0"
//! bytes 8..12    format version, u32 little-endian
//! bytes 12..20   manifest length m, u64 little-endian
//! bytes 20..20+m manifest, UTF-8 JSON
//! rest           payload: all tensors as little-endian f64, row-major,
//!                at the element offsets the manifest declares
//! ```
//!
//! The manifest records every tensor's name, shape, and offset, the seed the
//! run derived its random streams from, and a hash of the producing
//! configuration. Loading verifies magic, version, and shape bookkeeping,
//! and refuses a mismatched config hash unless forced. Writing is
//! deterministic: identical inputs produce byte-identical archives.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{flush_pending, BackboneDims, MemoryState, PretrainOutcome};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tprog::{PromptKind, PromptState};

/// Archive format version this build reads and writes.
pub const FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 8] = b"TIGCKPT\0";

/// Hex-encoded SHA-256, used to fingerprint configurations.
pub fn hash_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ============================================================================
// Manifest
// ============================================================================

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Element (not byte) offset into the payload.
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    /// `"backbone"` or `"prompt"`.
    kind: String,
    /// Prompt-generator variant tag (prompt checkpoints only).
    variant: Option<String>,
    /// Fingerprint of the configuration that produced this archive.
    config_hash: String,
    /// Master seed; every random stream of a run derives from it, so it is
    /// the complete generator state needed to reproduce the run.
    seed: u64,
    params: Vec<TensorEntry>,
    memory: Option<TensorEntry>,
    last_update: Option<TensorEntry>,
}

// ============================================================================
// Writing
// ============================================================================

struct Writer {
    payload: Vec<f64>,
}

impl Writer {
    fn new() -> Self {
        Writer {
            payload: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, value: &Array2<f64>) -> TensorEntry {
        let offset = self.payload.len() as u64;
        self.payload.extend(value.iter().copied());
        TensorEntry {
            name: name.to_string(),
            rows: value.nrows(),
            cols: value.ncols(),
            offset,
        }
    }

    fn finish(self, manifest: &Manifest, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string(manifest).expect("manifest has no non-serializable fields");
        let mut bytes =
            Vec::with_capacity(20 + json.len() + self.payload.len() * std::mem::size_of::<f64>());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&manifest.format_version.to_le_bytes());
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(json.as_bytes());
        for v in &self.payload {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn push_set(writer: &mut Writer, set: &ParamSet) -> Vec<TensorEntry> {
    set.names()
        .map(|name| {
            let value = set.get(name).clone();
            writer.push(name, &value)
        })
        .collect()
}

/// Save a pre-trained backbone: parameters plus the memory snapshot. Pending
/// messages are flushed into memory first (a no-op numerically; see
/// [`flush_pending`]).
pub fn save_backbone(
    path: &Path,
    params: &ParamSet,
    memory: &MemoryState,
    dims: &BackboneDims,
    config_hash: &str,
    seed: u64,
) -> Result<()> {
    let mut state = memory.clone();
    flush_pending(params, dims, &mut state);
    let mut writer = Writer::new();
    let entries = push_set(&mut writer, params);
    let memory_entry = writer.push("memory", &state.memory);
    let lu =
        Array2::from_shape_vec((1, state.last_update.len()), state.last_update.clone()).unwrap();
    let lu_entry = writer.push("last_update", &lu);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: "backbone".into(),
        variant: None,
        config_hash: config_hash.to_string(),
        seed,
        params: entries,
        memory: Some(memory_entry),
        last_update: Some(lu_entry),
    };
    writer.finish(&manifest, path)
}

/// Save adapted prompt state: the generator's tensors plus fusion/head
/// tensors, in one parameter list (prefixes distinguish them), tagged by
/// generator variant.
pub fn save_prompt(
    path: &Path,
    prompt: &PromptState,
    head: &ParamSet,
    config_hash: &str,
    seed: u64,
) -> Result<()> {
    let mut writer = Writer::new();
    let mut entries = push_set(&mut writer, &prompt.params);
    entries.extend(push_set(&mut writer, head));
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: "prompt".into(),
        variant: Some(prompt.kind.name().to_string()),
        config_hash: config_hash.to_string(),
        seed,
        params: entries,
        memory: None,
        last_update: None,
    };
    writer.finish(&manifest, path)
}

// ============================================================================
// Reading
// ============================================================================

struct Reader {
    manifest: Manifest,
    payload: Vec<f64>,
}

impl Reader {
    fn open(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::BadCheckpoint(
                "missing or unrecognized archive magic".into(),
            ));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::BadCheckpoint(format!(
                "format version {version} (this build reads {FORMAT_VERSION})"
            )));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let payload_start = 20 + mlen;
        if bytes.len() < payload_start {
            return Err(Error::BadCheckpoint("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[20..payload_start])
            .map_err(|e| Error::BadCheckpoint(format!("manifest does not parse: {e}")))?;
        let payload_bytes = &bytes[payload_start..];
        if payload_bytes.len() % 8 != 0 {
            return Err(Error::BadCheckpoint("payload is not whole f64s".into()));
        }
        let payload: Vec<f64> = payload_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Reader { manifest, payload })
    }

    fn check_hash(&self, expected: &str, force: bool) -> Result<()> {
        if self.manifest.config_hash != expected && !force {
            return Err(Error::ConfigHashMismatch {
                expected: expected.to_string(),
                found: self.manifest.config_hash.clone(),
            });
        }
        Ok(())
    }

    fn tensor(&self, entry: &TensorEntry) -> Result<Array2<f64>> {
        let start = entry.offset as usize;
        let len = entry.rows * entry.cols;
        let end = start.checked_add(len).filter(|&e| e <= self.payload.len());
        let end = end.ok_or_else(|| {
            Error::BadCheckpoint(format!(
                "tensor `{}` points past the payload ({} elements declared at offset {})",
                entry.name, len, entry.offset
            ))
        })?;
        Ok(
            Array2::from_shape_vec((entry.rows, entry.cols), self.payload[start..end].to_vec())
                .expect("shape matches slice length by construction"),
        )
    }

    fn param_set(&self, entries: &[TensorEntry]) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        for entry in entries {
            set.insert(&entry.name, self.tensor(entry)?);
        }
        Ok(set)
    }
}

/// A backbone archive, decoded. `pre` carries empty logs — training history
/// lives in run manifests, not checkpoints.
pub struct LoadedBackbone {
    pub pre: PretrainOutcome,
    pub seed: u64,
    pub config_hash: String,
}

/// Load a backbone archive, verifying the config fingerprint unless `force`.
pub fn load_backbone(path: &Path, expected_hash: &str, force: bool) -> Result<LoadedBackbone> {
    let reader = Reader::open(path)?;
    if reader.manifest.kind != "backbone" {
        return Err(Error::BadCheckpoint(format!(
            "expected a backbone archive, found kind `{}`",
            reader.manifest.kind
        )));
    }
    reader.check_hash(expected_hash, force)?;
    let params = reader.param_set(&reader.manifest.params)?;
    let mem_entry = reader
        .manifest
        .memory
        .as_ref()
        .ok_or_else(|| Error::BadCheckpoint("backbone archive without memory".into()))?;
    let lu_entry = reader
        .manifest
        .last_update
        .as_ref()
        .ok_or_else(|| Error::BadCheckpoint("backbone archive without last_update".into()))?;
    let memory_values = reader.tensor(mem_entry)?;
    let lu = reader.tensor(lu_entry)?;
    if lu.nrows() != 1 || lu.ncols() != memory_values.nrows() {
        return Err(Error::BadCheckpoint(
            "last_update length disagrees with memory rows".into(),
        ));
    }
    let mut memory = MemoryState::init(memory_values.nrows(), memory_values.ncols(), 0.0);
    memory.memory = memory_values;
    memory.last_update = lu.row(0).to_vec();
    Ok(LoadedBackbone {
        pre: PretrainOutcome {
            params,
            memory,
            log: Default::default(),
            audit: Default::default(),
        },
        seed: reader.manifest.seed,
        config_hash: reader.manifest.config_hash.clone(),
    })
}

/// A prompt archive, decoded into generator state and fusion/head tensors.
pub struct LoadedPrompt {
    pub prompt: PromptState,
    pub head: ParamSet,
    pub seed: u64,
    pub config_hash: String,
}

/// Load a prompt archive, verifying the config fingerprint unless `force`.
pub fn load_prompt(path: &Path, expected_hash: &str, force: bool) -> Result<LoadedPrompt> {
    let reader = Reader::open(path)?;
    if reader.manifest.kind != "prompt" {
        return Err(Error::BadCheckpoint(format!(
            "expected a prompt archive, found kind `{}`",
            reader.manifest.kind
        )));
    }
    reader.check_hash(expected_hash, force)?;
    let variant = reader
        .manifest
        .variant
        .as_deref()
        .ok_or_else(|| Error::BadCheckpoint("prompt archive without variant tag".into()))?;
    let kind = PromptKind::from_name(variant).ok_or_else(|| {
        Error::BadCheckpoint(format!("unknown prompt variant `{variant}`"))
    })?;
    let prompt_entries: Vec<TensorEntry> = reader
        .manifest
        .params
        .iter()
        .filter(|e| e.name.starts_with("prompt."))
        .cloned()
        .collect();
    let head_entries: Vec<TensorEntry> = reader
        .manifest
        .params
        .iter()
        .filter(|e| !e.name.starts_with("prompt."))
        .cloned()
        .collect();
    Ok(LoadedPrompt {
        prompt: PromptState {
            kind,
            params: reader.param_set(&prompt_entries)?,
        },
        head: reader.param_set(&head_entries)?,
        seed: reader.manifest.seed,
        config_hash: reader.manifest.config_hash.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{init_backbone, seeded_rng, streams};
    use crate::fusion::{init_fusion, init_link_head};
    use crate::nn::xavier_uniform;
    use crate::tprog::{init_prompt, PromptCfg};
    use tempfile::tempdir;

    fn dims() -> BackboneDims {
        BackboneDims {
            d: 8,
            d_mem: 8,
            d_t: 4,
            n_heads: 2,
            k_recent: 3,
            dropout: 0.1,
        }
    }

    fn values_equal(a: &ParamSet, b: &ParamSet) -> bool {
        let names: Vec<&str> = a.names().collect();
        names.len() == b.names().count()
            && names.iter().all(|n| b.contains(n) && a.get(n) == b.get(n))
    }

    #[test]
    fn test_hash_bytes_matches_known_sha256() {
        assert_eq!(
            hash_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn test_backbone_roundtrip_is_exact_and_deterministic() {
        let d = dims();
        let params = init_backbone(&d, 5, 3, 42);
        let mut memory = MemoryState::init(10, d.d_mem, -1.5);
        let mut rng = seeded_rng(7, streams::INIT);
        memory.memory = xavier_uniform(10, d.d_mem, &mut rng);
        memory.last_update[3] = 2.25;

        let dir = tempdir().unwrap();
        let path = dir.path().join("backbone.ckpt");
        save_backbone(&path, &params, &memory, &d, "cafe01", 42).unwrap();
        let loaded = load_backbone(&path, "cafe01", false).unwrap();
        assert!(values_equal(&params, &loaded.pre.params));
        assert_eq!(loaded.pre.memory.memory, memory.memory);
        assert_eq!(loaded.pre.memory.last_update, memory.last_update);
        assert_eq!(loaded.seed, 42);

        // Re-saving the loaded state reproduces the archive byte for byte.
        let path2 = dir.path().join("backbone2.ckpt");
        save_backbone(
            &path2,
            &loaded.pre.params,
            &loaded.pre.memory,
            &d,
            "cafe01",
            42,
        )
        .unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn test_prompt_roundtrip_keeps_variant_and_split() {
        let cfg = PromptCfg {
            d: 8,
            d_pos: 4,
            k_recent: 3,
            n_heads: 2,
            d_t: 4,
        };
        let prompt = init_prompt(PromptKind::Projection, 12, &cfg, 5, 3, 9).unwrap();
        let mut head = ParamSet::new();
        let mut rng = seeded_rng(9, streams::PROMPT_INIT);
        init_fusion(&mut head, cfg.d, cfg.d, &mut rng);
        init_link_head(&mut head, cfg.d, &mut rng);

        let dir = tempdir().unwrap();
        let path = dir.path().join("prompt.ckpt");
        save_prompt(&path, &prompt, &head, "beef02", 9).unwrap();
        let loaded = load_prompt(&path, "beef02", false).unwrap();
        assert_eq!(loaded.prompt.kind, PromptKind::Projection);
        assert!(values_equal(&prompt.params, &loaded.prompt.params));
        assert!(values_equal(&head, &loaded.head));
        assert!(loaded.head.contains("rho.l1.w"));
        assert!(!loaded.head.names().any(|n| n.starts_with("prompt.")));
    }

    #[test]
    fn test_config_hash_gate_blocks_unless_forced() {
        let d = dims();
        let params = init_backbone(&d, 5, 3, 1);
        let memory = MemoryState::init(4, d.d_mem, 0.0);
        let dir = tempdir().unwrap();
        let path = dir.path().join("b.ckpt");
        save_backbone(&path, &params, &memory, &d, "aaaa", 1).unwrap();
        let err = load_backbone(&path, "bbbb", false).err().unwrap();
        assert!(matches!(err, Error::ConfigHashMismatch { .. }));
        assert!(load_backbone(&path, "bbbb", true).is_ok());
    }

    #[test]
    fn test_corrupt_archives_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTMAGIC rest").unwrap();
        assert!(matches!(
            load_backbone(&path, "x", true),
            Err(Error::BadCheckpoint(_))
        ));

        // Valid header, payload cut short.
        let d = dims();
        let params = init_backbone(&d, 5, 3, 1);
        let memory = MemoryState::init(4, d.d_mem, 0.0);
        let good = dir.path().join("good.ckpt");
        save_backbone(&good, &params, &memory, &d, "h", 1).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 64);
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes).unwrap();
        assert!(matches!(
            load_backbone(&cut, "h", true),
            Err(Error::BadCheckpoint(_))
        ));

        // Wrong kind for the loader.
        let cfg = PromptCfg {
            d: 8,
            d_pos: 4,
            k_recent: 3,
            n_heads: 2,
            d_t: 4,
        };
        let prompt = init_prompt(PromptKind::Vanilla, 4, &cfg, 5, 3, 2).unwrap();
        let pp = dir.path().join("p.ckpt");
        save_prompt(&pp, &prompt, &ParamSet::new(), "h", 2).unwrap();
        assert!(matches!(
            load_backbone(&pp, "h", true),
            Err(Error::BadCheckpoint(_))
        ));
    }
}
