//! Checkpoint serialization: parameters plus the metadata needed to reload
//! them into a compatible run.
//!
//! A checkpoint is a single file: an 8-byte magic, a length-prefixed JSON
//! header (metadata plus a digest of the parameter blob), then the parameter
//! blob itself. A pretty-printed copy of the header is written next to it as
//! `<file>.meta.json` for quick inspection.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::WeightMode;
use crate::model::ModelConfig;
use crate::params::ParamStore;

const MAGIC: &[u8; 8] = b"HASACKP1";

/// Everything needed to interpret a saved parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_config: ModelConfig,
    /// Feature provider the model was trained against.
    pub provider_id: String,
    pub provider_version: String,
    /// How encoder layers were fused, when the provider exposes a stack.
    pub layer_weight_mode: Option<WeightMode>,
    /// Free-form stage label, e.g. "pretrain" or "finetune/ef".
    pub training_stage: String,
    pub seed: u64,
    /// Fingerprint of the training data manifest.
    pub data_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    params_sha256: String,
}

fn blob_digest(blob: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(blob);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Write `store` and `meta` to `path`, plus a readable `.meta.json` sidecar.
pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    meta.model_config.validate()?;
    let blob = store.to_bytes();
    let header = Header {
        meta: meta.clone(),
        params_sha256: blob_digest(&blob),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header_json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&blob);
    fs::write(path, out)?;

    let sidecar = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.meta.json", ext.to_string_lossy()),
        None => "meta.json".to_string(),
    });
    fs::write(sidecar, serde_json::to_vec_pretty(&header)?)?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`], verifying the digest.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, CheckpointMeta)> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Checkpoint(format!(
            "{} is too short to be a checkpoint",
            path.display()
        )));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} does not start with the checkpoint magic",
            path.display()
        )));
    }
    let mut off = MAGIC.len();
    let header_len =
        u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as usize;
    off += 4;
    if bytes.len() < off + header_len {
        return Err(Error::Checkpoint(format!(
            "{} is truncated inside the header",
            path.display()
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[off..off + header_len])
        .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
    off += header_len;

    let blob = &bytes[off..];
    if blob_digest(blob) != header.params_sha256 {
        return Err(Error::Checkpoint(format!(
            "{} parameter blob does not match its recorded digest",
            path.display()
        )));
    }
    let store = ParamStore::from_bytes(blob)?;
    Ok((store, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample() -> (ParamStore, CheckpointMeta) {
        let config = ModelConfig::tiny(5);
        let mut store = ParamStore::new();
        config.register_params(&mut store, 7).unwrap();
        let meta = CheckpointMeta {
            model_config: config,
            provider_id: "mock-tiny".into(),
            provider_version: "v1".into(),
            layer_weight_mode: Some(WeightMode::WeightedSum),
            training_stage: "pretrain".into(),
            seed: 7,
            data_fingerprint: "abc123".into(),
        };
        (store, meta)
    }

    #[test]
    fn round_trip_preserves_parameters_and_metadata() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (store, meta) = sample();
        save_checkpoint(&path, &store, &meta).unwrap();

        let (loaded, loaded_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_meta, meta);
        assert_eq!(loaded.names().count(), store.names().count());
        for name in store.names() {
            assert_eq!(loaded.get(name).unwrap(), store.get(name).unwrap());
            assert_eq!(
                loaded.group_of(name).unwrap(),
                store.group_of(name).unwrap()
            );
        }
        assert!(path.with_extension("ckpt.meta.json").exists());
    }

    #[test]
    fn corrupted_blob_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (store, meta) = sample();
        save_checkpoint(&path, &store, &meta).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (store, meta) = sample();
        save_checkpoint(&path, &store, &meta).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxxxxxx").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }
}
