//! Content-addressed cache of per-utterance layer stacks. Entries are keyed
//! by (utterance id, provider id, provider version), so upgrading a provider
//! naturally invalidates its old tensors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::features::{read_stack, write_stack, EmbeddingProvider, LayerStack};
use crate::signal::Waveform;

/// Identity of one cached tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub utterance_id: String,
    pub provider_id: String,
    pub provider_version: String,
}

/// Directory-backed cache; every entry is an independent pair of files, so
/// concurrent writers of different utterances never contend.
pub struct FeatureCache {
    root: PathBuf,
}

impl FeatureCache {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(FeatureCache {
            root: root.to_path_buf(),
        })
    }

    /// Content key: digest over the full identity triple.
    pub fn key(utterance_id: &str, provider_id: &str, provider_version: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(utterance_id.as_bytes());
        hasher.update([0]);
        hasher.update(provider_id.as_bytes());
        hasher.update([0]);
        hasher.update(provider_version.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        (
            self.root.join(format!("{key}.stack")),
            self.root.join(format!("{key}.json")),
        )
    }

    pub fn load(&self, entry: &CacheEntry) -> Result<Option<LayerStack>> {
        let key = Self::key(
            &entry.utterance_id,
            &entry.provider_id,
            &entry.provider_version,
        );
        let (tensor_path, _) = self.paths(&key);
        if !tensor_path.is_file() {
            return Ok(None);
        }
        Ok(Some(read_stack(&tensor_path)?))
    }

    pub fn store(&self, entry: &CacheEntry, stack: &LayerStack) -> Result<()> {
        let key = Self::key(
            &entry.utterance_id,
            &entry.provider_id,
            &entry.provider_version,
        );
        let (tensor_path, meta_path) = self.paths(&key);
        write_stack(&tensor_path, stack)?;
        fs::write(meta_path, serde_json::to_string_pretty(entry)?)?;
        Ok(())
    }

    /// Embed through the cache: reuse a hit, otherwise compute and persist.
    pub fn get_or_compute(
        &self,
        provider: &dyn EmbeddingProvider,
        utterance_id: &str,
        x: &Waveform,
    ) -> Result<LayerStack> {
        let entry = CacheEntry {
            utterance_id: utterance_id.to_string(),
            provider_id: provider.provider_id().to_string(),
            provider_version: provider.version().to_string(),
        };
        if let Some(stack) = self.load(&entry)? {
            return Ok(stack);
        }
        let stack = provider.embed(utterance_id, x)?;
        self.store(&entry, &stack)?;
        Ok(stack)
    }

    /// All entries currently in the cache, sorted by utterance id.
    pub fn index(&self) -> Result<Vec<CacheEntry>> {
        let mut out = Vec::new();
        for item in fs::read_dir(&self.root)? {
            let path = item?.path();
            if path.extension().is_some_and(|e| e == "json") {
                out.push(serde_json::from_str(&fs::read_to_string(&path)?)?);
            }
        }
        out.sort_by(|a: &CacheEntry, b: &CacheEntry| {
            (&a.utterance_id, &a.provider_id).cmp(&(&b.utterance_id, &b.provider_id))
        });
        Ok(out)
    }
}
