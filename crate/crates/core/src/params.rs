//! Named parameter tensors with group tags, shared by the assessment model
//! and the tunable feature frontends. The trainer drives every update through
//! this store, so freezing, per-group learning rates, and checkpointing all
//! operate on one structure.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, ArrayViewD, IxDyn};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::rng_for_key;

/// Optimization group a tensor belongs to. Fine-tuning modes freeze or
/// re-rate whole groups at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamGroup {
    /// Projection, BLSTM, trunk, attention, and head weights.
    Model,
    /// Learnable layer-fusion logits.
    FusionWeights,
    /// Convolutional frontend of a tunable encoder.
    FrontendConv,
    /// Transformer stack of a tunable encoder.
    FrontendTransformer,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Model,
        ParamGroup::FusionWeights,
        ParamGroup::FrontendConv,
        ParamGroup::FrontendTransformer,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ParamGroup::Model => "model",
            ParamGroup::FusionWeights => "fusion_weights",
            ParamGroup::FrontendConv => "frontend_conv",
            ParamGroup::FrontendTransformer => "frontend_transformer",
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ParamGroup::Model),
            1 => Ok(ParamGroup::FusionWeights),
            2 => Ok(ParamGroup::FrontendConv),
            3 => Ok(ParamGroup::FrontendTransformer),
            other => Err(Error::Checkpoint(format!("unknown group tag {other}"))),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            ParamGroup::Model => 0,
            ParamGroup::FusionWeights => 1,
            ParamGroup::FrontendConv => 2,
            ParamGroup::FrontendTransformer => 3,
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
struct Param {
    value: ArrayD<f64>,
    group: ParamGroup,
}

/// All trainable tensors, keyed by stable names.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"HASAPST1";

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Register a tensor; names must be unique.
    pub fn insert(&mut self, name: &str, group: ParamGroup, value: ArrayD<f64>) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::InvalidInput(format!(
                "parameter {name} registered twice"
            )));
        }
        self.entries.insert(name.into(), Param { value, group });
        Ok(())
    }

    /// Register a fan-in-scaled uniform random matrix: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn insert_uniform(
        &mut self,
        name: &str,
        group: ParamGroup,
        rows: usize,
        cols: usize,
        fan_in: usize,
        seed: u64,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = rng_for_key(seed, &format!("init/{name}"));
        let value =
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound)).into_dyn();
        self.insert(name, group, value)
    }

    /// Register an all-constant vector (biases).
    pub fn insert_const(
        &mut self,
        name: &str,
        group: ParamGroup,
        len: usize,
        fill: f64,
    ) -> Result<()> {
        self.insert(name, group, Array1::from_elem(len, fill).into_dyn())
    }

    fn entry(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<ArrayViewD<'_, f64>> {
        Ok(self.entry(name)?.value.view())
    }

    pub fn get2(&self, name: &str) -> Result<ArrayView2<'_, f64>> {
        self.entry(name)?
            .value
            .view()
            .into_dimensionality()
            .map_err(|_| Error::DimensionMismatch(format!("parameter {name} is not a matrix")))
    }

    pub fn get1(&self, name: &str) -> Result<ArrayView1<'_, f64>> {
        self.entry(name)?
            .value
            .view()
            .into_dimensionality()
            .map_err(|_| Error::DimensionMismatch(format!("parameter {name} is not a vector")))
    }

    pub fn group_of(&self, name: &str) -> Result<ParamGroup> {
        Ok(self.entry(name)?.group)
    }

    /// Overwrite a tensor's values, keeping its shape.
    pub fn set(&mut self, name: &str, value: ArrayD<f64>) -> Result<()> {
        let current = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name}")))?;
        if current.value.shape() != value.shape() {
            return Err(Error::DimensionMismatch(format!(
                "parameter {name}: cannot replace shape {:?} with {:?}",
                current.value.shape(),
                value.shape()
            )));
        }
        current.value = value;
        Ok(())
    }

    /// In-place update of one tensor through a closure (optimizer steps).
    pub fn update(&mut self, name: &str, f: impl FnOnce(&mut ArrayD<f64>)) -> Result<()> {
        let current = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name}")))?;
        f(&mut current.value);
        Ok(())
    }

    /// Parameter names in deterministic (sorted) order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn names_in_group(&self, group: ParamGroup) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, p)| p.group == group)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn n_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Digest of one group's tensors (sorted by name, exact f64 bytes).
    /// Freeze contracts compare these before and after fine-tuning.
    pub fn group_digest(&self, group: ParamGroup) -> String {
        let mut hasher = Sha256::new();
        for (name, param) in &self.entries {
            if param.group != group {
                continue;
            }
            hasher.update(name.as_bytes());
            for &d in param.value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for v in param.value.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Serialize every tensor to a self-describing binary blob.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, param) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(param.group.tag());
            out.extend_from_slice(&(param.value.ndim() as u32).to_le_bytes());
            for &d in param.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in param.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parse a blob produced by [`ParamStore::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            let start = *cursor;
            let end = start
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| Error::Checkpoint("truncated parameter blob".into()))?;
            *cursor = end;
            Ok(&bytes[start..end])
        };
        if take(&mut cursor, 8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad parameter blob magic".into()));
        }
        let read_u32 = |cursor: &mut usize| -> Result<u32> {
            let b = take(cursor, 4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };
        let n_entries = read_u32(&mut cursor)?;
        let mut store = ParamStore::new();
        for _ in 0..n_entries {
            let name_len = read_u32(&mut cursor)? as usize;
            let name = std::str::from_utf8(take(&mut cursor, name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?
                .to_string();
            let group = ParamGroup::from_tag(take(&mut cursor, 1)?[0])?;
            let ndim = read_u32(&mut cursor)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(&mut cursor)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let b = take(&mut cursor, 8)?;
                data.push(f64::from_le_bytes([
                    b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
                ]));
            }
            let value = ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
            store.insert(&name, group, value)?;
        }
        if cursor != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes in parameter blob".into()));
        }
        Ok(store)
    }
}

/// Gradient accumulator mirroring a [`ParamStore`]'s names.
#[derive(Debug, Clone, Default)]
pub struct GradStore {
    entries: BTreeMap<String, ArrayD<f64>>,
}

impl GradStore {
    pub fn new() -> Self {
        GradStore::default()
    }

    /// Add a gradient contribution; shapes must agree with prior ones.
    pub fn accumulate(&mut self, name: &str, grad: ArrayD<f64>) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(current) => {
                if current.shape() != grad.shape() {
                    return Err(Error::DimensionMismatch(format!(
                        "gradient {name}: shape {:?} then {:?}",
                        current.shape(),
                        grad.shape()
                    )));
                }
                *current += &grad;
                Ok(())
            }
            None => {
                self.entries.insert(name.into(), grad);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<ArrayViewD<'_, f64>> {
        self.entries.get(name).map(|g| g.view())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Scale every gradient (for batch averaging).
    pub fn scale(&mut self, factor: f64) {
        for grad in self.entries.values_mut() {
            *grad *= factor;
        }
    }

    /// Merge another accumulator into this one.
    pub fn merge(&mut self, other: GradStore) -> Result<()> {
        for (name, grad) in other.entries {
            self.accumulate(&name, grad)?;
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
