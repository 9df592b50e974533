//! The assessment network: feature projection, hearing-loss encoding,
//! additive fusion, BLSTM trunk, and two attention-pooled regression heads,
//! with a hand-written backward pass.

mod checkpoint;
mod gradcheck;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use gradcheck::{check_tiny_model, gradient_check, input_gradient_check, GradCheckReport};
pub use network::{backward, forward, forward_traced, ForwardTrace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};

/// Network dimensions. The standard sizes follow the published architecture;
/// tiny variants exist for finite-difference testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim_in: usize,
    pub fusion_dim: usize,
    pub blstm_units: usize,
    pub trunk_dense_units: usize,
    pub attention_heads: usize,
    pub pattern_dim_in: usize,
}

impl ModelConfig {
    /// Published sizes: 256-dim fusion, BLSTM with 100 units per direction,
    /// 128-unit ReLU trunk, 4 attention heads, 6 audiometric inputs.
    pub fn standard(feature_dim_in: usize) -> Self {
        ModelConfig {
            feature_dim_in,
            fusion_dim: 256,
            blstm_units: 100,
            trunk_dense_units: 128,
            attention_heads: 4,
            pattern_dim_in: 6,
        }
    }

    /// Small geometry for gradient checks (T <= 8, D <= 16 regimes).
    pub fn tiny(feature_dim_in: usize) -> Self {
        ModelConfig {
            feature_dim_in,
            fusion_dim: 6,
            blstm_units: 4,
            trunk_dense_units: 6,
            attention_heads: 2,
            pattern_dim_in: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.feature_dim_in,
            self.fusion_dim,
            self.blstm_units,
            self.trunk_dense_units,
            self.attention_heads,
            self.pattern_dim_in,
        ];
        if all.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput(format!(
                "model config has a zero dimension: {self:?}"
            )));
        }
        if self.trunk_dense_units % self.attention_heads != 0 {
            return Err(Error::InvalidInput(format!(
                "{} trunk units do not divide into {} attention heads",
                self.trunk_dense_units, self.attention_heads
            )));
        }
        Ok(())
    }

    /// Register every network tensor (group `Model`) with seeded uniform
    /// fan-in initialization; BLSTM forget-gate biases start at 1.0.
    pub fn register_params(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        self.validate()?;
        let g = ParamGroup::Model;
        let (df, fu, bu, tu) = (
            self.feature_dim_in,
            self.fusion_dim,
            self.blstm_units,
            self.trunk_dense_units,
        );
        store.insert_uniform("model/proj_feature/w", g, df, fu, df, seed)?;
        store.insert_const("model/proj_feature/b", g, fu, 0.0)?;
        store.insert_uniform("model/proj_pattern/w", g, self.pattern_dim_in, fu, self.pattern_dim_in, seed)?;
        store.insert_const("model/proj_pattern/b", g, fu, 0.0)?;

        for dir in ["fw", "bw"] {
            store.insert_uniform(&format!("model/blstm/{dir}/w_x"), g, fu, 4 * bu, fu, seed)?;
            store.insert_uniform(&format!("model/blstm/{dir}/w_h"), g, bu, 4 * bu, bu, seed)?;
            // Gate order i, f, g, o; forget-gate block starts at 1.0 so
            // early training retains state.
            let mut bias = ndarray::Array1::zeros(4 * bu);
            bias.slice_mut(ndarray::s![bu..2 * bu]).fill(1.0);
            store.insert(&format!("model/blstm/{dir}/b"), g, bias.into_dyn())?;
        }

        store.insert_uniform("model/trunk/w", g, 2 * bu, tu, 2 * bu, seed)?;
        store.insert_const("model/trunk/b", g, tu, 0.0)?;

        for task in ["quality", "intelligibility"] {
            for mat in ["w_q", "w_k", "w_v", "w_o"] {
                store.insert_uniform(&format!("model/attn/{task}/{mat}"), g, tu, tu, tu, seed)?;
            }
            store.insert_uniform(&format!("model/head/{task}/w"), g, tu, 1, tu, seed)?;
            store.insert_const(&format!("model/head/{task}/b"), g, 1, 0.0)?;
        }
        Ok(())
    }
}

/// Frame- and utterance-level scores for both tasks, every value in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub frame_quality: Vec<f64>,
    pub frame_intelligibility: Vec<f64>,
    pub utterance_quality: f64,
    pub utterance_intelligibility: f64,
}

impl Prediction {
    pub fn n_frames(&self) -> usize {
        self.frame_quality.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_quality.len() != self.frame_intelligibility.len()
            || self.frame_quality.is_empty()
        {
            return Err(Error::InvalidInput(
                "prediction frame vectors are empty or mismatched".into(),
            ));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        for (name, frames, utt) in [
            ("quality", &self.frame_quality, self.utterance_quality),
            (
                "intelligibility",
                &self.frame_intelligibility,
                self.utterance_intelligibility,
            ),
        ] {
            if !frames.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput(format!(
                    "{name} frame scores escape (0, 1)"
                )));
            }
            if (utt - mean(frames)).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "{name} utterance score is not the frame mean"
                )));
            }
        }
        Ok(())
    }
}

/// Loss components for one utterance (or averaged over a batch).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub quality: f64,
    pub intelligibility: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.quality += other.quality;
        self.intelligibility += other.intelligibility;
    }

    pub fn scale(&mut self, factor: f64) {
        self.total *= factor;
        self.quality *= factor;
        self.intelligibility *= factor;
    }
}

/// Per-task objective: squared utterance error plus mean squared frame error,
/// each frame compared against the same utterance target; total is the sum of
/// the two task terms.
pub fn loss(pred: &Prediction, target: &crate::targets::TargetPair) -> LossBreakdown {
    let term = |frames: &[f64], utt: f64, truth: f64| -> f64 {
        let t = frames.len() as f64;
        let frame_term: f64 = frames.iter().map(|f| (truth - f) * (truth - f)).sum::<f64>() / t;
        (truth - utt) * (truth - utt) + frame_term
    };
    let quality = term(&pred.frame_quality, pred.utterance_quality, target.quality);
    let intelligibility = term(
        &pred.frame_intelligibility,
        pred.utterance_intelligibility,
        target.intelligibility,
    );
    LossBreakdown {
        total: quality + intelligibility,
        quality,
        intelligibility,
    }
}
