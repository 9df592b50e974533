//! Acoustic feature extraction: spectrogram baseline, pluggable embedding
//! providers with per-layer stacks, and learned layer fusion.

mod cache;
mod provider;
mod spectrogram;
mod tensor_io;

pub use cache::FeatureCache;
pub use provider::{
    whisper_features, EmbeddingProvider, EncoderTrace, ExternalStackProvider, MockEncoder,
    MockEncoderConfig,
};
pub use spectrogram::{spectrogram, SPECTROGRAM_PROVIDER_ID};
pub use tensor_io::{read_stack, write_stack};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A time-major feature matrix with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    /// T x D, one row per frame.
    pub frames: Array2<f64>,
    pub frame_hop_seconds: f64,
    pub provider_id: String,
}

impl FeatureSequence {
    pub fn validate(&self) -> Result<()> {
        if self.frames.nrows() == 0 {
            return Err(Error::InvalidInput("feature sequence has no frames".into()));
        }
        if !self.frames.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteActivation {
                layer: "feature_sequence",
            });
        }
        if !(self.frame_hop_seconds > 0.0) {
            return Err(Error::InvalidInput("frame hop must be positive".into()));
        }
        Ok(())
    }
}

/// Per-encoder-layer feature matrices sharing one time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    /// L matrices, each T x D.
    pub layers: Vec<Array2<f64>>,
    pub frame_hop_seconds: f64,
    pub provider_id: String,
}

impl LayerStack {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("layer stack is empty".into()));
        }
        let (t, d) = self.layers[0].dim();
        if t == 0 || d == 0 {
            return Err(Error::InvalidInput("layer stack has an empty slice".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.dim() != (t, d) {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l} has shape {:?}, expected {:?}",
                    layer.dim(),
                    (t, d)
                )));
            }
            if !layer.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteActivation {
                    layer: "layer_stack",
                });
            }
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_frames(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].ncols()
    }
}

/// How a stack collapses to one feature sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Take the final layer unchanged.
    LastLayer,
    /// Softmax-weighted sum over layers with learnable logits.
    WeightedSum,
}

/// Learnable fusion weights over encoder layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub logits: Array1<f64>,
    pub mode: WeightMode,
}

impl LayerWeights {
    pub fn uniform(n_layers: usize, mode: WeightMode) -> Self {
        LayerWeights {
            logits: Array1::zeros(n_layers),
            mode,
        }
    }

    /// Normalized per-layer weights. In last-layer mode this is the one-hot
    /// vector selecting the final layer.
    pub fn weights(&self) -> Array1<f64> {
        match self.mode {
            WeightMode::LastLayer => {
                let mut w = Array1::zeros(self.logits.len());
                w[self.logits.len() - 1] = 1.0;
                w
            }
            WeightMode::WeightedSum => softmax(&self.logits),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Array1<f64> = logits.mapv(|z| (z - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Collapse a layer stack to one feature sequence.
///
/// Weighted-sum mode computes frames[t] = sum_l softmax(logits)_l * stack[l][t];
/// last-layer mode returns the final slice exactly.
pub fn fuse_layers(stack: &LayerStack, w: &LayerWeights) -> Result<FeatureSequence> {
    stack.validate()?;
    if w.logits.len() != stack.n_layers() {
        return Err(Error::DimensionMismatch(format!(
            "{} logits over a {}-layer stack",
            w.logits.len(),
            stack.n_layers()
        )));
    }
    let frames = match w.mode {
        WeightMode::LastLayer => stack.layers[stack.n_layers() - 1].clone(),
        WeightMode::WeightedSum => {
            let weights = w.weights();
            let mut acc = Array2::zeros(stack.layers[0].dim());
            for (layer, &weight) in stack.layers.iter().zip(weights.iter()) {
                acc.scaled_add(weight, layer);
            }
            acc
        }
    };
    Ok(FeatureSequence {
        frames,
        frame_hop_seconds: stack.frame_hop_seconds,
        provider_id: stack.provider_id.clone(),
    })
}

/// Backward pass of [`fuse_layers`]: given d loss / d frames, produce the
/// gradient on the logits and on each stack layer.
///
/// With s = softmax(z) and out = sum_l s_l A_l, the logit gradient is
/// dz_j = s_j (<G, A_j> - sum_l s_l <G, A_l>). Last-layer mode has no logit
/// gradient and routes everything to the final slice.
pub fn fuse_layers_backward(
    stack: &LayerStack,
    w: &LayerWeights,
    d_frames: &Array2<f64>,
) -> Result<(Array1<f64>, Vec<Array2<f64>>)> {
    if d_frames.dim() != stack.layers[0].dim() {
        return Err(Error::DimensionMismatch(format!(
            "upstream gradient {:?} vs stack slice {:?}",
            d_frames.dim(),
            stack.layers[0].dim()
        )));
    }
    let l = stack.n_layers();
    match w.mode {
        WeightMode::LastLayer => {
            let mut d_stack: Vec<Array2<f64>> = stack
                .layers
                .iter()
                .map(|layer| Array2::zeros(layer.dim()))
                .collect();
            d_stack[l - 1] = d_frames.clone();
            Ok((Array1::zeros(l), d_stack))
        }
        WeightMode::WeightedSum => {
            let s = w.weights();
            let inner: Vec<f64> = stack
                .layers
                .iter()
                .map(|layer| (layer * d_frames).sum())
                .collect();
            let mean: f64 = s.iter().zip(&inner).map(|(si, gi)| si * gi).sum();
            let d_logits = Array1::from_iter(
                s.iter().zip(&inner).map(|(si, gi)| si * (gi - mean)),
            );
            let d_stack = s.iter().map(|&si| d_frames * si).collect();
            Ok((d_logits, d_stack))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::arr1;
    use rand::Rng;

    fn stack_of(layers: Vec<Array2<f64>>) -> LayerStack {
        LayerStack {
            layers,
            frame_hop_seconds: 0.02,
            provider_id: "test".into(),
        }
    }

    fn random_stack(l: usize, t: usize, d: usize, seed: u64) -> LayerStack {
        let mut rng = rng_from_seed(seed);
        stack_of(
            (0..l)
                .map(|_| Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0..1.0)))
                .collect(),
        )
    }

    #[test]
    fn softmax_sums_to_one_over_many_trials() {
        let mut rng = rng_from_seed(1);
        for _ in 0..1_000 {
            let logits = Array1::from_shape_fn(rng.random_range(1..8), |_| {
                rng.random_range(-30.0..30.0)
            });
            let s = softmax(&logits);
            assert!((s.sum() - 1.0).abs() < 1e-6);
            assert!(s.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn uniform_logits_average_two_layers() {
        let a = Array2::from_elem((3, 2), 2.0);
        let b = Array2::from_elem((3, 2), 4.0);
        let stack = stack_of(vec![a, b]);
        let w = LayerWeights::uniform(2, WeightMode::WeightedSum);
        let fused = fuse_layers(&stack, &w).unwrap();
        assert!(fused.frames.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn hand_softmax_weights_three_to_one() {
        let a = Array2::from_elem((2, 2), 1.0);
        let b = Array2::from_elem((2, 2), -1.0);
        let stack = stack_of(vec![a, b]);
        let w = LayerWeights {
            logits: arr1(&[3f64.ln(), 0.0]),
            mode: WeightMode::WeightedSum,
        };
        let fused = fuse_layers(&stack, &w).unwrap();
        // 0.75 * 1 + 0.25 * (-1) = 0.5
        assert!(fused.frames.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn last_layer_mode_returns_final_slice_exactly() {
        let stack = random_stack(3, 4, 5, 2);
        let w = LayerWeights {
            logits: arr1(&[9.0, 9.0, -9.0]),
            mode: WeightMode::LastLayer,
        };
        let fused = fuse_layers(&stack, &w).unwrap();
        assert_eq!(fused.frames, stack.layers[2]);
        let one_hot = w.weights();
        assert_eq!(one_hot, arr1(&[0.0, 0.0, 1.0]));
    }

    #[test]
    fn fusion_is_linear_in_the_stack() {
        let a = random_stack(3, 4, 5, 3);
        let b = random_stack(3, 4, 5, 4);
        let w = LayerWeights {
            logits: arr1(&[0.3, -0.2, 1.0]),
            mode: WeightMode::WeightedSum,
        };
        let (alpha, beta) = (0.7, -1.3);
        let combined = stack_of(
            a.layers
                .iter()
                .zip(&b.layers)
                .map(|(x, y)| x * alpha + y * beta)
                .collect(),
        );
        let lhs = fuse_layers(&combined, &w).unwrap().frames;
        let rhs = fuse_layers(&a, &w).unwrap().frames * alpha
            + fuse_layers(&b, &w).unwrap().frames * beta;
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let stack = random_stack(4, 3, 6, 5);
        let mut rng = rng_from_seed(6);
        let logits = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
        let d_frames = Array2::from_shape_fn((3, 6), |_| rng.random_range(-1.0..1.0));
        let w = LayerWeights {
            logits: logits.clone(),
            mode: WeightMode::WeightedSum,
        };
        let (d_logits, d_stack) = fuse_layers_backward(&stack, &w, &d_frames).unwrap();

        let objective = |z: &Array1<f64>| -> f64 {
            let w = LayerWeights {
                logits: z.clone(),
                mode: WeightMode::WeightedSum,
            };
            (fuse_layers(&stack, &w).unwrap().frames * &d_frames).sum()
        };
        let h = 1e-6;
        for j in 0..4 {
            let mut plus = logits.clone();
            plus[j] += h;
            let mut minus = logits.clone();
            minus[j] -= h;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let analytic = d_logits[j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
            assert!(rel < 1e-4, "logit {j}: {analytic} vs {numeric}");
        }

        // Stack gradient: d out / d layer_l = s_l * G.
        let s = w.weights();
        for (l, d_layer) in d_stack.iter().enumerate() {
            let expect = &d_frames * s[l];
            for (x, y) in d_layer.iter().zip(expect.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_logit_count_is_rejected() {
        let stack = random_stack(3, 4, 5, 7);
        let w = LayerWeights::uniform(2, WeightMode::WeightedSum);
        assert!(fuse_layers(&stack, &w).is_err());
    }
}
