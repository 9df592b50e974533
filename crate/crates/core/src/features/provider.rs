//! Embedding providers: encoders that map a waveform to a per-layer feature
//! stack. The mock encoder is a small tunable network used for desk-scale
//! training; the external adapter reads precomputed stacks from disk.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{fuse_layers, read_stack, FeatureSequence, LayerStack, LayerWeights, WeightMode};
use crate::params::{GradStore, ParamGroup, ParamStore};
use crate::signal::Waveform;

/// An encoder producing layer stacks with declared geometry.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn version(&self) -> &str;
    /// Number of layers in each emitted stack.
    fn layers(&self) -> usize;
    /// Feature dimension of each layer.
    fn dim(&self) -> usize;
    /// Hop between consecutive frames, in seconds.
    fn hop_seconds(&self) -> f64;
    /// Embed one utterance. The id lets asset-backed providers locate
    /// precomputed tensors; waveform-driven providers ignore it.
    fn embed(&self, utterance_id: &str, x: &Waveform) -> Result<LayerStack>;
}

/// Single-layer feature extraction for Whisper-style encoders, which emit
/// only the final transformer representation.
pub fn whisper_features(
    provider: &dyn EmbeddingProvider,
    utterance_id: &str,
    x: &Waveform,
) -> Result<FeatureSequence> {
    if provider.layers() != 1 {
        return Err(Error::Capability {
            provider: provider.provider_id().to_string(),
            capability: "single-layer (whisper-style) feature output".into(),
        });
    }
    let stack = provider.embed(utterance_id, x)?;
    fuse_layers(&stack, &LayerWeights::uniform(1, WeightMode::LastLayer))
}

/// Inside-the-log offset of the conv frontend, keeping it differentiable at
/// zero input.
const CONV_LOG_EPS: f64 = 1e-6;

/// Geometry and identity of a mock encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockEncoderConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub seed: u64,
    pub provider_id: String,
}

impl MockEncoderConfig {
    /// Default SSL-shaped encoder: 20 ms frames, 4 layers of 32 dims.
    pub fn default_ssl(seed: u64) -> Self {
        MockEncoderConfig {
            frame_len: 320,
            hop: 320,
            dim: 32,
            n_layers: 4,
            seed,
            provider_id: "mock-ssl".into(),
        }
    }

    /// Whisper-shaped variant: one transformer layer exposed.
    pub fn whisper_shaped(seed: u64) -> Self {
        MockEncoderConfig {
            frame_len: 320,
            hop: 320,
            dim: 48,
            n_layers: 1,
            seed,
            provider_id: "mock-whisper".into(),
        }
    }

    /// Tiny geometry for gradient checks.
    pub fn tiny(seed: u64) -> Self {
        MockEncoderConfig {
            frame_len: 8,
            hop: 4,
            dim: 3,
            n_layers: 2,
            seed,
            provider_id: "mock-tiny".into(),
        }
    }
}

/// A small deterministic encoder with a trainable conv frontend and a
/// trainable transformer-like stack:
///
///   z = log((frames * Wc)^2 + eps)          (conv frontend)
///   s_l = tanh(s_{l-1} * W_l + b_l)         (layer l of the stack)
///
/// The emitted stack holds s_1 .. s_L. Parameter names are fixed
/// ("frontend/..."), so the trainer can freeze or re-rate the conv and
/// transformer groups independently of which variant is in use.
pub struct MockEncoder {
    config: MockEncoderConfig,
    default_params: ParamStore,
}

/// Intermediate activations kept for the backward pass.
pub struct EncoderTrace {
    /// T x frame_len input windows.
    frames: Array2<f64>,
    /// T x D pre-log conv outputs (frames * Wc).
    conv_linear: Array2<f64>,
    /// s_0 (the conv log output) followed by s_1 .. s_L.
    activations: Vec<Array2<f64>>,
}

impl MockEncoder {
    pub fn new(config: MockEncoderConfig) -> Self {
        let mut default_params = ParamStore::new();
        register_params_for(&config, &mut default_params)
            .expect("fresh store cannot have name collisions");
        MockEncoder {
            config,
            default_params,
        }
    }

    pub fn config(&self) -> &MockEncoderConfig {
        &self.config
    }

    /// Register this encoder's tensors into an external store (the trainer's)
    /// so they participate in optimization.
    pub fn register_params(&self, store: &mut ParamStore) -> Result<()> {
        register_params_for(&self.config, store)
    }

    /// Slice the waveform into the encoder's analysis windows.
    fn frames_of(&self, x: &Waveform) -> Result<Array2<f64>> {
        let n = x.samples.len();
        if n < self.config.frame_len {
            return Err(Error::InvalidInput(format!(
                "{n} samples is shorter than one {}-sample encoder frame",
                self.config.frame_len
            )));
        }
        let t = (n - self.config.frame_len) / self.config.hop + 1;
        Ok(Array2::from_shape_fn(
            (t, self.config.frame_len),
            |(row, i)| x.samples[row * self.config.hop + i],
        ))
    }

    /// Forward pass reading parameters from `store`, keeping the trace.
    pub fn embed_traced(
        &self,
        store: &ParamStore,
        x: &Waveform,
    ) -> Result<(LayerStack, EncoderTrace)> {
        let frames = self.frames_of(x)?;
        let conv_w = store.get2("frontend/conv_w")?;
        let conv_linear = frames.dot(&conv_w);
        let z = conv_linear.mapv(|u| (u * u + CONV_LOG_EPS).ln());

        let mut activations = vec![z];
        for l in 0..self.config.n_layers {
            let w = store.get2(&format!("frontend/layer{l}/w"))?;
            let b = store.get1(&format!("frontend/layer{l}/b"))?;
            let prev = activations.last().expect("seeded with conv output");
            let mut a = prev.dot(&w);
            a += &b.broadcast(a.dim()).expect("bias broadcasts over frames");
            activations.push(a.mapv(f64::tanh));
        }

        let stack = LayerStack {
            layers: activations[1..].to_vec(),
            frame_hop_seconds: self.config.hop as f64 / x.sample_rate as f64,
            provider_id: self.config.provider_id.clone(),
        };
        stack.validate()?;
        Ok((
            stack,
            EncoderTrace {
                frames,
                conv_linear,
                activations,
            },
        ))
    }

    /// Backpropagate stack gradients (one T x D matrix per emitted layer)
    /// into parameter gradients.
    pub fn backward(
        &self,
        store: &ParamStore,
        trace: &EncoderTrace,
        d_layers: &[Array2<f64>],
    ) -> Result<GradStore> {
        if d_layers.len() != self.config.n_layers {
            return Err(Error::DimensionMismatch(format!(
                "{} layer gradients for a {}-layer encoder",
                d_layers.len(),
                self.config.n_layers
            )));
        }
        let mut grads = GradStore::new();
        let mut d_s = Array2::zeros(trace.activations[0].dim());
        for l in (0..self.config.n_layers).rev() {
            // Gradient on s_{l+1}: upstream from the stack consumer plus
            // whatever flowed back from layer l+2.
            let mut d_out = d_layers[l].clone();
            d_out += &d_s;
            let s_out = &trace.activations[l + 1];
            let d_pre = d_out * s_out.mapv(|s| 1.0 - s * s);
            let s_in = &trace.activations[l];
            grads.accumulate(
                &format!("frontend/layer{l}/w"),
                s_in.t().dot(&d_pre).into_dyn(),
            )?;
            grads.accumulate(
                &format!("frontend/layer{l}/b"),
                d_pre.sum_axis(ndarray::Axis(0)).into_dyn(),
            )?;
            let w = store.get2(&format!("frontend/layer{l}/w"))?;
            d_s = d_pre.dot(&w.t());
        }
        // Conv frontend: z = log(u^2 + eps) gives dz/du = 2u / (u^2 + eps).
        let d_u = d_s
            * trace
                .conv_linear
                .mapv(|u| 2.0 * u / (u * u + CONV_LOG_EPS));
        grads.accumulate("frontend/conv_w", trace.frames.t().dot(&d_u).into_dyn())?;
        Ok(grads)
    }
}

fn register_params_for(config: &MockEncoderConfig, store: &mut ParamStore) -> Result<()> {
    store.insert_uniform(
        "frontend/conv_w",
        ParamGroup::FrontendConv,
        config.frame_len,
        config.dim,
        config.frame_len,
        config.seed,
    )?;
    for l in 0..config.n_layers {
        store.insert_uniform(
            &format!("frontend/layer{l}/w"),
            ParamGroup::FrontendTransformer,
            config.dim,
            config.dim,
            config.dim,
            config.seed,
        )?;
        store.insert_const(
            &format!("frontend/layer{l}/b"),
            ParamGroup::FrontendTransformer,
            config.dim,
            0.0,
        )?;
    }
    Ok(())
}

impl EmbeddingProvider for MockEncoder {
    fn provider_id(&self) -> &str {
        &self.config.provider_id
    }

    fn version(&self) -> &str {
        "v1"
    }

    fn layers(&self) -> usize {
        self.config.n_layers
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn hop_seconds(&self) -> f64 {
        self.config.hop as f64 / 16_000.0
    }

    fn embed(&self, _utterance_id: &str, x: &Waveform) -> Result<LayerStack> {
        let (stack, _) = self.embed_traced(&self.default_params, x)?;
        Ok(stack)
    }
}

/// Declaration file at the root of an external embedding asset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalProviderDecl {
    pub provider_id: String,
    pub version: String,
    pub layers: usize,
    pub dim: usize,
    pub hop_seconds: f64,
}

/// Adapter over precomputed per-utterance stacks (e.g. from a large SSL or
/// Whisper encoder run elsewhere). The directory holds `provider.json` plus
/// one `<utterance_id>.stack` tensor file per utterance.
pub struct ExternalStackProvider {
    root: PathBuf,
    decl: ExternalProviderDecl,
}

impl ExternalStackProvider {
    pub fn open(root: &Path) -> Result<Self> {
        let decl_path = root.join("provider.json");
        if !decl_path.is_file() {
            return Err(Error::Capability {
                provider: root.display().to_string(),
                capability: "external embedding assets (provider.json missing)".into(),
            });
        }
        let decl: ExternalProviderDecl =
            serde_json::from_str(&std::fs::read_to_string(&decl_path)?)?;
        if decl.layers == 0 || decl.dim == 0 || !(decl.hop_seconds > 0.0) {
            return Err(Error::InvalidInput(format!(
                "provider.json declares degenerate geometry: {decl:?}"
            )));
        }
        Ok(ExternalStackProvider {
            root: root.to_path_buf(),
            decl,
        })
    }
}

impl EmbeddingProvider for ExternalStackProvider {
    fn provider_id(&self) -> &str {
        &self.decl.provider_id
    }

    fn version(&self) -> &str {
        &self.decl.version
    }

    fn layers(&self) -> usize {
        self.decl.layers
    }

    fn dim(&self) -> usize {
        self.decl.dim
    }

    fn hop_seconds(&self) -> f64 {
        self.decl.hop_seconds
    }

    fn embed(&self, utterance_id: &str, _x: &Waveform) -> Result<LayerStack> {
        let path = self.root.join(format!("{utterance_id}.stack"));
        if !path.is_file() {
            return Err(Error::Capability {
                provider: self.decl.provider_id.clone(),
                capability: format!("precomputed stack for utterance {utterance_id}"),
            });
        }
        let stack = read_stack(&path)?;
        if stack.n_layers() != self.decl.layers || stack.dim() != self.decl.dim {
            return Err(Error::DimensionMismatch(format!(
                "stack for {utterance_id} is {}x{}, provider declares {}x{}",
                stack.n_layers(),
                stack.dim(),
                self.decl.layers,
                self.decl.dim
            )));
        }
        Ok(stack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::write_stack;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn noise_wave(n: usize, seed: u64) -> Waveform {
        let mut rng = rng_from_seed(seed);
        Waveform::new(
            (0..n).map(|_| rng.random_range(-0.5..0.5)).collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn default_encoder_emits_declared_shape() {
        let enc = MockEncoder::new(MockEncoderConfig::default_ssl(0));
        let stack = enc.embed("u", &noise_wave(16_000, 1)).unwrap();
        assert_eq!(stack.n_layers(), 4);
        assert_eq!(stack.n_frames(), 50);
        assert_eq!(stack.dim(), 32);
        assert!((stack.frame_hop_seconds - 0.02).abs() < 1e-12);
    }

    #[test]
    fn mock_encoder_is_bit_stable() {
        let enc = MockEncoder::new(MockEncoderConfig::default_ssl(3));
        let x = noise_wave(8_000, 2);
        let a = enc.embed("u", &x).unwrap();
        let b = enc.embed("u", &x).unwrap();
        assert_eq!(a, b);
        let other = MockEncoder::new(MockEncoderConfig::default_ssl(4));
        assert_ne!(other.embed("u", &x).unwrap(), a);
    }

    #[test]
    fn too_short_input_is_rejected() {
        let enc = MockEncoder::new(MockEncoderConfig::default_ssl(0));
        assert!(enc.embed("u", &noise_wave(100, 1)).is_err());
    }

    #[test]
    fn whisper_shaped_provider_yields_single_sequence() {
        let enc = MockEncoder::new(MockEncoderConfig::whisper_shaped(5));
        let x = noise_wave(16_000, 3);
        let f = whisper_features(&enc, "u", &x).unwrap();
        assert_eq!(f.frames.dim(), (50, 48));
        let again = whisper_features(&enc, "u", &x).unwrap();
        assert_eq!(f, again);
        // Single-layer fusion is the identity on the only slice.
        let stack = enc.embed("u", &x).unwrap();
        assert_eq!(f.frames, stack.layers[0]);
    }

    #[test]
    fn whisper_path_rejects_multi_layer_providers() {
        let enc = MockEncoder::new(MockEncoderConfig::default_ssl(0));
        let err = whisper_features(&enc, "u", &noise_wave(16_000, 1)).unwrap_err();
        assert!(matches!(err, Error::Capability { .. }), "{err}");
    }

    #[test]
    fn encoder_backward_matches_finite_differences() {
        let config = MockEncoderConfig::tiny(9);
        let enc = MockEncoder::new(config);
        let mut store = ParamStore::new();
        enc.register_params(&mut store).unwrap();
        let x = noise_wave(64, 11);

        let (stack, trace) = enc.embed_traced(&store, &x).unwrap();
        let mut rng = rng_from_seed(12);
        let d_layers: Vec<Array2<f64>> = stack
            .layers
            .iter()
            .map(|l| Array2::from_shape_fn(l.dim(), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let grads = enc.backward(&store, &trace, &d_layers).unwrap();

        // Objective: sum_l <d_layers[l], s_{l+1}>.
        let objective = |store: &ParamStore| -> f64 {
            let (stack, _) = enc.embed_traced(store, &x).unwrap();
            stack
                .layers
                .iter()
                .zip(&d_layers)
                .map(|(s, g)| (s * g).sum())
                .sum()
        };

        let h = 1e-5;
        let names: Vec<String> = store.names().map(String::from).collect();
        for name in names {
            let analytic_full = grads.get(&name).unwrap().to_owned();
            let value = store.get(&name).unwrap().to_owned();
            // Probe a handful of coordinates per tensor.
            let mut coord_rng = rng_from_seed(13);
            for _ in 0..5 {
                let flat = coord_rng.random_range(0..value.len());
                let mut plus = store.clone();
                let mut v = value.clone();
                v.as_slice_mut().unwrap()[flat] += h;
                plus.set(&name, v).unwrap();
                let mut minus = store.clone();
                let mut v = value.clone();
                v.as_slice_mut().unwrap()[flat] -= h;
                minus.set(&name, v).unwrap();
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let analytic = analytic_full.as_slice().unwrap()[flat];
                let rel =
                    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
                assert!(rel < 1e-4, "{name}[{flat}]: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn external_provider_reads_declared_assets() {
        let dir = tempfile::tempdir().unwrap();
        let decl = ExternalProviderDecl {
            provider_id: "wavlm-large".into(),
            version: "ext-1".into(),
            layers: 24,
            dim: 16,
            hop_seconds: 0.02,
        };
        std::fs::write(
            dir.path().join("provider.json"),
            serde_json::to_string(&decl).unwrap(),
        )
        .unwrap();
        let mut rng = rng_from_seed(20);
        let stack = LayerStack {
            layers: (0..24)
                .map(|_| Array2::from_shape_fn((5, 16), |_| rng.random_range(-1.0..1.0)))
                .collect(),
            frame_hop_seconds: 0.02,
            provider_id: "wavlm-large".into(),
        };
        write_stack(&dir.path().join("utt_7.stack"), &stack).unwrap();

        let provider = ExternalStackProvider::open(dir.path()).unwrap();
        assert_eq!(provider.layers(), 24);
        let x = noise_wave(512, 1);
        let got = provider.embed("utt_7", &x).unwrap();
        assert_eq!(got, stack);

        let err = provider.embed("utt_8", &x).unwrap_err();
        assert!(matches!(err, Error::Capability { .. }), "{err}");
    }

    #[test]
    fn external_provider_requires_declaration() {
        let dir = tempfile::tempdir().unwrap();
        let err = match ExternalStackProvider::open(dir.path()) {
            Err(e) => e,
            Ok(_) => panic!("open succeeded without provider.json"),
        };
        assert!(matches!(err, Error::Capability { .. }), "{err}");
    }
}
