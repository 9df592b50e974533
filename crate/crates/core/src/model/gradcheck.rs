//! Finite-difference verification of the analytic gradients.
//!
//! The backward pass in [`super::network`] is written by hand, so this module
//! provides the safety net: central differences around randomly sampled
//! parameter coordinates, compared against the analytic gradient of the same
//! total loss.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;

use crate::audiogram::HearingLossPattern;
use crate::error::Result;
use crate::features::FeatureSequence;
use crate::model::{backward, forward, forward_traced, loss, ModelConfig};
use crate::params::ParamStore;
use crate::rng::rng_for_key;
use crate::targets::TargetPair;

const STEP: f64 = 1e-5;
const REL_TOLERANCE: f64 = 1e-4;

/// Outcome of one gradient check run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Number of scalar coordinates compared.
    pub n_checked: usize,
    /// Largest relative error seen.
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error, as `name[flat_index]`.
    pub worst_coordinate: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOLERANCE
    }
}

fn total_loss(
    config: &ModelConfig,
    store: &ParamStore,
    features: &FeatureSequence,
    pattern: &HearingLossPattern,
    target: &TargetPair,
) -> Result<f64> {
    let pred = forward(config, store, features, pattern)?;
    Ok(loss(&pred, target).total)
}

/// Row-major multi-index for a flat offset, independent of memory layout.
fn unravel(shape: &[usize], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0usize; shape.len()];
    for ax in (0..shape.len()).rev() {
        idx[ax] = flat % shape[ax];
        flat /= shape[ax];
    }
    idx
}

/// Compare analytic against numeric gradients on a random subsample of
/// coordinates from every parameter tensor.
///
/// `per_tensor` coordinates are drawn from each tensor (fewer when the tensor
/// is smaller). The check is deterministic in `seed`.
pub fn gradient_check(
    config: &ModelConfig,
    store: &mut ParamStore,
    features: &FeatureSequence,
    pattern: &HearingLossPattern,
    target: &TargetPair,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (pred, trace) = forward_traced(config, store, features, pattern)?;
    let (_, grads, _) = backward(store, &trace, &pred, target)?;

    let names: Vec<String> = store.names().map(String::from).collect();
    let mut rng = rng_for_key(seed, "gradcheck");
    let mut report = GradCheckReport {
        n_checked: 0,
        max_rel_error: 0.0,
        worst_coordinate: String::new(),
    };
    for name in names {
        let shape = store.get(&name)?.shape().to_vec();
        let len: usize = shape.iter().product();
        let analytic = grads
            .get(&name)
            .map(|g| g.to_owned())
            .unwrap_or_else(|| ndarray::ArrayD::zeros(ndarray::IxDyn(&shape)));
        let picks = sample(&mut rng, len, per_tensor.min(len));
        for flat in picks {
            let idx = unravel(&shape, flat);
            let mut nudge = |delta: f64| -> Result<f64> {
                store.update(&name, |v| v[ndarray::IxDyn(&idx)] += delta)?;
                let l = total_loss(config, store, features, pattern, target);
                store.update(&name, |v| v[ndarray::IxDyn(&idx)] -= delta)?;
                l
            };
            let plus = nudge(STEP)?;
            let minus = nudge(-STEP)?;
            let numeric = (plus - minus) / (2.0 * STEP);
            let ga = analytic[ndarray::IxDyn(&idx)];
            let rel = (ga - numeric).abs() / ga.abs().max(numeric.abs()).max(1e-4);
            report.n_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_coordinate = format!("{name}[{flat}]");
            }
        }
    }
    Ok(report)
}

/// Check the gradient flowing back onto the input features the same way.
pub fn input_gradient_check(
    config: &ModelConfig,
    store: &ParamStore,
    features: &FeatureSequence,
    pattern: &HearingLossPattern,
    target: &TargetPair,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (pred, trace) = forward_traced(config, store, features, pattern)?;
    let (_, _, d_features) = backward(store, &trace, &pred, target)?;

    let mut rng = rng_for_key(seed, "gradcheck/input");
    let (t_len, dim) = features.frames.dim();
    let mut report = GradCheckReport {
        n_checked: 0,
        max_rel_error: 0.0,
        worst_coordinate: String::new(),
    };
    for _ in 0..n_coords {
        let t = rng.random_range(0..t_len);
        let d = rng.random_range(0..dim);
        let eval = |delta: f64| -> Result<f64> {
            let mut perturbed = features.clone();
            perturbed.frames[[t, d]] += delta;
            total_loss(config, store, &perturbed, pattern, target)
        };
        let numeric = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
        let ga = d_features[[t, d]];
        let rel = (ga - numeric).abs() / ga.abs().max(numeric.abs()).max(1e-4);
        report.n_checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_coordinate = format!("features[{t},{d}]");
        }
    }
    Ok(report)
}

/// Convenience wrapper: run the check on a freshly initialised tiny model
/// with random features. Used by tests and the acceptance suite.
pub fn check_tiny_model(seed: u64, per_tensor: usize) -> Result<GradCheckReport> {
    use crate::audiogram::{make_pattern, Audiogram, AudiogramCategory};

    let config = ModelConfig::tiny(5);
    let mut store = ParamStore::new();
    config.register_params(&mut store, seed)?;
    let mut rng = rng_for_key(seed, "gradcheck/data");
    let features = FeatureSequence {
        frames: Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0)),
        frame_hop_seconds: 0.02,
        provider_id: "gradcheck".into(),
    };
    let levels = [
        (rng.random_range(0..=22) * 5) as f64,
        (rng.random_range(0..=22) * 5) as f64,
        (rng.random_range(0..=22) * 5) as f64,
        (rng.random_range(0..=22) * 5) as f64,
        (rng.random_range(0..=22) * 5) as f64,
        (rng.random_range(0..=22) * 5) as f64,
    ];
    let pattern = make_pattern(&Audiogram::from_levels(
        "ag_gradcheck",
        levels,
        AudiogramCategory::Flat,
    ));
    let target = TargetPair {
        quality: rng.random_range(0.0..1.0),
        intelligibility: rng.random_range(0.0..1.0),
    };
    gradient_check(
        &config,
        &mut store,
        &features,
        &pattern,
        &target,
        per_tensor,
        seed,
    )
}
