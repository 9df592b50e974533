//! Forward and backward passes of the assessment network.
//!
//! Pipeline: dense feature projection plus a dense pattern projection fused
//! by elementwise addition, a single BLSTM layer, a ReLU trunk, then one
//! multi-head self-attention block (with residual) and a sigmoid frame head
//! per task; utterance scores are global averages over frames.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::audiogram::HearingLossPattern;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::model::{LossBreakdown, ModelConfig, Prediction};
use crate::params::{GradStore, ParamStore};
use crate::targets::TargetPair;

/// Hearing thresholds are capped at 120 dB HL; the projection consumes them
/// scaled to [0, 1].
const PATTERN_SCALE: f64 = 120.0;

const TASKS: [&str; 2] = ["quality", "intelligibility"];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_finite(name: &'static str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(Error::NonFiniteActivation { layer: name });
        }
    }
    Ok(())
}

/// Cached activations of one LSTM direction, rows in processing order.
struct LstmTrace {
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    h: Array2<f64>,
}

/// Cached activations of one task branch.
struct TaskTrace {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per-head row-softmax attention matrices, each T x T.
    attn: Vec<Array2<f64>>,
    /// Concatenated head outputs, T x trunk_dim.
    context: Array2<f64>,
    /// Post-residual attention output, T x trunk_dim.
    h3: Array2<f64>,
    /// Frame scores, already through the sigmoid.
    frame: Array1<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardTrace {
    config: ModelConfig,
    features: Array2<f64>,
    pattern_scaled: Array1<f64>,
    h0: Array2<f64>,
    fw: LstmTrace,
    bw: LstmTrace,
    h1: Array2<f64>,
    trunk_pre: Array2<f64>,
    h2: Array2<f64>,
    tasks: [TaskTrace; 2],
}

impl ForwardTrace {
    pub fn n_frames(&self) -> usize {
        self.h0.nrows()
    }
}

fn run_lstm(
    inputs: &Array2<f64>,
    w_x: &ArrayView2<f64>,
    w_h: &ArrayView2<f64>,
    b: &ArrayView1<f64>,
    units: usize,
) -> LstmTrace {
    let t_len = inputs.nrows();
    // Input projections for all frames at once; the recurrences stay serial.
    let mut x_proj = inputs.dot(w_x);
    x_proj += &b.broadcast(x_proj.dim()).expect("bias spans gate width");

    let mut tr = LstmTrace {
        i: Array2::zeros((t_len, units)),
        f: Array2::zeros((t_len, units)),
        g: Array2::zeros((t_len, units)),
        o: Array2::zeros((t_len, units)),
        c: Array2::zeros((t_len, units)),
        tanh_c: Array2::zeros((t_len, units)),
        h: Array2::zeros((t_len, units)),
    };
    let mut h_prev: Array1<f64> = Array1::zeros(units);
    let mut c_prev: Array1<f64> = Array1::zeros(units);
    for t in 0..t_len {
        let a = &x_proj.row(t) + &h_prev.dot(w_h);
        for u in 0..units {
            let i = sigmoid(a[u]);
            let f = sigmoid(a[units + u]);
            let g = a[2 * units + u].tanh();
            let o = sigmoid(a[3 * units + u]);
            let c = f * c_prev[u] + i * g;
            let tc = c.tanh();
            tr.i[[t, u]] = i;
            tr.f[[t, u]] = f;
            tr.g[[t, u]] = g;
            tr.o[[t, u]] = o;
            tr.c[[t, u]] = c;
            tr.tanh_c[[t, u]] = tc;
            tr.h[[t, u]] = o * tc;
        }
        h_prev = tr.h.row(t).to_owned();
        c_prev = tr.c.row(t).to_owned();
    }
    tr
}

/// Gradients of one LSTM direction.
struct LstmGrads {
    d_wx: Array2<f64>,
    d_wh: Array2<f64>,
    d_b: Array1<f64>,
    /// Gradient on the direction's inputs, rows in processing order.
    d_inputs: Array2<f64>,
}

fn lstm_backward(
    inputs: &Array2<f64>,
    tr: &LstmTrace,
    w_x: &ArrayView2<f64>,
    w_h: &ArrayView2<f64>,
    d_h: &Array2<f64>,
    units: usize,
) -> LstmGrads {
    let t_len = inputs.nrows();
    let mut d_a_all = Array2::zeros((t_len, 4 * units));
    let mut d_h_carry: Array1<f64> = Array1::zeros(units);
    let mut d_c_carry: Array1<f64> = Array1::zeros(units);
    for t in (0..t_len).rev() {
        let d_h_t = &d_h.row(t) + &d_h_carry;
        for u in 0..units {
            let (i, f, g, o) = (tr.i[[t, u]], tr.f[[t, u]], tr.g[[t, u]], tr.o[[t, u]]);
            let tc = tr.tanh_c[[t, u]];
            let d_o = d_h_t[u] * tc;
            let d_c = d_c_carry[u] + d_h_t[u] * o * (1.0 - tc * tc);
            let c_prev = if t > 0 { tr.c[[t - 1, u]] } else { 0.0 };
            let d_f = d_c * c_prev;
            let d_i = d_c * g;
            let d_g = d_c * i;
            d_c_carry[u] = d_c * f;
            d_a_all[[t, u]] = d_i * i * (1.0 - i);
            d_a_all[[t, units + u]] = d_f * f * (1.0 - f);
            d_a_all[[t, 2 * units + u]] = d_g * (1.0 - g * g);
            d_a_all[[t, 3 * units + u]] = d_o * o * (1.0 - o);
        }
        d_h_carry = d_a_all.row(t).dot(&w_h.t());
    }

    // h_prev matrix: row t holds h_{t-1}, row 0 is the zero initial state.
    let mut h_prev_all = Array2::zeros((t_len, units));
    for t in 1..t_len {
        h_prev_all.row_mut(t).assign(&tr.h.row(t - 1));
    }
    LstmGrads {
        d_wx: inputs.t().dot(&d_a_all),
        d_wh: h_prev_all.t().dot(&d_a_all),
        d_b: d_a_all.sum_axis(Axis(0)),
        d_inputs: d_a_all.dot(&w_x.t()),
    }
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn reversed_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    out.invert_axis(Axis(0));
    out
}

fn attention_forward(
    h2: &Array2<f64>,
    store: &ParamStore,
    task: &str,
    heads: usize,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>, Vec<Array2<f64>>, Array2<f64>, Array2<f64>)> {
    let w_q = store.get2(&format!("model/attn/{task}/w_q"))?;
    let w_k = store.get2(&format!("model/attn/{task}/w_k"))?;
    let w_v = store.get2(&format!("model/attn/{task}/w_v"))?;
    let w_o = store.get2(&format!("model/attn/{task}/w_o"))?;
    let (t_len, d) = h2.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = h2.dot(&w_q);
    let k = h2.dot(&w_k);
    let v = h2.dot(&w_v);
    let mut attn = Vec::with_capacity(heads);
    let mut context = Array2::zeros((t_len, d));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let z = qh.dot(&kh.t()) * scale;
        let s_mat = softmax_rows(&z);
        context.slice_mut(cols).assign(&s_mat.dot(&vh));
        attn.push(s_mat);
    }
    let h3 = h2 + &context.dot(&w_o);
    Ok((q, k, v, attn, context, h3))
}

struct AttentionGrads {
    d_wq: Array2<f64>,
    d_wk: Array2<f64>,
    d_wv: Array2<f64>,
    d_wo: Array2<f64>,
    d_h2: Array2<f64>,
}

fn attention_backward(
    h2: &Array2<f64>,
    tr: &TaskTrace,
    store: &ParamStore,
    task: &str,
    heads: usize,
    d_h3: &Array2<f64>,
) -> Result<AttentionGrads> {
    let w_q = store.get2(&format!("model/attn/{task}/w_q"))?;
    let w_k = store.get2(&format!("model/attn/{task}/w_k"))?;
    let w_v = store.get2(&format!("model/attn/{task}/w_v"))?;
    let w_o = store.get2(&format!("model/attn/{task}/w_o"))?;
    let d = h2.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Residual: h3 = h2 + context * w_o.
    let mut d_h2 = d_h3.clone();
    let d_wo = tr.context.t().dot(d_h3);
    let d_context = d_h3.dot(&w_o.t());

    let mut d_q = Array2::zeros(tr.q.dim());
    let mut d_k = Array2::zeros(tr.k.dim());
    let mut d_v = Array2::zeros(tr.v.dim());
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = tr.q.slice(cols);
        let kh = tr.k.slice(cols);
        let vh = tr.v.slice(cols);
        let s_mat = &tr.attn[h];
        let d_ch = d_context.slice(cols);

        let d_s = d_ch.dot(&vh.t());
        d_v.slice_mut(cols).assign(&s_mat.t().dot(&d_ch));

        // Row-softmax backward: dz = s .* (ds - rowsum(ds .* s)).
        let weighted = (&d_s * s_mat).sum_axis(Axis(1));
        let mut d_z = &d_s - &weighted.insert_axis(Axis(1));
        d_z *= s_mat;
        d_z *= scale;

        d_q.slice_mut(cols).assign(&d_z.dot(&kh));
        d_k.slice_mut(cols).assign(&d_z.t().dot(&qh));
    }

    d_h2 += &d_q.dot(&w_q.t());
    d_h2 += &d_k.dot(&w_k.t());
    d_h2 += &d_v.dot(&w_v.t());
    Ok(AttentionGrads {
        d_wq: h2.t().dot(&d_q),
        d_wk: h2.t().dot(&d_k),
        d_wv: h2.t().dot(&d_v),
        d_wo,
        d_h2,
    })
}

/// Forward pass keeping the activation trace for a later backward call.
pub fn forward_traced(
    config: &ModelConfig,
    store: &ParamStore,
    features: &FeatureSequence,
    pattern: &HearingLossPattern,
) -> Result<(Prediction, ForwardTrace)> {
    config.validate()?;
    features.validate()?;
    if features.frames.ncols() != config.feature_dim_in {
        return Err(Error::DimensionMismatch(format!(
            "{}-dim features into a model expecting {}",
            features.frames.ncols(),
            config.feature_dim_in
        )));
    }
    if config.pattern_dim_in != pattern.values.len() {
        return Err(Error::DimensionMismatch(format!(
            "pattern has {} thresholds, model expects {}",
            pattern.values.len(),
            config.pattern_dim_in
        )));
    }

    // Fusion: projected features plus the projected pattern, broadcast over
    // frames and combined by addition.
    let pattern_scaled = Array1::from_iter(pattern.values.iter().map(|v| v / PATTERN_SCALE));
    let w_f = store.get2("model/proj_feature/w")?;
    let b_f = store.get1("model/proj_feature/b")?;
    let w_p = store.get2("model/proj_pattern/w")?;
    let b_p = store.get1("model/proj_pattern/b")?;
    let mut h0 = features.frames.dot(&w_f);
    h0 += &b_f.broadcast(h0.dim()).expect("bias spans fusion width");
    let pattern_proj = &pattern_scaled.dot(&w_p) + &b_p;
    h0 += &pattern_proj
        .broadcast(h0.dim())
        .expect("pattern projection spans fusion width");
    check_finite("fusion", h0.iter().copied())?;

    // BLSTM trunk.
    let u = config.blstm_units;
    let fw = run_lstm(
        &h0,
        &store.get2("model/blstm/fw/w_x")?,
        &store.get2("model/blstm/fw/w_h")?,
        &store.get1("model/blstm/fw/b")?,
        u,
    );
    let h0_rev = reversed_rows(&h0);
    let bw = run_lstm(
        &h0_rev,
        &store.get2("model/blstm/bw/w_x")?,
        &store.get2("model/blstm/bw/w_h")?,
        &store.get1("model/blstm/bw/b")?,
        u,
    );
    let t_len = h0.nrows();
    let mut h1 = Array2::zeros((t_len, 2 * u));
    h1.slice_mut(s![.., 0..u]).assign(&fw.h);
    h1.slice_mut(s![.., u..2 * u]).assign(&reversed_rows(&bw.h));
    check_finite("blstm", h1.iter().copied())?;

    let w_t = store.get2("model/trunk/w")?;
    let b_t = store.get1("model/trunk/b")?;
    let mut trunk_pre = h1.dot(&w_t);
    trunk_pre += &b_t.broadcast(trunk_pre.dim()).expect("bias spans trunk");
    let h2 = trunk_pre.mapv(|v| v.max(0.0));
    check_finite("trunk", h2.iter().copied())?;

    let mut task_traces = Vec::with_capacity(2);
    let mut frame_scores: Vec<Array1<f64>> = Vec::with_capacity(2);
    for task in TASKS {
        let (q, k, v, attn, context, h3) =
            attention_forward(&h2, store, task, config.attention_heads)?;
        check_finite("attention", h3.iter().copied())?;
        let w_head = store.get2(&format!("model/head/{task}/w"))?;
        let b_head = store.get1(&format!("model/head/{task}/b"))?;
        let pre = h3.dot(&w_head).column(0).to_owned() + b_head[0];
        let frame = pre.mapv(sigmoid);
        check_finite("head", frame.iter().copied())?;
        task_traces.push(TaskTrace {
            q,
            k,
            v,
            attn,
            context,
            h3,
            frame: frame.clone(),
        });
        frame_scores.push(frame);
    }

    let mean = |v: &Array1<f64>| v.sum() / v.len() as f64;
    let prediction = Prediction {
        utterance_quality: mean(&frame_scores[0]),
        utterance_intelligibility: mean(&frame_scores[1]),
        frame_quality: frame_scores[0].to_vec(),
        frame_intelligibility: frame_scores[1].to_vec(),
    };
    let trace = ForwardTrace {
        config: *config,
        features: features.frames.clone(),
        pattern_scaled,
        h0,
        fw,
        bw,
        h1,
        trunk_pre,
        h2,
        tasks: match (task_traces.pop(), task_traces.pop()) {
            (Some(intel), Some(quality)) => [quality, intel],
            _ => unreachable!("two task branches were just built"),
        },
    };
    Ok((prediction, trace))
}

/// Inference-only forward pass.
pub fn forward(
    config: &ModelConfig,
    store: &ParamStore,
    features: &FeatureSequence,
    pattern: &HearingLossPattern,
) -> Result<Prediction> {
    forward_traced(config, store, features, pattern).map(|(p, _)| p)
}

/// Backward pass for one utterance.
///
/// Returns the loss breakdown, parameter gradients, and the gradient on the
/// input feature matrix (for propagating into layer fusion and tunable
/// frontends).
pub fn backward(
    store: &ParamStore,
    trace: &ForwardTrace,
    prediction: &Prediction,
    target: &TargetPair,
) -> Result<(LossBreakdown, GradStore, Array2<f64>)> {
    target.validate()?;
    let breakdown = crate::model::loss(prediction, target);
    let config = &trace.config;
    let t_len = trace.h0.nrows();
    let t_f = t_len as f64;
    let mut grads = GradStore::new();

    // Head and attention backward per task, accumulating into d_h2.
    let mut d_h2 = Array2::zeros(trace.h2.dim());
    for (idx, task) in TASKS.iter().enumerate() {
        let tr = &trace.tasks[idx];
        let (utt, truth) = match idx {
            0 => (prediction.utterance_quality, target.quality),
            _ => (
                prediction.utterance_intelligibility,
                target.intelligibility,
            ),
        };
        // d loss / d frame_t from both objective terms: the utterance term
        // through the pooled mean, the frame term directly.
        let d_frame = tr
            .frame
            .mapv(|f| 2.0 * (utt - truth) / t_f + 2.0 * (f - truth) / t_f);
        let d_pre = &d_frame * &tr.frame.mapv(|f| f * (1.0 - f));

        let w_head = store.get2(&format!("model/head/{task}/w"))?;
        let d_w_head = tr.h3.t().dot(&d_pre.view().insert_axis(Axis(1)));
        grads.accumulate(&format!("model/head/{task}/w"), d_w_head.into_dyn())?;
        grads.accumulate(
            &format!("model/head/{task}/b"),
            Array1::from_elem(1, d_pre.sum()).into_dyn(),
        )?;
        let d_h3 = d_pre.view().insert_axis(Axis(1)).dot(&w_head.t());

        let attn_grads =
            attention_backward(&trace.h2, tr, store, task, config.attention_heads, &d_h3)?;
        grads.accumulate(&format!("model/attn/{task}/w_q"), attn_grads.d_wq.into_dyn())?;
        grads.accumulate(&format!("model/attn/{task}/w_k"), attn_grads.d_wk.into_dyn())?;
        grads.accumulate(&format!("model/attn/{task}/w_v"), attn_grads.d_wv.into_dyn())?;
        grads.accumulate(&format!("model/attn/{task}/w_o"), attn_grads.d_wo.into_dyn())?;
        d_h2 += &attn_grads.d_h2;
    }

    // Trunk ReLU backward.
    let d_trunk_pre = &d_h2 * &trace.trunk_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    grads.accumulate(
        "model/trunk/w",
        trace.h1.t().dot(&d_trunk_pre).into_dyn(),
    )?;
    grads.accumulate(
        "model/trunk/b",
        d_trunk_pre.sum_axis(Axis(0)).into_dyn(),
    )?;
    let w_t = store.get2("model/trunk/w")?;
    let d_h1 = d_trunk_pre.dot(&w_t.t());

    // BLSTM backward, both directions.
    let u = config.blstm_units;
    let d_h_fw = d_h1.slice(s![.., 0..u]).to_owned();
    let d_h_bw = reversed_rows(&d_h1.slice(s![.., u..2 * u]).to_owned());
    let h0_rev = reversed_rows(&trace.h0);
    let fw_grads = lstm_backward(
        &trace.h0,
        &trace.fw,
        &store.get2("model/blstm/fw/w_x")?,
        &store.get2("model/blstm/fw/w_h")?,
        &d_h_fw,
        u,
    );
    let bw_grads = lstm_backward(
        &h0_rev,
        &trace.bw,
        &store.get2("model/blstm/bw/w_x")?,
        &store.get2("model/blstm/bw/w_h")?,
        &d_h_bw,
        u,
    );
    for (dir, g) in [("fw", &fw_grads), ("bw", &bw_grads)] {
        grads.accumulate(&format!("model/blstm/{dir}/w_x"), g.d_wx.clone().into_dyn())?;
        grads.accumulate(&format!("model/blstm/{dir}/w_h"), g.d_wh.clone().into_dyn())?;
        grads.accumulate(&format!("model/blstm/{dir}/b"), g.d_b.clone().into_dyn())?;
    }
    let mut d_h0 = fw_grads.d_inputs;
    d_h0 += &reversed_rows(&bw_grads.d_inputs);

    // Fusion backward: the pattern projection receives the frame-summed
    // gradient (it was broadcast over frames), the feature projection the
    // full matrix.
    let d_pattern_proj = d_h0.sum_axis(Axis(0));
    grads.accumulate(
        "model/proj_pattern/w",
        trace
            .pattern_scaled
            .view()
            .insert_axis(Axis(1))
            .dot(&d_pattern_proj.view().insert_axis(Axis(0)))
            .into_dyn(),
    )?;
    grads.accumulate("model/proj_pattern/b", d_pattern_proj.into_dyn())?;
    grads.accumulate(
        "model/proj_feature/w",
        trace.features.t().dot(&d_h0).into_dyn(),
    )?;
    grads.accumulate(
        "model/proj_feature/b",
        d_h0.sum_axis(Axis(0)).into_dyn(),
    )?;
    let w_f = store.get2("model/proj_feature/w")?;
    let d_features = d_h0.dot(&w_f.t());

    Ok((breakdown, grads, d_features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiogram::{make_pattern, Audiogram, AudiogramCategory};
    use crate::rng::rng_from_seed;
    use ndarray::ArrayD;
    use rand::Rng;

    fn features(t: usize, d: usize, seed: u64) -> FeatureSequence {
        let mut rng = rng_from_seed(seed);
        FeatureSequence {
            frames: Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0..1.0)),
            frame_hop_seconds: 0.02,
            provider_id: "test".into(),
        }
    }

    fn pattern(level: f64) -> HearingLossPattern {
        let category = if level == 0.0 {
            AudiogramCategory::Normal
        } else {
            AudiogramCategory::Flat
        };
        make_pattern(&Audiogram::from_levels("ag_test", [level; 6], category))
    }

    fn tiny_setup(seed: u64) -> (ModelConfig, ParamStore) {
        let config = ModelConfig::tiny(5);
        let mut store = ParamStore::new();
        config.register_params(&mut store, seed).unwrap();
        (config, store)
    }

    #[test]
    fn scores_live_in_unit_interval_and_pool_exactly() {
        let (config, store) = tiny_setup(1);
        let f = features(7, 5, 2);
        let pred = forward(&config, &store, &f, &pattern(40.0)).unwrap();
        pred.validate().unwrap();
        assert_eq!(pred.n_frames(), 7);
        let mean: f64 =
            pred.frame_quality.iter().sum::<f64>() / pred.frame_quality.len() as f64;
        assert_eq!(pred.utterance_quality, mean);
    }

    #[test]
    fn zeroed_parameters_predict_exactly_half() {
        let (config, mut store) = tiny_setup(1);
        let names: Vec<String> = store.names().map(String::from).collect();
        for name in names {
            let shape = store.get(&name).unwrap().shape().to_vec();
            store
                .set(&name, ArrayD::zeros(ndarray::IxDyn(&shape)))
                .unwrap();
        }
        let pred = forward(&config, &store, &features(4, 5, 3), &pattern(60.0)).unwrap();
        assert!(pred.frame_quality.iter().all(|v| *v == 0.5));
        assert!(pred.frame_intelligibility.iter().all(|v| *v == 0.5));
        assert_eq!(pred.utterance_quality, 0.5);
        assert_eq!(pred.utterance_intelligibility, 0.5);
    }

    #[test]
    fn single_frame_utterance_equals_its_frame() {
        let (config, store) = tiny_setup(4);
        let pred = forward(&config, &store, &features(1, 5, 5), &pattern(25.0)).unwrap();
        assert_eq!(pred.utterance_quality, pred.frame_quality[0]);
        assert_eq!(
            pred.utterance_intelligibility,
            pred.frame_intelligibility[0]
        );
    }

    #[test]
    fn forward_is_deterministic() {
        let (config, store) = tiny_setup(6);
        let f = features(5, 5, 7);
        let a = forward(&config, &store, &f, &pattern(55.0)).unwrap();
        let b = forward(&config, &store, &f, &pattern(55.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zeroed_pattern_branch_ignores_the_pattern() {
        let (config, mut store) = tiny_setup(8);
        for name in ["model/proj_pattern/w", "model/proj_pattern/b"] {
            let shape = store.get(name).unwrap().shape().to_vec();
            store
                .set(name, ArrayD::zeros(ndarray::IxDyn(&shape)))
                .unwrap();
        }
        let f = features(6, 5, 9);
        let a = forward(&config, &store, &f, &pattern(0.0)).unwrap();
        let b = forward(&config, &store, &f, &pattern(110.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pattern_branch_matters_when_not_zeroed() {
        let (config, store) = tiny_setup(8);
        let f = features(6, 5, 9);
        let a = forward(&config, &store, &f, &pattern(0.0)).unwrap();
        let b = forward(&config, &store, &f, &pattern(110.0)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn wrong_feature_width_is_rejected() {
        let (config, store) = tiny_setup(1);
        let err = forward(&config, &store, &features(4, 9, 2), &pattern(30.0)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)), "{err}");
    }

    #[test]
    fn nonfinite_features_are_rejected_with_layer_name() {
        let (config, store) = tiny_setup(1);
        let mut f = features(4, 5, 2);
        f.frames[[2, 3]] = f64::NAN;
        let err = forward(&config, &store, &f, &pattern(30.0)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteActivation { .. }), "{err}");
    }

    #[test]
    fn backward_runs_and_touches_every_model_tensor() {
        let (config, store) = tiny_setup(11);
        let f = features(6, 5, 12);
        let (pred, trace) = forward_traced(&config, &store, &f, &pattern(45.0)).unwrap();
        let target = TargetPair {
            quality: 0.3,
            intelligibility: 0.9,
        };
        let (breakdown, grads, d_features) = backward(&store, &trace, &pred, &target).unwrap();
        assert!(breakdown.total > 0.0);
        assert_eq!(d_features.dim(), (6, 5));
        for name in store.names() {
            assert!(grads.get(name).is_some(), "missing gradient for {name}");
        }
    }

    #[test]
    fn doubling_the_error_scales_head_gradients() {
        // With a single frame the frame score equals the pooled score, so
        // the head bias gradient is exactly linear in (pred - target).
        let (config, store) = tiny_setup(13);
        let f = features(1, 5, 14);
        let (pred, trace) = forward_traced(&config, &store, &f, &pattern(35.0)).unwrap();
        let q = pred.utterance_quality;
        let near = TargetPair {
            quality: (q - 0.01).clamp(0.0, 1.0),
            intelligibility: pred.utterance_intelligibility,
        };
        let far = TargetPair {
            quality: (q - 0.02).clamp(0.0, 1.0),
            intelligibility: pred.utterance_intelligibility,
        };
        let (_, g_near, _) = backward(&store, &trace, &pred, &near).unwrap();
        let (_, g_far, _) = backward(&store, &trace, &pred, &far).unwrap();
        let b_near = g_near.get("model/head/quality/b").unwrap()[0];
        let b_far = g_far.get("model/head/quality/b").unwrap()[0];
        assert!((b_far / b_near - 2.0).abs() < 1e-9, "{b_far} / {b_near}");
    }
}
