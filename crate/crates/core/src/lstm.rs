//! Single-layer LSTM regressor trained by backpropagation through time.
//!
//! Window values are fed one scalar per time step through the standard cell:
//!
//! ```text
//! f_t = sigmoid(W_f x_t + U_f h_{t-1} + b_f)
//! i_t = sigmoid(W_i x_t + U_i h_{t-1} + b_i)
//! o_t = sigmoid(W_o x_t + U_o h_{t-1} + b_o)
//! g_t = tanh   (W_g x_t + U_g h_{t-1} + b_g)
//! c_t = f_t * c_{t-1} + i_t * g_t
//! h_t = o_t * tanh(c_t)
//! ```
//!
//! and the prediction is a linear head on the final hidden state,
//! `y = w_y . h_T + b_y`. Training is mini-batch gradient descent with Adam
//! updates, exact BPTT gradients, L1/L2 penalties on the weight matrices
//! (biases excluded), and optional inverted dropout on `h_T`. Batches are
//! formed in chronological order and never shuffled.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::WindowedDataset;
use crate::rng::seeded_rng;

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged: loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("cannot fit on an empty dataset")]
    EmptyDataset,
    #[error("invalid lstm config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub window_size: usize,
    /// Hidden size.
    pub units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// L1 penalty coefficient on weight matrices.
    pub l1: f64,
    /// L2 penalty coefficient on weight matrices.
    pub l2: f64,
    /// Dropout probability on the final hidden state, training only.
    pub dropout: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            window_size: 6,
            units: 32,
            epochs: 10,
            batch_size: 32,
            l1: 0.0,
            l2: 0.0,
            dropout: 0.0,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<(), LstmError> {
        let bad = |msg: &str| Err(LstmError::InvalidConfig(msg.into()));
        if self.window_size < 1 {
            return bad("window_size must be >= 1");
        }
        if self.units < 1 {
            return bad("units must be >= 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.l1 < 0.0 || self.l2 < 0.0 {
            return bad("l1 and l2 must be >= 0");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.learning_rate <= 0.0 {
            return bad("learning_rate must be > 0");
        }
        Ok(())
    }
}

/// All trainable parameters. Input is scalar per step, so the input weights
/// are one value per unit; recurrent matrices are `units x units` row-major
/// by unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub units: usize,
    pub w_f: Vec<f64>,
    pub w_i: Vec<f64>,
    pub w_o: Vec<f64>,
    pub w_g: Vec<f64>,
    pub u_f: Vec<Vec<f64>>,
    pub u_i: Vec<Vec<f64>>,
    pub u_o: Vec<Vec<f64>>,
    pub u_g: Vec<Vec<f64>>,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_g: Vec<f64>,
    pub w_y: Vec<f64>,
    pub b_y: f64,
}

impl LstmParams {
    pub fn zeros(units: usize) -> Self {
        Self {
            units,
            w_f: vec![0.0; units],
            w_i: vec![0.0; units],
            w_o: vec![0.0; units],
            w_g: vec![0.0; units],
            u_f: vec![vec![0.0; units]; units],
            u_i: vec![vec![0.0; units]; units],
            u_o: vec![vec![0.0; units]; units],
            u_g: vec![vec![0.0; units]; units],
            b_f: vec![0.0; units],
            b_i: vec![0.0; units],
            b_o: vec![0.0; units],
            b_g: vec![0.0; units],
            w_y: vec![0.0; units],
            b_y: 0.0,
        }
    }

    /// Uniform(-k, k) weights with k = 1/sqrt(units); zero biases except the
    /// forget-gate bias at 1.0.
    pub fn init(units: usize, rng: &mut ChaCha8Rng) -> Self {
        let k = 1.0 / (units as f64).sqrt();
        fn draw(n: usize, k: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-k..k)).collect()
        }
        fn draw_mat(n: usize, k: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
            (0..n).map(|_| draw(n, k, rng)).collect()
        }
        let w_f = draw(units, k, rng);
        let w_i = draw(units, k, rng);
        let w_o = draw(units, k, rng);
        let w_g = draw(units, k, rng);
        let u_f = draw_mat(units, k, rng);
        let u_i = draw_mat(units, k, rng);
        let u_o = draw_mat(units, k, rng);
        let u_g = draw_mat(units, k, rng);
        let w_y = draw(units, k, rng);
        Self {
            units,
            w_f,
            w_i,
            w_o,
            w_g,
            u_f,
            u_i,
            u_o,
            u_g,
            b_f: vec![1.0; units],
            b_i: vec![0.0; units],
            b_o: vec![0.0; units],
            b_g: vec![0.0; units],
            w_y,
            b_y: 0.0,
        }
    }

    pub fn flat_len(units: usize) -> usize {
        4 * units + 4 * units * units + 4 * units + units + 1
    }

    /// Canonical flat layout: w_f w_i w_o w_g, u_f u_i u_o u_g (row-major),
    /// b_f b_i b_o b_g, w_y, b_y.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(Self::flat_len(self.units));
        for v in [&self.w_f, &self.w_i, &self.w_o, &self.w_g] {
            flat.extend_from_slice(v);
        }
        for m in [&self.u_f, &self.u_i, &self.u_o, &self.u_g] {
            for row in m {
                flat.extend_from_slice(row);
            }
        }
        for v in [&self.b_f, &self.b_i, &self.b_o, &self.b_g] {
            flat.extend_from_slice(v);
        }
        flat.extend_from_slice(&self.w_y);
        flat.push(self.b_y);
        flat
    }

    pub fn from_flat(units: usize, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), Self::flat_len(units));
        let mut pos = 0;
        let mut take = |n: usize| -> Vec<f64> {
            let v = flat[pos..pos + n].to_vec();
            pos += n;
            v
        };
        let w_f = take(units);
        let w_i = take(units);
        let w_o = take(units);
        let w_g = take(units);
        let mut take_mat = |_: ()| -> Vec<Vec<f64>> { (0..units).map(|_| take(units)).collect() };
        let u_f = take_mat(());
        let u_i = take_mat(());
        let u_o = take_mat(());
        let u_g = take_mat(());
        let b_f = take(units);
        let b_i = take(units);
        let b_o = take(units);
        let b_g = take(units);
        let w_y = take(units);
        let b_y = take(1)[0];
        Self { units, w_f, w_i, w_o, w_g, u_f, u_i, u_o, u_g, b_f, b_i, b_o, b_g, w_y, b_y }
    }

    fn weight_l1(&self) -> f64 {
        let vecs = [&self.w_f, &self.w_i, &self.w_o, &self.w_g, &self.w_y];
        let mats = [&self.u_f, &self.u_i, &self.u_o, &self.u_g];
        vecs.iter().flat_map(|v| v.iter()).map(|w| w.abs()).sum::<f64>()
            + mats.iter().flat_map(|m| m.iter().flatten()).map(|w| w.abs()).sum::<f64>()
    }

    fn weight_l2(&self) -> f64 {
        let vecs = [&self.w_f, &self.w_i, &self.w_o, &self.w_g, &self.w_y];
        let mats = [&self.u_f, &self.u_i, &self.u_o, &self.u_g];
        vecs.iter().flat_map(|v| v.iter()).map(|w| w * w).sum::<f64>()
            + mats.iter().flat_map(|m| m.iter().flatten()).map(|w| w * w).sum::<f64>()
    }

    pub fn all_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Hidden and cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(units: usize) -> Self {
        Self { h: vec![0.0; units], c: vec![0.0; units] }
    }
}

/// Gradients, same shape as [`LstmParams`].
pub type LstmGradients = LstmParams;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One cell step: consume a scalar input, return the next state.
pub fn lstm_step(params: &LstmParams, x_t: f64, state: &LstmState) -> Result<LstmState, LstmError> {
    if state.h.len() != params.units || state.c.len() != params.units {
        return Err(LstmError::ShapeMismatch(format!(
            "state has {} units, params have {}",
            state.h.len(),
            params.units
        )));
    }
    let step = step_with_cache(params, x_t, &state.h, &state.c);
    Ok(LstmState { h: step.h, c: step.c })
}

struct StepActivations {
    f: Vec<f64>,
    i: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn step_with_cache(params: &LstmParams, x: f64, h_prev: &[f64], c_prev: &[f64]) -> StepActivations {
    let u = params.units;
    let mut act = StepActivations {
        f: vec![0.0; u],
        i: vec![0.0; u],
        o: vec![0.0; u],
        g: vec![0.0; u],
        c: vec![0.0; u],
        tanh_c: vec![0.0; u],
        h: vec![0.0; u],
    };
    for j in 0..u {
        let mut a_f = params.w_f[j] * x + params.b_f[j];
        let mut a_i = params.w_i[j] * x + params.b_i[j];
        let mut a_o = params.w_o[j] * x + params.b_o[j];
        let mut a_g = params.w_g[j] * x + params.b_g[j];
        let (uf, ui, uo, ug) = (&params.u_f[j], &params.u_i[j], &params.u_o[j], &params.u_g[j]);
        for k in 0..u {
            let h = h_prev[k];
            a_f += uf[k] * h;
            a_i += ui[k] * h;
            a_o += uo[k] * h;
            a_g += ug[k] * h;
        }
        let f = sigmoid(a_f);
        let i = sigmoid(a_i);
        let o = sigmoid(a_o);
        let g = a_g.tanh();
        let c = f * c_prev[j] + i * g;
        let tc = c.tanh();
        act.f[j] = f;
        act.i[j] = i;
        act.o[j] = o;
        act.g[j] = g;
        act.c[j] = c;
        act.tanh_c[j] = tc;
        act.h[j] = o * tc;
    }
    act
}

/// Everything the backward pass needs from one window's forward pass.
pub struct ForwardCache {
    xs: Vec<f64>,
    steps: Vec<StepActivations>,
    /// h_0..h_T; entry 0 is the zero initial state.
    hs: Vec<Vec<f64>>,
    /// Final hidden state after the dropout mask, when one was applied.
    h_out: Vec<f64>,
}

/// Run a window through the cell from zero state; return the prediction and
/// the cache for backprop.
pub fn forward(params: &LstmParams, window: &[f64]) -> Result<(f64, ForwardCache), LstmError> {
    forward_with_mask(params, window, None)
}

fn forward_with_mask(
    params: &LstmParams,
    window: &[f64],
    mask: Option<&[f64]>,
) -> Result<(f64, ForwardCache), LstmError> {
    if window.is_empty() {
        return Err(LstmError::ShapeMismatch("empty window".into()));
    }
    let u = params.units;
    let mut h = vec![0.0; u];
    let mut c = vec![0.0; u];
    let mut steps = Vec::with_capacity(window.len());
    let mut hs = Vec::with_capacity(window.len() + 1);
    hs.push(h.clone());
    for &x in window {
        let act = step_with_cache(params, x, &h, &c);
        h = act.h.clone();
        c = act.c.clone();
        hs.push(h.clone());
        steps.push(act);
    }
    let h_out: Vec<f64> = match mask {
        Some(m) => h.iter().zip(m).map(|(v, f)| v * f).collect(),
        None => h.clone(),
    };
    let pred = params.w_y.iter().zip(&h_out).map(|(w, v)| w * v).sum::<f64>() + params.b_y;
    Ok((pred, ForwardCache { xs: window.to_vec(), steps, hs, h_out }))
}

/// Batch loss: mean squared error plus `l1 * sum|w| + l2 * sum w^2` over the
/// weight matrices (biases excluded).
pub fn loss(params: &LstmParams, features: &[Vec<f64>], targets: &[f64], l1: f64, l2: f64) -> f64 {
    assert!(!features.is_empty() && features.len() == targets.len());
    let data: f64 = features
        .iter()
        .zip(targets)
        .map(|(w, y)| {
            let (pred, _) = forward(params, w).expect("non-empty window");
            (pred - y) * (pred - y)
        })
        .sum::<f64>()
        / features.len() as f64;
    data + l1 * params.weight_l1() + l2 * params.weight_l2()
}

/// Exact analytic gradients of [`loss`] for a batch. The L1 subgradient at 0
/// is taken as 0.
pub fn backward(
    params: &LstmParams,
    features: &[Vec<f64>],
    targets: &[f64],
    l1: f64,
    l2: f64,
) -> LstmGradients {
    backward_impl(params, features, targets, l1, l2, None)
}

fn backward_impl(
    params: &LstmParams,
    features: &[Vec<f64>],
    targets: &[f64],
    l1: f64,
    l2: f64,
    masks: Option<&[Vec<f64>]>,
) -> LstmGradients {
    assert!(!features.is_empty() && features.len() == targets.len());
    let u = params.units;
    let batch = features.len() as f64;
    let mut grads = LstmGradients::zeros(u);

    for (s, (window, &target)) in features.iter().zip(targets).enumerate() {
        let mask = masks.map(|m| m[s].as_slice());
        let (pred, cache) = forward_with_mask(params, window, mask).expect("non-empty window");
        let dpred = 2.0 * (pred - target) / batch;

        // output head
        let mut dh = vec![0.0; u];
        for j in 0..u {
            grads.w_y[j] += dpred * cache.h_out[j];
            dh[j] = dpred * params.w_y[j] * mask.map_or(1.0, |m| m[j]);
        }
        grads.b_y += dpred;

        // through time
        let steps = cache.steps.len();
        let c_zero = vec![0.0; u];
        let mut dc_next = vec![0.0; u];
        for t in (0..steps).rev() {
            let act = &cache.steps[t];
            let h_prev = &cache.hs[t];
            let c_prev: &[f64] = if t == 0 { &c_zero } else { &cache.steps[t - 1].c };
            let x = cache.xs[t];

            let mut dh_prev = vec![0.0; u];
            for j in 0..u {
                let do_j = dh[j] * act.tanh_c[j];
                let dc_j = dc_next[j] + dh[j] * act.o[j] * (1.0 - act.tanh_c[j] * act.tanh_c[j]);
                let df_j = dc_j * c_prev[j];
                let di_j = dc_j * act.g[j];
                let dg_j = dc_j * act.i[j];

                let daf = df_j * act.f[j] * (1.0 - act.f[j]);
                let dai = di_j * act.i[j] * (1.0 - act.i[j]);
                let dao = do_j * act.o[j] * (1.0 - act.o[j]);
                let dag = dg_j * (1.0 - act.g[j] * act.g[j]);

                grads.w_f[j] += daf * x;
                grads.w_i[j] += dai * x;
                grads.w_o[j] += dao * x;
                grads.w_g[j] += dag * x;
                grads.b_f[j] += daf;
                grads.b_i[j] += dai;
                grads.b_o[j] += dao;
                grads.b_g[j] += dag;
                for k in 0..u {
                    let h = h_prev[k];
                    grads.u_f[j][k] += daf * h;
                    grads.u_i[j][k] += dai * h;
                    grads.u_o[j][k] += dao * h;
                    grads.u_g[j][k] += dag * h;
                    dh_prev[k] += params.u_f[j][k] * daf
                        + params.u_i[j][k] * dai
                        + params.u_o[j][k] * dao
                        + params.u_g[j][k] * dag;
                }
                dc_next[j] = dc_j * act.f[j];
            }
            dh = dh_prev;
        }
    }

    add_penalty_grads(&mut grads, params, l1, l2);
    grads
}

fn add_penalty_grads(grads: &mut LstmGradients, params: &LstmParams, l1: f64, l2: f64) {
    if l1 == 0.0 && l2 == 0.0 {
        return;
    }
    // L1 subgradient at exactly 0 is taken as 0
    let pull = |g: &mut f64, w: f64| {
        let sign = if w == 0.0 { 0.0 } else { w.signum() };
        *g += l1 * sign + 2.0 * l2 * w;
    };
    let u = params.units;
    for j in 0..u {
        pull(&mut grads.w_f[j], params.w_f[j]);
        pull(&mut grads.w_i[j], params.w_i[j]);
        pull(&mut grads.w_o[j], params.w_o[j]);
        pull(&mut grads.w_g[j], params.w_g[j]);
        pull(&mut grads.w_y[j], params.w_y[j]);
        for k in 0..u {
            pull(&mut grads.u_f[j][k], params.u_f[j][k]);
            pull(&mut grads.u_i[j][k], params.u_i[j][k]);
            pull(&mut grads.u_o[j][k], params.u_o[j][k]);
            pull(&mut grads.u_g[j][k], params.u_g[j][k]);
        }
    }
}

// Adam with bias correction; step size is decoupled from gradient scale.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: u32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(lr: f64, len: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Train on a windowed dataset. Deterministic given `config.seed`.
pub fn fit_lstm(data: &WindowedDataset, config: &LstmConfig) -> Result<LstmParams, LstmError> {
    fit_lstm_traced(data, config).map(|(params, _)| params)
}

/// [`fit_lstm`] that also returns the epoch-end training losses.
pub fn fit_lstm_traced(
    data: &WindowedDataset,
    config: &LstmConfig,
) -> Result<(LstmParams, Vec<f64>), LstmError> {
    config.validate()?;
    let n = data.n_samples();
    if n == 0 {
        return Err(LstmError::EmptyDataset);
    }

    let mut rng = seeded_rng(config.seed);
    let mut params = LstmParams::init(config.units, &mut rng);
    let mut adam = Adam::new(config.learning_rate, LstmParams::flat_len(config.units));
    let keep = 1.0 - config.dropout;
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut start = 0;
        while start < n {
            let end = (start + config.batch_size).min(n);
            let features = &data.features[start..end];
            let targets = &data.targets[start..end];

            let masks: Option<Vec<Vec<f64>>> = if config.dropout > 0.0 {
                Some(
                    (start..end)
                        .map(|_| {
                            (0..config.units)
                                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                                .collect()
                        })
                        .collect(),
                )
            } else {
                None
            };

            let grads = backward_impl(&params, features, targets, config.l1, config.l2, masks.as_deref());
            let mut flat = params.to_flat();
            adam.step(&mut flat, &grads.to_flat());
            params = LstmParams::from_flat(config.units, &flat);
            start = end;
        }

        let epoch_loss = loss(&params, &data.features, &data.targets, config.l1, config.l2);
        if !epoch_loss.is_finite() {
            return Err(LstmError::DivergenceDetected { epoch });
        }
        epoch_losses.push(epoch_loss);
    }
    Ok((params, epoch_losses))
}

/// Per-row forward predictions with dropout disabled.
pub fn predict_lstm(params: &LstmParams, data: &WindowedDataset) -> Vec<f64> {
    data.features
        .iter()
        .map(|w| forward(params, w).expect("windows are non-empty").0)
        .collect()
}
