//! Two-layer stacked LSTM regressor with inverted dropout, a rectified
//! affine head, backpropagation through time and RMSprop.
//!
//! Gate weights are stored fused: for a layer with `u` units and input width
//! `d`, `wx` is a row-major `4u × d` matrix, `wh` is `4u × u` and `b` has
//! `4u` entries. Row blocks are ordered input gate `i`, forget gate `f`,
//! output gate `o`, candidate `g`:
//!
//! ```text
//! i = σ(Wxi·x + Whi·h + bi)    f = σ(Wxf·x + Whf·h + bf)
//! o = σ(Wxo·x + Who·h + bo)    g = tanh(Wxg·x + Whg·h + bg)
//! c' = f ⊙ c + i ⊙ g           h' = o ⊙ tanh(c')
//! ```
//!
//! The prediction for a window is `head_w · relu(drop(h2_T)) + head_b`, where
//! `h2_T` is the second layer's last hidden state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::WindowedDataset;
use crate::rng::SeededRng;

pub const MODEL_FORMAT: &str = "soilwave-lstm";
pub const MODEL_VERSION: u32 = 1;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub units: usize,
    pub input: usize,
    pub wx: Vec<f64>,
    pub wh: Vec<f64>,
    pub b: Vec<f64>,
}

/// Gate blocks in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

impl LstmLayerParams {
    pub fn zeros(units: usize, input: usize) -> Self {
        LstmLayerParams {
            units,
            input,
            wx: vec![0.0; 4 * units * input],
            wh: vec![0.0; 4 * units * units],
            b: vec![0.0; 4 * units],
        }
    }

    /// Glorot-uniform weights per gate block, forget bias 1, other biases 0.
    pub fn init(units: usize, input: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(units, input);
        let lim_x = (6.0 / (input + units) as f64).sqrt();
        let lim_h = (6.0 / (2 * units) as f64).sqrt();
        p.wx.iter_mut().for_each(|w| *w = rng.uniform_range(-lim_x, lim_x));
        p.wh.iter_mut().for_each(|w| *w = rng.uniform_range(-lim_h, lim_h));
        p.b[units..2 * units].iter_mut().for_each(|b| *b = 1.0);
        p
    }

    fn check_shapes(&self) -> Result<()> {
        let (u, d) = (self.units, self.input);
        if self.wx.len() != 4 * u * d || self.wh.len() != 4 * u * u || self.b.len() != 4 * u {
            return Err(Error::arg(format!("inconsistent layer shapes for units={u}, input={d}")));
        }
        Ok(())
    }

    /// Input weights of one gate (`u × d`, row-major).
    pub fn wx_gate(&self, gate: Gate) -> &[f64] {
        let n = self.units * self.input;
        &self.wx[gate as usize * n..(gate as usize + 1) * n]
    }

    pub fn wh_gate(&self, gate: Gate) -> &[f64] {
        let n = self.units * self.units;
        &self.wh[gate as usize * n..(gate as usize + 1) * n]
    }

    pub fn b_gate(&self, gate: Gate) -> &[f64] {
        &self.b[gate as usize * self.units..(gate as usize + 1) * self.units]
    }

    pub fn b_gate_mut(&mut self, gate: Gate) -> &mut [f64] {
        let u = self.units;
        &mut self.b[gate as usize * u..(gate as usize + 1) * u]
    }

    fn slices(&self) -> [&[f64]; 3] {
        [&self.wx, &self.wh, &self.b]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 3] {
        [&mut self.wx, &mut self.wh, &mut self.b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(units: usize) -> Self {
        LstmState { h: vec![0.0; units], c: vec![0.0; units] }
    }
}

/// Gate activations of one cell step, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGates {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
}

fn cell_step(p: &LstmLayerParams, x: &[f64], prev: &LstmState) -> (LstmState, CellGates) {
    let (u, d) = (p.units, p.input);
    let mut z = p.b.clone();
    for (r, zr) in z.iter_mut().enumerate() {
        let wx = &p.wx[r * d..(r + 1) * d];
        let wh = &p.wh[r * u..(r + 1) * u];
        let mut acc = 0.0;
        for k in 0..d {
            acc += wx[k] * x[k];
        }
        for k in 0..u {
            acc += wh[k] * prev.h[k];
        }
        *zr += acc;
    }
    let i: Vec<f64> = z[0..u].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[u..2 * u].iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = z[2 * u..3 * u].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[3 * u..4 * u].iter().map(|v| v.tanh()).collect();
    let c: Vec<f64> = (0..u).map(|k| f[k] * prev.c[k] + i[k] * g[k]).collect();
    let h: Vec<f64> = (0..u).map(|k| o[k] * c[k].tanh()).collect();
    (LstmState { h, c }, CellGates { i, f, o, g })
}

/// One LSTM cell step.
pub fn lstm_cell_forward(params: &LstmLayerParams, x: &[f64], prev: &LstmState) -> Result<(LstmState, CellGates)> {
    params.check_shapes()?;
    if x.len() != params.input {
        return Err(Error::arg(format!("input width {} != layer input {}", x.len(), params.input)));
    }
    if prev.h.len() != params.units || prev.c.len() != params.units {
        return Err(Error::arg("previous state width does not match layer units"));
    }
    if x.iter().chain(&prev.h).chain(&prev.c).any(|v| !v.is_finite()) {
        return Err(Error::invalid("x/state", "must be finite"));
    }
    let out = cell_step(params, x, prev);
    if out.0.c.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("params", "non-finite cell state"));
    }
    Ok(out)
}

/// Architecture of a model before initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub input_width: usize,
    pub units1: usize,
    pub units2: usize,
    pub dropout_p: f64,
}

impl LstmSpec {
    pub fn new(input_width: usize) -> Self {
        LstmSpec { input_width, units1: 32, units2: 32, dropout_p: 0.2 }
    }

    fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.units1 == 0 || self.units2 == 0 {
            return Err(Error::arg("layer sizes must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::arg(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub layer1: LstmLayerParams,
    pub layer2: LstmLayerParams,
    pub head_w: Vec<f64>,
    pub head_b: f64,
    pub dropout_p: f64,
}

impl LstmModel {
    /// Seeded initialization (Glorot-uniform weights, forget bias 1, head bias 0).
    pub fn init(spec: &LstmSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = SeededRng::with_stream(seed, INIT_STREAM);
        let layer1 = LstmLayerParams::init(spec.units1, spec.input_width, &mut rng);
        let layer2 = LstmLayerParams::init(spec.units2, spec.units1, &mut rng);
        let lim = (6.0 / (spec.units2 + 1) as f64).sqrt();
        let head_w = (0..spec.units2).map(|_| rng.uniform_range(-lim, lim)).collect();
        Ok(LstmModel { layer1, layer2, head_w, head_b: 0.0, dropout_p: spec.dropout_p })
    }

    pub fn zeros(spec: &LstmSpec) -> Result<Self> {
        spec.validate()?;
        Ok(LstmModel {
            layer1: LstmLayerParams::zeros(spec.units1, spec.input_width),
            layer2: LstmLayerParams::zeros(spec.units2, spec.units1),
            head_w: vec![0.0; spec.units2],
            head_b: 0.0,
            dropout_p: spec.dropout_p,
        })
    }

    pub fn spec(&self) -> LstmSpec {
        LstmSpec {
            input_width: self.layer1.input,
            units1: self.layer1.units,
            units2: self.layer2.units,
            dropout_p: self.dropout_p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layer1.check_shapes()?;
        self.layer2.check_shapes()?;
        if self.layer2.input != self.layer1.units {
            return Err(Error::arg("layer 2 input width must equal layer 1 units"));
        }
        if self.head_w.len() != self.layer2.units {
            return Err(Error::arg("head width must equal layer 2 units"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::arg("dropout_p outside [0, 1)"));
        }
        Ok(())
    }

    /// Parameter count.
    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::with_capacity(8);
        v.extend(self.layer1.slices());
        v.extend(self.layer2.slices());
        v.push(&self.head_w);
        v.push(std::slice::from_ref(&self.head_b));
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(8);
        v.extend(self.layer1.slices_mut());
        v.extend(self.layer2.slices_mut());
        v.push(&mut self.head_w);
        v.push(std::slice::from_mut(&mut self.head_b));
        v
    }

    /// All parameters concatenated in [`slices`](Self::slices) order.
    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::arg("flat parameter vector has the wrong length"));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&values[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        LstmModel {
            layer1: LstmLayerParams::zeros(self.layer1.units, self.layer1.input),
            layer2: LstmLayerParams::zeros(self.layer2.units, self.layer2.input),
            head_w: vec![0.0; self.head_w.len()],
            head_b: 0.0,
            dropout_p: self.dropout_p,
        }
    }
}

/// Gradients share the parameter layout of the model.
pub type LstmGrads = LstmModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted-dropout multipliers (0 or `1/(1-p)`).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// `steps × units1`, applied to every layer-1 output.
    pub layer1: Vec<f64>,
    /// `units2`, applied to the layer-2 output consumed by the head.
    pub layer2: Vec<f64>,
}

impl DropoutMasks {
    pub fn ones(steps: usize, units1: usize, units2: usize) -> Self {
        DropoutMasks { layer1: vec![1.0; steps * units1], layer2: vec![1.0; units2] }
    }

    /// Independent Bernoulli keep decisions per unit and timestep.
    pub fn sample(rng: &mut SeededRng, steps: usize, units1: usize, units2: usize, p: f64) -> Self {
        if p == 0.0 {
            return Self::ones(steps, units1, units2);
        }
        let keep = 1.0 / (1.0 - p);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| if rng.uniform() < p { 0.0 } else { keep }).collect() };
        let layer1 = draw(steps * units1);
        let layer2 = draw(units2);
        DropoutMasks { layer1, layer2 }
    }
}

#[derive(Debug, Clone)]
struct LayerTrace {
    /// Per step: input, gates, cell state, tanh(cell), hidden.
    inputs: Vec<Vec<f64>>,
    gates: Vec<CellGates>,
    c: Vec<Vec<f64>>,
    tc: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

fn run_layer(p: &LstmLayerParams, inputs: Vec<Vec<f64>>) -> LayerTrace {
    let steps = inputs.len();
    let mut state = LstmState::zeros(p.units);
    let mut trace = LayerTrace {
        inputs: Vec::with_capacity(steps),
        gates: Vec::with_capacity(steps),
        c: Vec::with_capacity(steps),
        tc: Vec::with_capacity(steps),
        h: Vec::with_capacity(steps),
    };
    for x in inputs {
        let (next, gates) = cell_step(p, &x, &state);
        trace.tc.push(next.c.iter().map(|v| v.tanh()).collect());
        trace.c.push(next.c.clone());
        trace.h.push(next.h.clone());
        trace.gates.push(gates);
        trace.inputs.push(x);
        state = next;
    }
    trace
}

/// Activations of one forward pass, sufficient for [`lstm_backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    steps: usize,
    layer1: LayerTrace,
    layer2: LayerTrace,
    masks: DropoutMasks,
    /// Dropped final layer-2 output (pre-rectifier).
    head_in: Vec<f64>,
    prediction: f64,
}

impl ForwardCache {
    pub fn masks(&self) -> &DropoutMasks {
        &self.masks
    }

    pub fn prediction(&self) -> f64 {
        self.prediction
    }

    /// Layer-1 hidden outputs after dropout, `steps × units1`.
    pub fn dropped_layer1(&self) -> Vec<f64> {
        self.layer2.inputs.concat()
    }
}

fn check_window(model: &LstmModel, window: &[f64], steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::arg("window needs at least one step"));
    }
    if window.len() != steps * model.layer1.input {
        return Err(Error::arg(format!(
            "window of {} values does not match {steps} steps × {} features",
            window.len(),
            model.layer1.input
        )));
    }
    Ok(())
}

/// Forward pass with explicit dropout masks (used for gradient checking and by
/// [`lstm_forward`]).
pub fn lstm_forward_with_masks(
    model: &LstmModel,
    window: &[f64],
    steps: usize,
    masks: DropoutMasks,
) -> Result<(f64, ForwardCache)> {
    model.validate()?;
    check_window(model, window, steps)?;
    let (u1, u2, d) = (model.layer1.units, model.layer2.units, model.layer1.input);
    if masks.layer1.len() != steps * u1 || masks.layer2.len() != u2 {
        return Err(Error::arg("dropout mask shapes do not match the model"));
    }
    let layer1 = run_layer(&model.layer1, window.chunks(d).map(<[f64]>::to_vec).collect());
    let inputs2: Vec<Vec<f64>> = layer1
        .h
        .iter()
        .enumerate()
        .map(|(t, h)| h.iter().zip(&masks.layer1[t * u1..(t + 1) * u1]).map(|(a, m)| a * m).collect())
        .collect();
    let layer2 = run_layer(&model.layer2, inputs2);
    let last = layer2.h.last().expect("steps >= 1");
    let head_in: Vec<f64> = last.iter().zip(&masks.layer2).map(|(a, m)| a * m).collect();
    let prediction = head_in.iter().zip(&model.head_w).map(|(&z, &w)| w * z.max(0.0)).sum::<f64>() + model.head_b;
    let cache = ForwardCache { steps, layer1, layer2, masks, head_in, prediction };
    Ok((prediction, cache))
}

/// Forward pass over one `steps × width` window. In training mode dropout
/// masks are drawn from `rng` (required when `dropout_p > 0`).
pub fn lstm_forward(
    model: &LstmModel,
    window: &[f64],
    steps: usize,
    mode: Mode,
    rng: Option<&mut SeededRng>,
) -> Result<(f64, ForwardCache)> {
    let (u1, u2) = (model.layer1.units, model.layer2.units);
    let masks = match (mode, rng) {
        (Mode::Train, Some(rng)) => DropoutMasks::sample(rng, steps, u1, u2, model.dropout_p),
        (Mode::Train, None) if model.dropout_p > 0.0 => {
            return Err(Error::arg("training-mode forward with dropout needs an rng"))
        }
        _ => DropoutMasks::ones(steps, u1, u2),
    };
    lstm_forward_with_masks(model, window, steps, masks)
}

/// Eval-mode prediction.
pub fn lstm_predict(model: &LstmModel, window: &[f64], steps: usize) -> Result<f64> {
    lstm_forward(model, window, steps, Mode::Eval, None).map(|(p, _)| p)
}

pub fn lstm_predict_all(model: &LstmModel, data: &WindowedDataset) -> Result<Vec<f64>> {
    if data.width != model.layer1.input {
        return Err(Error::arg(format!(
            "dataset width {} does not match model input {}",
            data.width, model.layer1.input
        )));
    }
    (0..data.len()).into_par_iter().map(|k| lstm_predict(model, data.window(k), data.steps)).collect()
}

/// Reverse pass through one layer. `dh_out[t]` is the external gradient on
/// the layer's hidden output at step `t`; accumulates parameter gradients
/// into `grad` and returns the gradient on each step's input.
fn backprop_layer(
    p: &LstmLayerParams,
    trace: &LayerTrace,
    dh_out: &[Vec<f64>],
    grad: &mut LstmLayerParams,
) -> Vec<Vec<f64>> {
    let (u, d) = (p.units, p.input);
    let steps = trace.h.len();
    let mut dx_all = vec![vec![0.0; d]; steps];
    let mut dh_next = vec![0.0; u];
    let mut dc_next = vec![0.0; u];
    let zeros = vec![0.0; u];
    let mut dz = vec![0.0; 4 * u];
    for t in (0..steps).rev() {
        let gt = &trace.gates[t];
        let c_prev = if t > 0 { &trace.c[t - 1] } else { &zeros };
        let h_prev = if t > 0 { &trace.h[t - 1] } else { &zeros };
        for k in 0..u {
            let dh = dh_out[t][k] + dh_next[k];
            let tc = trace.tc[t][k];
            let dc = dc_next[k] + dh * gt.o[k] * (1.0 - tc * tc);
            let di = dc * gt.g[k];
            let df = dc * c_prev[k];
            let d_o = dh * tc;
            let dg = dc * gt.i[k];
            dz[k] = di * gt.i[k] * (1.0 - gt.i[k]);
            dz[u + k] = df * gt.f[k] * (1.0 - gt.f[k]);
            dz[2 * u + k] = d_o * gt.o[k] * (1.0 - gt.o[k]);
            dz[3 * u + k] = dg * (1.0 - gt.g[k] * gt.g[k]);
            dc_next[k] = dc * gt.f[k];
        }
        let x = &trace.inputs[t];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let dx = &mut dx_all[t];
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            grad.b[r] += dzr;
            let wx = &p.wx[r * d..(r + 1) * d];
            let gwx = &mut grad.wx[r * d..(r + 1) * d];
            for k in 0..d {
                gwx[k] += dzr * x[k];
                dx[k] += wx[k] * dzr;
            }
            let wh = &p.wh[r * u..(r + 1) * u];
            let gwh = &mut grad.wh[r * u..(r + 1) * u];
            for k in 0..u {
                gwh[k] += dzr * h_prev[k];
                dh_next[k] += wh[k] * dzr;
            }
        }
    }
    dx_all
}

/// Gradients of `d_prediction · prediction` with respect to every parameter.
pub fn lstm_backward(model: &LstmModel, cache: &ForwardCache, d_prediction: f64) -> Result<LstmGrads> {
    model.validate()?;
    let (u1, u2) = (model.layer1.units, model.layer2.units);
    if cache.layer1.h.first().map(Vec::len) != Some(u1)
        || cache.layer2.h.first().map(Vec::len) != Some(u2)
        || cache.layer1.inputs[0].len() != model.layer1.input
    {
        return Err(Error::arg("forward cache does not match the model"));
    }
    let mut grads = model.zeros_like();
    grads.head_b = d_prediction;
    let mut dh2_last = vec![0.0; u2];
    for k in 0..u2 {
        let z = cache.head_in[k];
        grads.head_w[k] = d_prediction * z.max(0.0);
        if z > 0.0 {
            dh2_last[k] = d_prediction * model.head_w[k] * cache.masks.layer2[k];
        }
    }
    let steps = cache.steps;
    let mut dh2 = vec![vec![0.0; u2]; steps];
    dh2[steps - 1] = dh2_last;
    let dx2 = backprop_layer(&model.layer2, &cache.layer2, &dh2, &mut grads.layer2);
    let dh1: Vec<Vec<f64>> = dx2
        .iter()
        .enumerate()
        .map(|(t, g)| g.iter().zip(&cache.masks.layer1[t * u1..(t + 1) * u1]).map(|(a, m)| a * m).collect())
        .collect();
    backprop_layer(&model.layer1, &cache.layer1, &dh1, &mut grads.layer1);
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            epochs: 100,
            batch_size: 32,
            seed: 42,
            rms_decay: 0.9,
            rms_eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::arg("lr must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::arg("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return Err(Error::arg("rms_decay must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// RMSprop accumulators, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsState {
    pub s: Vec<f64>,
}

impl RmsState {
    pub fn new(num_params: usize) -> Self {
        RmsState { s: vec![0.0; num_params] }
    }
}

/// Element-wise `s ← ρs + (1−ρ)g²; θ ← θ − lr·g/(√s + eps)`.
pub fn rmsprop_update(theta: &mut [f64], grad: &[f64], s: &mut [f64], lr: f64, rho: f64, eps: f64) -> Result<()> {
    if theta.len() != grad.len() || theta.len() != s.len() {
        return Err(Error::arg("rmsprop: parameter, gradient and state shapes differ"));
    }
    for ((t, &g), s) in theta.iter_mut().zip(grad).zip(s.iter_mut()) {
        *s = rho * *s + (1.0 - rho) * g * g;
        *t -= lr * g / (s.sqrt() + eps);
    }
    Ok(())
}

pub fn rmsprop_step(params: &mut LstmModel, grads: &LstmGrads, state: &mut RmsState, cfg: &TrainConfig) -> Result<()> {
    if params.num_params() != grads.num_params() || state.s.len() != params.num_params() {
        return Err(Error::arg("rmsprop: model, gradient and state sizes differ"));
    }
    let mut offset = 0;
    for (theta, g) in params.slices_mut().into_iter().zip(grads.slices()) {
        if theta.len() != g.len() {
            return Err(Error::arg("rmsprop: gradient block shape mismatch"));
        }
        let n = theta.len();
        rmsprop_update(theta, g, &mut state.s[offset..offset + n], cfg.lr, cfg.rms_decay, cfg.rms_eps)?;
        offset += n;
    }
    Ok(())
}

/// Loss bookkeeping for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the ½-MSE training loss over the epoch's batches (train mode).
    pub train_loss: f64,
    /// Eval-mode ½-MSE on the validation set, if one was given.
    pub val_loss: Option<f64>,
}

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, val));
    }
    out
}

fn add_into(acc: &mut LstmGrads, g: &LstmGrads) {
    for (a, b) in acc.slices_mut().into_iter().zip(g.slices()) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

fn scale(g: &mut LstmGrads, factor: f64) {
    for s in g.slices_mut() {
        s.iter_mut().for_each(|v| *v *= factor);
    }
}

fn global_norm(g: &LstmGrads) -> f64 {
    g.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Mean gradient of the ½-MSE loss over `batch` plus the batch loss. Per-sample
/// work runs in parallel; the reduction is sequential in batch order.
pub fn batch_gradient(
    model: &LstmModel,
    data: &WindowedDataset,
    batch: &[usize],
    masks: Vec<DropoutMasks>,
) -> Result<(f64, LstmGrads)> {
    let m = batch.len() as f64;
    let per_sample: Vec<(f64, LstmGrads)> = batch
        .par_iter()
        .zip(masks)
        .map(|(&k, mask)| -> Result<(f64, LstmGrads)> {
            let (pred, cache) = lstm_forward_with_masks(model, data.window(k), data.steps, mask)?;
            let err = pred - data.targets[k];
            let g = lstm_backward(model, &cache, err / m)?;
            Ok((err * err, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = model.zeros_like();
    let mut sq = 0.0;
    for (e2, g) in &per_sample {
        sq += e2;
        add_into(&mut total, g);
    }
    Ok((sq / (2.0 * m), total))
}

/// Mini-batch RMSprop training from `initial`.
///
/// Each epoch shuffles the window order from the seeded stream, draws dropout
/// masks in batch order, and applies one clipped RMSprop step per batch.
pub fn train_lstm_from(
    initial: LstmModel,
    train: &WindowedDataset,
    val: Option<&WindowedDataset>,
    cfg: &TrainConfig,
) -> Result<(LstmModel, Vec<EpochRecord>)> {
    cfg.validate()?;
    initial.validate()?;
    if train.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if train.width != initial.layer1.input {
        return Err(Error::arg(format!(
            "training width {} does not match model input {}",
            train.width, initial.layer1.input
        )));
    }
    let mut model = initial;
    let mut state = RmsState::new(model.num_params());
    let mut shuffle_rng = SeededRng::with_stream(cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = SeededRng::with_stream(cfg.seed, DROPOUT_STREAM);
    let (u1, u2) = (model.layer1.units, model.layer2.units);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut clipped = 0usize;

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let masks = batch
                .iter()
                .map(|_| DropoutMasks::sample(&mut dropout_rng, train.steps, u1, u2, model.dropout_p))
                .collect();
            let (loss, mut grads) = batch_gradient(&model, train, batch, masks)?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, message: format!("batch loss is {loss}") });
            }
            if let Some(max_norm) = cfg.clip_norm {
                let norm = global_norm(&grads);
                if norm > max_norm {
                    scale(&mut grads, max_norm / norm);
                    clipped += 1;
                }
            }
            rmsprop_step(&mut model, &grads, &mut state, cfg)?;
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = match val {
            Some(v) if !v.is_empty() => {
                let pred = lstm_predict_all(&model, v)?;
                Some(crate::harness::mse(&pred, &v.targets)?)
            }
            _ => None,
        };
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Training { epoch, message: "loss became non-finite".into() });
        }
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:?}");
        history.push(EpochRecord { epoch, train_loss, val_loss });
    }
    if clipped > 0 {
        log::info!("gradient clipping triggered on {clipped} batches");
    }
    Ok((model, history))
}

/// Initializes a model from `spec` with `cfg.seed` and trains it.
pub fn train_lstm(
    train: &WindowedDataset,
    val: Option<&WindowedDataset>,
    spec: &LstmSpec,
    cfg: &TrainConfig,
) -> Result<(LstmModel, Vec<EpochRecord>)> {
    let model = LstmModel::init(spec, cfg.seed)?;
    train_lstm_from(model, train, val, cfg)
}

#[derive(Serialize, Deserialize)]
struct LstmModelFile {
    format: String,
    version: u32,
    input_width: usize,
    units1: usize,
    units2: usize,
    dropout_p: f64,
    layer1: LstmLayerParams,
    layer2: LstmLayerParams,
    head_w: Vec<f64>,
    head_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
}

impl LstmModel {
    /// Versioned JSON with row-major weights, optionally recording the
    /// training configuration and window length used.
    pub fn to_json(&self, train_config: Option<&TrainConfig>, steps: Option<usize>) -> String {
        let file = LstmModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            input_width: self.layer1.input,
            units1: self.layer1.units,
            units2: self.layer2.units,
            dropout_p: self.dropout_p,
            layer1: self.layer1.clone(),
            layer2: self.layer2.clone(),
            head_w: self.head_w.clone(),
            head_b: self.head_b,
            train_config: train_config.cloned(),
            steps,
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    /// Returns the model and the recorded window length, if any.
    pub fn from_json(text: &str) -> Result<(Self, Option<usize>)> {
        let file: LstmModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format(format!("expected format `{MODEL_FORMAT}`, got `{}`", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported lstm model version v{}", file.version)));
        }
        let model = LstmModel {
            layer1: file.layer1,
            layer2: file.layer2,
            head_w: file.head_w,
            head_b: file.head_b,
            dropout_p: file.dropout_p,
        };
        model.validate().map_err(|e| Error::Format(e.to_string()))?;
        if model.layer1.input != file.input_width
            || model.layer1.units != file.units1
            || model.layer2.units != file.units2
        {
            return Err(Error::Format("declared shapes disagree with weight blocks".into()));
        }
        Ok((model, file.steps))
    }
}
