//! A small recurrent Q-network: one LSTM layer whose output passes through a
//! ReLU, a linear hidden layer and a linear output layer.
//!
//! Parameters live in one flat `f64` vector. The layout, in order:
//!
//! | block      | shape              |
//! |------------|--------------------|
//! | `lstm_w`   | `4H x input_dim`   |
//! | `lstm_u`   | `4H x H`           |
//! | `lstm_b`   | `4H`               |
//! | `hidden_w` | `hidden x H`       |
//! | `hidden_b` | `hidden`           |
//! | `out_w`    | `output x hidden`  |
//! | `out_b`    | `output`           |
//!
//! Matrices are row-major. LSTM gate rows are ordered input, forget,
//! candidate, output.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub lstm_units: usize,
    pub hidden_units: usize,
    pub output_dim: usize,
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.lstm_units == 0 || self.hidden_units == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!(
                "network dimensions must all be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let h4 = 4 * self.lstm_units;
        let shapes = [
            ("lstm_w", h4, self.input_dim),
            ("lstm_u", h4, self.lstm_units),
            ("lstm_b", h4, 1),
            ("hidden_w", self.hidden_units, self.lstm_units),
            ("hidden_b", self.hidden_units, 1),
            ("out_w", self.output_dim, self.hidden_units),
            ("out_b", self.output_dim, 1),
        ];
        let mut offset = 0;
        let blocks = shapes
            .iter()
            .map(|&(name, rows, cols)| {
                let b = Block {
                    name: name.to_string(),
                    offset,
                    rows,
                    cols,
                };
                offset += rows * cols;
                b
            })
            .collect();
        Layout { blocks }
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub blocks: Vec<Block>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.blocks
            .last()
            .map_or(0, |b| b.offset + b.rows * b.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, name: &str) -> &Block {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .unwrap_or_else(|| panic!("no block named {name}"))
    }
}

// Block indices into `Layout::blocks`.
const LSTM_W: usize = 0;
const LSTM_U: usize = 1;
const LSTM_B: usize = 2;
const HIDDEN_W: usize = 3;
const HIDDEN_B: usize = 4;
const OUT_W: usize = 5;
const OUT_B: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub spec: NetSpec,
    pub values: Vec<f64>,
}

impl NetParams {
    pub fn zeros(spec: NetSpec) -> Self {
        NetParams {
            spec,
            values: vec![0.0; spec.param_count()],
        }
    }

    fn offsets(&self) -> [usize; 7] {
        let l = self.spec.layout();
        std::array::from_fn(|i| l.blocks[i].offset)
    }
}

/// Glorot-uniform weights, zero biases except a forget-gate bias of 1.
pub fn init_params<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> NetParams {
    let layout = spec.layout();
    let mut values = vec![0.0; layout.len()];
    let h = spec.lstm_units;
    let fans = [
        (LSTM_W, spec.input_dim, 4 * h),
        (LSTM_U, h, 4 * h),
        (HIDDEN_W, h, spec.hidden_units),
        (OUT_W, spec.hidden_units, spec.output_dim),
    ];
    for (idx, fan_in, fan_out) in fans {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut values[layout.blocks[idx].range()] {
            *v = rng.random_range(-bound..bound);
        }
    }
    let b = layout.blocks[LSTM_B].offset;
    for v in &mut values[b + h..b + 2 * h] {
        *v = 1.0;
    }
    NetParams { spec, values }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(units: usize) -> Self {
        LstmState {
            hidden: vec![0.0; units],
            cell: vec![0.0; units],
        }
    }
}

#[derive(Debug, Clone)]
struct StepTape {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, `4H`: input, forget, candidate, output.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Intermediates of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    steps: Vec<StepTape>,
    h_last: Vec<f64>,
    relu: Vec<f64>,
    hidden: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dot product with four independent accumulators; fixed summation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_inputs<S: AsRef<[f64]>>(params: &NetParams, seq: &[S], state: &LstmState) -> Result<()> {
    let spec = &params.spec;
    if params.values.len() != spec.param_count() {
        return Err(Error::Contract(format!(
            "parameter vector has {} values, layout needs {}",
            params.values.len(),
            spec.param_count()
        )));
    }
    if seq.is_empty() {
        return Err(Error::Contract("input sequence is empty".into()));
    }
    for (t, x) in seq.iter().enumerate() {
        if x.as_ref().len() != spec.input_dim {
            return Err(Error::Contract(format!(
                "input {t} has length {}, expected {}",
                x.as_ref().len(),
                spec.input_dim
            )));
        }
    }
    if state.hidden.len() != spec.lstm_units || state.cell.len() != spec.lstm_units {
        return Err(Error::Contract("LSTM state size does not match the network".into()));
    }
    Ok(())
}

/// One LSTM step in place; writes the activated gates to `gates`.
fn lstm_step(params: &NetParams, offs: &[usize; 7], x: &[f64], h: &mut [f64], c: &mut [f64], gates: &mut [f64]) {
    let spec = &params.spec;
    let (nh, ni) = (spec.lstm_units, spec.input_dim);
    let p = &params.values;
    for r in 0..4 * nh {
        let w = &p[offs[LSTM_W] + r * ni..offs[LSTM_W] + (r + 1) * ni];
        let u = &p[offs[LSTM_U] + r * nh..offs[LSTM_U] + (r + 1) * nh];
        gates[r] = p[offs[LSTM_B] + r] + dot(w, x) + dot(u, h);
    }
    for k in 0..nh {
        let i = sigmoid(gates[k]);
        let f = sigmoid(gates[nh + k]);
        let g = gates[2 * nh + k].tanh();
        let o = sigmoid(gates[3 * nh + k]);
        gates[k] = i;
        gates[nh + k] = f;
        gates[2 * nh + k] = g;
        gates[3 * nh + k] = o;
        c[k] = f * c[k] + i * g;
        h[k] = o * c[k].tanh();
    }
}

fn head(params: &NetParams, offs: &[usize; 7], h_last: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let spec = &params.spec;
    let p = &params.values;
    let (nh, nd) = (spec.lstm_units, spec.hidden_units);
    let relu: Vec<f64> = h_last.iter().map(|&v| v.max(0.0)).collect();
    let hidden: Vec<f64> = (0..nd)
        .map(|d| p[offs[HIDDEN_B] + d] + dot(&p[offs[HIDDEN_W] + d * nh..offs[HIDDEN_W] + (d + 1) * nh], &relu))
        .collect();
    let q: Vec<f64> = (0..spec.output_dim)
        .map(|o| p[offs[OUT_B] + o] + dot(&p[offs[OUT_W] + o * nd..offs[OUT_W] + (o + 1) * nd], &hidden))
        .collect();
    (relu, hidden, q)
}

/// Runs the sequence from `initial` and returns the Q-values after the last
/// input, the final recurrent state and a tape for [`backward`].
pub fn forward<S: AsRef<[f64]>>(
    params: &NetParams,
    seq: &[S],
    initial: &LstmState,
) -> Result<(Vec<f64>, LstmState, Tape)> {
    check_inputs(params, seq, initial)?;
    let offs = params.offsets();
    let nh = params.spec.lstm_units;
    let mut h = initial.hidden.clone();
    let mut c = initial.cell.clone();
    let mut steps = Vec::with_capacity(seq.len());
    for x in seq {
        let x = x.as_ref();
        let h_prev = h.clone();
        let c_prev = c.clone();
        let mut gates = vec![0.0; 4 * nh];
        lstm_step(params, &offs, x, &mut h, &mut c, &mut gates);
        steps.push(StepTape {
            x: x.to_vec(),
            h_prev,
            c_prev,
            gates,
            tanh_c: c.iter().map(|v| v.tanh()).collect(),
        });
    }
    let (relu, hidden, q) = head(params, &offs, &h);
    let tape = Tape {
        steps,
        h_last: h.clone(),
        relu,
        hidden,
    };
    Ok((q, LstmState { hidden: h, cell: c }, tape))
}

/// Forward pass without recording a tape.
pub fn predict<S: AsRef<[f64]>>(params: &NetParams, seq: &[S], initial: &LstmState) -> Result<(Vec<f64>, LstmState)> {
    check_inputs(params, seq, initial)?;
    let offs = params.offsets();
    let mut h = initial.hidden.clone();
    let mut c = initial.cell.clone();
    let mut gates = vec![0.0; 4 * params.spec.lstm_units];
    for x in seq {
        lstm_step(params, &offs, x.as_ref(), &mut h, &mut c, &mut gates);
    }
    let (_, _, q) = head(params, &offs, &h);
    Ok((q, LstmState { hidden: h, cell: c }))
}

/// Gradient of `d_q . q` with respect to every parameter.
pub fn backward(params: &NetParams, tape: &Tape, d_q: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; params.values.len()];
    backward_into(params, tape, d_q, &mut grad);
    grad
}

/// Like [`backward`] but accumulates into `grad`.
pub fn backward_into(params: &NetParams, tape: &Tape, d_q: &[f64], grad: &mut [f64]) {
    let spec = &params.spec;
    assert_eq!(d_q.len(), spec.output_dim, "d_q length must equal output_dim");
    assert_eq!(grad.len(), params.values.len());
    let offs = params.offsets();
    let p = &params.values;
    let (ni, nh, nd, no) = (spec.input_dim, spec.lstm_units, spec.hidden_units, spec.output_dim);

    // Output layer.
    let mut d_hidden = vec![0.0; nd];
    for o in 0..no {
        let g = d_q[o];
        grad[offs[OUT_B] + o] += g;
        axpy(g, &tape.hidden, &mut grad[offs[OUT_W] + o * nd..offs[OUT_W] + (o + 1) * nd]);
        axpy(g, &p[offs[OUT_W] + o * nd..offs[OUT_W] + (o + 1) * nd], &mut d_hidden);
    }

    // Hidden linear layer.
    let mut d_relu = vec![0.0; nh];
    for d in 0..nd {
        let g = d_hidden[d];
        grad[offs[HIDDEN_B] + d] += g;
        axpy(g, &tape.relu, &mut grad[offs[HIDDEN_W] + d * nh..offs[HIDDEN_W] + (d + 1) * nh]);
        axpy(g, &p[offs[HIDDEN_W] + d * nh..offs[HIDDEN_W] + (d + 1) * nh], &mut d_relu);
    }

    // ReLU on the last LSTM output.
    let mut dh: Vec<f64> = d_relu
        .iter()
        .zip(&tape.h_last)
        .map(|(&g, &h)| if h > 0.0 { g } else { 0.0 })
        .collect();
    let mut dc = vec![0.0; nh];
    let mut dz = vec![0.0; 4 * nh];

    for step in tape.steps.iter().rev() {
        let gt = &step.gates;
        for k in 0..nh {
            let (i, f, g, o) = (gt[k], gt[nh + k], gt[2 * nh + k], gt[3 * nh + k]);
            let tc = step.tanh_c[k];
            let d_o = dh[k] * tc;
            let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dck * g * i * (1.0 - i);
            dz[nh + k] = dck * step.c_prev[k] * f * (1.0 - f);
            dz[2 * nh + k] = dck * i * (1.0 - g * g);
            dz[3 * nh + k] = d_o * o * (1.0 - o);
            dc[k] = dck * f;
        }
        let mut dh_prev = vec![0.0; nh];
        for r in 0..4 * nh {
            let g = dz[r];
            if g == 0.0 {
                continue;
            }
            grad[offs[LSTM_B] + r] += g;
            axpy(g, &step.x, &mut grad[offs[LSTM_W] + r * ni..offs[LSTM_W] + (r + 1) * ni]);
            axpy(g, &step.h_prev, &mut grad[offs[LSTM_U] + r * nh..offs[LSTM_U] + (r + 1) * nh]);
            axpy(g, &p[offs[LSTM_U] + r * nh..offs[LSTM_U] + (r + 1) * nh], &mut dh_prev);
        }
        dh = dh_prev;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected adaptive-moment update.
pub fn optimizer_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// On-disk form of a network: spec, layout table and flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetCheckpoint {
    pub spec: NetSpec,
    pub layout: Layout,
    pub params: Vec<f64>,
}

impl NetCheckpoint {
    pub fn from_params(p: &NetParams) -> Self {
        NetCheckpoint {
            spec: p.spec,
            layout: p.spec.layout(),
            params: p.values.clone(),
        }
    }

    pub fn into_params(self) -> Result<NetParams> {
        self.spec.validate()?;
        if self.layout != self.spec.layout() {
            return Err(Error::Contract("checkpoint layout does not match its spec".into()));
        }
        if self.params.len() != self.layout.len() {
            return Err(Error::Contract(format!(
                "checkpoint has {} parameters, layout needs {}",
                self.params.len(),
                self.layout.len()
            )));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("checkpoint contains non-finite parameters".into()));
        }
        Ok(NetParams {
            spec: self.spec,
            values: self.params,
        })
    }
}

pub fn save_params(p: &NetParams, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&NetCheckpoint::from_params(p)).expect("serializable");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<NetParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: NetCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    ck.into_params()
}
