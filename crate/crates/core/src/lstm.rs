//! LSTM regressor with peephole connections, trained by backpropagation
//! through time.
//!
//! Per step `k` each layer computes
//!
//! ```text
//! i = sig(W_ix x + W_im m' + W_ic c' + b_i)
//! f = sig(W_fx x + W_fm m' + W_fc c' + b_f)
//! c = f * c' + i * tanh(W_cx x + W_cm m' + b_c)
//! o = sig(W_ox x + W_om m' + W_oc c + b_o)
//! m = o * tanh(c)
//! ```
//!
//! where `m'`, `c'` are the previous step's states (zero at the start). A
//! second layer reads the first layer's `m` sequence. The last `m` of the top
//! layer feeds a ReLU dense layer `z`, and the output is `y = W_ym z + b_y`.
//! Dropout (inverted, training only) is applied to every layer's `m` output.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{param_f64, param_usize, ParamSet};

/// Windows of `lag` consecutive rows ending at `ends`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub rows: Vec<Vec<f64>>,
    pub row_targets: Vec<f64>,
    pub lag: usize,
    /// Index of each window's last row, ascending.
    pub ends: Vec<usize>,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    pub fn window(&self, n: usize) -> &[Vec<f64>] {
        let end = self.ends[n];
        &self.rows[end + 1 - self.lag..=end]
    }

    /// Target of window `n`: the tabular target of its last row.
    pub fn target(&self, n: usize) -> f64 {
        self.row_targets[self.ends[n]]
    }

    pub fn targets(&self) -> Vec<f64> {
        self.ends.iter().map(|&e| self.row_targets[e]).collect()
    }

    /// Same rows, only the windows at positions `keep`.
    pub fn subset(&self, keep: &[usize]) -> SequenceDataset {
        SequenceDataset {
            ends: keep.iter().map(|&n| self.ends[n]).collect(),
            ..self.clone()
        }
    }
}

/// All sliding windows of `lag` rows: `rows - lag + 1` of them.
pub fn make_sequences(rows: &[Vec<f64>], targets: &[f64], lag: usize) -> Result<SequenceDataset> {
    if rows.len() != targets.len() {
        return Err(Error::Shape {
            expected: rows.len(),
            got: targets.len(),
        });
    }
    if lag < 1 {
        return Err(Error::InvalidParam("lag must be at least 1".into()));
    }
    if rows.len() < lag {
        return Err(Error::TooFewRows(format!(
            "{} rows cannot form a window of {lag}",
            rows.len()
        )));
    }
    Ok(SequenceDataset {
        rows: rows.to_vec(),
        row_targets: targets.to_vec(),
        lag,
        ends: (lag - 1..rows.len()).collect(),
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += W v` for row-major `W` with `out.len()` rows.
fn matvec_add(out: &mut [f64], w: &[f64], v: &[f64]) {
    let cols = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ d` for row-major `W` with `d.len()` rows.
fn mat_t_vec_add(out: &mut [f64], w: &[f64], d: &[f64]) {
    let cols = out.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * dr;
        }
    }
}

/// `g += d vᵀ`.
fn outer_add(g: &mut [f64], d: &[f64], v: &[f64]) {
    let cols = v.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        for (a, b) in g[r * cols..(r + 1) * cols].iter_mut().zip(v) {
            *a += dr * b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub n_input: usize,
    pub units: usize,
    pub w_ix: Vec<f64>,
    pub w_im: Vec<f64>,
    pub w_ic: Vec<f64>,
    pub b_i: Vec<f64>,
    pub w_fx: Vec<f64>,
    pub w_fm: Vec<f64>,
    pub w_fc: Vec<f64>,
    pub b_f: Vec<f64>,
    pub w_cx: Vec<f64>,
    pub w_cm: Vec<f64>,
    pub b_c: Vec<f64>,
    pub w_ox: Vec<f64>,
    pub w_om: Vec<f64>,
    pub w_oc: Vec<f64>,
    pub b_o: Vec<f64>,
}

pub const LAYER_TENSORS: [&str; 15] = [
    "w_ix", "w_im", "w_ic", "b_i", "w_fx", "w_fm", "w_fc", "b_f", "w_cx", "w_cm", "b_c", "w_ox",
    "w_om", "w_oc", "b_o",
];

impl LstmLayer {
    pub fn zeros(n_input: usize, units: usize) -> Self {
        let x = vec![0.0; units * n_input];
        let m = vec![0.0; units * units];
        let b = vec![0.0; units];
        LstmLayer {
            n_input,
            units,
            w_ix: x.clone(),
            w_im: m.clone(),
            w_ic: m.clone(),
            b_i: b.clone(),
            w_fx: x.clone(),
            w_fm: m.clone(),
            w_fc: m.clone(),
            b_f: b.clone(),
            w_cx: x.clone(),
            w_cm: m.clone(),
            b_c: b.clone(),
            w_ox: x,
            w_om: m.clone(),
            w_oc: m,
            b_o: b,
        }
    }

    fn tensors(&self) -> [&Vec<f64>; 15] {
        [
            &self.w_ix, &self.w_im, &self.w_ic, &self.b_i, &self.w_fx, &self.w_fm, &self.w_fc,
            &self.b_f, &self.w_cx, &self.w_cm, &self.b_c, &self.w_ox, &self.w_om, &self.w_oc,
            &self.b_o,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 15] {
        [
            &mut self.w_ix, &mut self.w_im, &mut self.w_ic, &mut self.b_i, &mut self.w_fx,
            &mut self.w_fm, &mut self.w_fc, &mut self.b_f, &mut self.w_cx, &mut self.w_cm,
            &mut self.b_c, &mut self.w_ox, &mut self.w_om, &mut self.w_oc, &mut self.b_o,
        ]
    }

    fn check(&self) -> bool {
        let (h, n) = (self.units, self.n_input);
        self.tensors().iter().zip(LAYER_TENSORS).all(|(t, name)| {
            let want = if name.starts_with('b') {
                h
            } else if name.ends_with('x') {
                h * n
            } else {
                h * h
            };
            t.len() == want
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub n_input: usize,
    pub lag: usize,
    pub layers: Vec<LstmLayer>,
    pub dense_units: usize,
    /// Dense weights, `dense_units × units` of the top layer.
    pub w_zm: Vec<f64>,
    pub b_z: Vec<f64>,
    pub w_ym: Vec<f64>,
    pub b_y: f64,
    pub dropout: f64,
    /// Standardization applied to every input row.
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

/// Architecture of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmShape {
    pub n_input: usize,
    pub units: usize,
    pub layers: usize,
    pub dense_units: usize,
}

impl LstmModel {
    /// All-zero model with identity standardization.
    pub fn zeros(shape: LstmShape, lag: usize) -> Self {
        let LstmShape {
            n_input,
            units,
            layers,
            dense_units,
        } = shape;
        LstmModel {
            n_input,
            lag,
            layers: (0..layers)
                .map(|l| LstmLayer::zeros(if l == 0 { n_input } else { units }, units))
                .collect(),
            dense_units,
            w_zm: vec![0.0; dense_units * units],
            b_z: vec![0.0; dense_units],
            w_ym: vec![0.0; dense_units],
            b_y: 0.0,
            dropout: 0.0,
            feature_mean: vec![0.0; n_input],
            feature_std: vec![1.0; n_input],
        }
    }

    /// Glorot-uniform weights, zero biases except a forget bias of one.
    pub fn random<R: Rng>(shape: LstmShape, lag: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(shape, lag);
        let mut glorot = |w: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
        };
        for layer in &mut m.layers {
            let (n, h) = (layer.n_input, layer.units);
            for w in [&mut layer.w_ix, &mut layer.w_fx, &mut layer.w_cx, &mut layer.w_ox] {
                glorot(w, n, h);
            }
            for w in [
                &mut layer.w_im, &mut layer.w_ic, &mut layer.w_fm, &mut layer.w_fc,
                &mut layer.w_cm, &mut layer.w_om, &mut layer.w_oc,
            ] {
                glorot(w, h, h);
            }
            layer.b_f.fill(1.0);
        }
        glorot(&mut m.w_zm, shape.units, shape.dense_units);
        glorot(&mut m.w_ym, shape.dense_units, 1);
        m
    }

    pub fn shape(&self) -> LstmShape {
        LstmShape {
            n_input: self.n_input,
            units: self.layers.first().map_or(0, |l| l.units),
            layers: self.layers.len(),
            dense_units: self.dense_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.shape();
        let ok = !self.layers.is_empty()
            && self.layers.iter().enumerate().all(|(l, layer)| {
                layer.units == s.units
                    && layer.n_input == if l == 0 { s.n_input } else { s.units }
                    && layer.check()
            })
            && self.w_zm.len() == s.dense_units * s.units
            && self.b_z.len() == s.dense_units
            && self.w_ym.len() == s.dense_units
            && self.feature_mean.len() == s.n_input
            && self.feature_std.len() == s.n_input
            && self.lag >= 1;
        if !ok {
            return Err(Error::Schema("inconsistent LSTM tensor shapes".into()));
        }
        if !(0.0..=0.5).contains(&self.dropout) {
            return Err(Error::InvalidParam("dropout must be in [0, 0.5]".into()));
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("LSTM weights".into()));
        }
        Ok(())
    }

    /// Names of the tensors returned by [`LstmModel::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.layers.len())
            .flat_map(|l| LAYER_TENSORS.iter().map(move |t| format!("layer{l}.{t}")))
            .collect();
        names.extend(["w_zm", "b_z", "w_ym", "b_y"].map(String::from));
        names
    }

    /// Every trainable tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            v.extend(l.tensors().into_iter().map(Vec::as_slice));
        }
        v.extend([
            self.w_zm.as_slice(),
            self.b_z.as_slice(),
            self.w_ym.as_slice(),
            std::slice::from_ref(&self.b_y),
        ]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            v.extend(l.tensors_mut().into_iter().map(Vec::as_mut_slice));
        }
        v.push(self.w_zm.as_mut_slice());
        v.push(self.b_z.as_mut_slice());
        v.push(self.w_ym.as_mut_slice());
        v.push(std::slice::from_mut(&mut self.b_y));
        v
    }

    fn zeros_like(&self) -> LstmModel {
        let mut g = self.clone();
        for t in g.tensors_mut() {
            t.fill(0.0);
        }
        g
    }

    fn standardize(&self, window: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        window
            .iter()
            .map(|row| {
                if row.len() != self.n_input {
                    return Err(Error::Shape {
                        expected: self.n_input,
                        got: row.len(),
                    });
                }
                Ok(row
                    .iter()
                    .zip(&self.feature_mean)
                    .zip(&self.feature_std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect())
            })
            .collect()
    }

    /// Prediction for one window of raw feature rows (any length ≥ 1).
    pub fn forward(&self, window: &[Vec<f64>]) -> Result<f64> {
        if window.is_empty() {
            return Err(Error::Shape {
                expected: self.lag,
                got: 0,
            });
        }
        let xs = self.standardize(window)?;
        Ok(self.run(&xs, None).y)
    }

    /// Predictions for rows `from..rows.len()`, each from the window of
    /// `lag` rows ending at it.
    pub fn predict_from(&self, rows: &[Vec<f64>], from: usize) -> Result<Vec<f64>> {
        if from + 1 < self.lag {
            return Err(Error::TooFewRows(format!(
                "row {from} has fewer than {} rows of history",
                self.lag
            )));
        }
        (from..rows.len())
            .map(|e| self.forward(&rows[e + 1 - self.lag..=e]))
            .collect()
    }

    /// Forward pass over standardized inputs; `masks` are per-layer dropout
    /// multipliers per step (training only).
    fn run(&self, xs: &[Vec<f64>], masks: Option<&[Vec<Vec<f64>>]>) -> Trace {
        let mut input: Vec<Vec<f64>> = xs.to_vec();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let h = layer.units;
            let mut steps = Vec::with_capacity(input.len());
            let (mut m_prev, mut c_prev) = (vec![0.0; h], vec![0.0; h]);
            let mut out = Vec::with_capacity(input.len());
            for (k, x) in input.iter().enumerate() {
                let mut a_i = layer.b_i.clone();
                matvec_add(&mut a_i, &layer.w_ix, x);
                matvec_add(&mut a_i, &layer.w_im, &m_prev);
                matvec_add(&mut a_i, &layer.w_ic, &c_prev);
                let mut a_f = layer.b_f.clone();
                matvec_add(&mut a_f, &layer.w_fx, x);
                matvec_add(&mut a_f, &layer.w_fm, &m_prev);
                matvec_add(&mut a_f, &layer.w_fc, &c_prev);
                let mut a_g = layer.b_c.clone();
                matvec_add(&mut a_g, &layer.w_cx, x);
                matvec_add(&mut a_g, &layer.w_cm, &m_prev);
                let i: Vec<f64> = a_i.iter().map(|&v| sigmoid(v)).collect();
                let f: Vec<f64> = a_f.iter().map(|&v| sigmoid(v)).collect();
                let g: Vec<f64> = a_g.iter().map(|v| v.tanh()).collect();
                let c: Vec<f64> = (0..h).map(|u| f[u] * c_prev[u] + i[u] * g[u]).collect();
                let mut a_o = layer.b_o.clone();
                matvec_add(&mut a_o, &layer.w_ox, x);
                matvec_add(&mut a_o, &layer.w_om, &m_prev);
                matvec_add(&mut a_o, &layer.w_oc, &c);
                let o: Vec<f64> = a_o.iter().map(|&v| sigmoid(v)).collect();
                let hc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
                let m: Vec<f64> = (0..h).map(|u| o[u] * hc[u]).collect();
                let dropped = match masks {
                    Some(ms) => m.iter().zip(&ms[l][k]).map(|(a, b)| a * b).collect(),
                    None => m.clone(),
                };
                out.push(dropped);
                steps.push(Step {
                    x: x.clone(),
                    m_prev: std::mem::replace(&mut m_prev, m),
                    c_prev: std::mem::replace(&mut c_prev, c.clone()),
                    i,
                    f,
                    g,
                    c,
                    o,
                    hc,
                });
            }
            layers.push(steps);
            input = out;
        }
        let top = input.last().expect("window is not empty").clone();
        let mut a_z = self.b_z.clone();
        matvec_add(&mut a_z, &self.w_zm, &top);
        let z: Vec<f64> = a_z.iter().map(|&v| v.max(0.0)).collect();
        let y = self.b_y + z.iter().zip(&self.w_ym).map(|(a, b)| a * b).sum::<f64>();
        Trace {
            layers,
            top,
            a_z,
            z,
            y,
        }
    }

    /// Accumulate `dy`-scaled gradients of one forward trace into `grad`.
    fn backward(
        &self,
        trace: &Trace,
        masks: Option<&[Vec<Vec<f64>>]>,
        dy: f64,
        grad: &mut LstmModel,
    ) {
        grad.b_y += dy;
        let mut da_z = vec![0.0; self.dense_units];
        for d in 0..self.dense_units {
            grad.w_ym[d] += dy * trace.z[d];
            if trace.a_z[d] > 0.0 {
                da_z[d] = dy * self.w_ym[d];
            }
        }
        outer_add(&mut grad.w_zm, &da_z, &trace.top);
        for (g, d) in grad.b_z.iter_mut().zip(&da_z) {
            *g += d;
        }
        let steps = trace.layers[0].len();
        let h = self.layers[0].units;
        // gradient w.r.t. each step's (dropped-out) output of the current layer
        let mut d_out = vec![vec![0.0; h]; steps];
        mat_t_vec_add(&mut d_out[steps - 1], &self.w_zm, &da_z);

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let gl = &mut grad.layers[l];
            let trace_l = &trace.layers[l];
            if let Some(ms) = masks {
                for (d, m) in d_out.iter_mut().zip(&ms[l]) {
                    d.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
                }
            }
            let mut d_in = vec![vec![0.0; layer.n_input]; steps];
            let (mut dm_rec, mut dc_rec) = (vec![0.0; h], vec![0.0; h]);
            for k in (0..steps).rev() {
                let s = &trace_l[k];
                let dm: Vec<f64> = (0..h).map(|u| d_out[k][u] + dm_rec[u]).collect();
                let da_o: Vec<f64> = (0..h)
                    .map(|u| dm[u] * s.hc[u] * s.o[u] * (1.0 - s.o[u]))
                    .collect();
                let mut dc: Vec<f64> = (0..h)
                    .map(|u| dc_rec[u] + dm[u] * s.o[u] * (1.0 - s.hc[u] * s.hc[u]))
                    .collect();
                mat_t_vec_add(&mut dc, &layer.w_oc, &da_o);
                let da_i: Vec<f64> = (0..h)
                    .map(|u| dc[u] * s.g[u] * s.i[u] * (1.0 - s.i[u]))
                    .collect();
                let da_f: Vec<f64> = (0..h)
                    .map(|u| dc[u] * s.c_prev[u] * s.f[u] * (1.0 - s.f[u]))
                    .collect();
                let da_g: Vec<f64> = (0..h)
                    .map(|u| dc[u] * s.i[u] * (1.0 - s.g[u] * s.g[u]))
                    .collect();

                outer_add(&mut gl.w_ix, &da_i, &s.x);
                outer_add(&mut gl.w_im, &da_i, &s.m_prev);
                outer_add(&mut gl.w_ic, &da_i, &s.c_prev);
                outer_add(&mut gl.w_fx, &da_f, &s.x);
                outer_add(&mut gl.w_fm, &da_f, &s.m_prev);
                outer_add(&mut gl.w_fc, &da_f, &s.c_prev);
                outer_add(&mut gl.w_cx, &da_g, &s.x);
                outer_add(&mut gl.w_cm, &da_g, &s.m_prev);
                outer_add(&mut gl.w_ox, &da_o, &s.x);
                outer_add(&mut gl.w_om, &da_o, &s.m_prev);
                outer_add(&mut gl.w_oc, &da_o, &s.c);
                for u in 0..h {
                    gl.b_i[u] += da_i[u];
                    gl.b_f[u] += da_f[u];
                    gl.b_c[u] += da_g[u];
                    gl.b_o[u] += da_o[u];
                }

                if l > 0 {
                    let dx = &mut d_in[k];
                    mat_t_vec_add(dx, &layer.w_ix, &da_i);
                    mat_t_vec_add(dx, &layer.w_fx, &da_f);
                    mat_t_vec_add(dx, &layer.w_cx, &da_g);
                    mat_t_vec_add(dx, &layer.w_ox, &da_o);
                }
                dm_rec.fill(0.0);
                mat_t_vec_add(&mut dm_rec, &layer.w_im, &da_i);
                mat_t_vec_add(&mut dm_rec, &layer.w_fm, &da_f);
                mat_t_vec_add(&mut dm_rec, &layer.w_cm, &da_g);
                mat_t_vec_add(&mut dm_rec, &layer.w_om, &da_o);
                dc_rec = (0..h).map(|u| dc[u] * s.f[u]).collect();
                mat_t_vec_add(&mut dc_rec, &layer.w_ic, &da_i);
                mat_t_vec_add(&mut dc_rec, &layer.w_fc, &da_f);
            }
            d_out = d_in;
        }
    }
}

struct Step {
    x: Vec<f64>,
    m_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    o: Vec<f64>,
    hc: Vec<f64>,
}

struct Trace {
    layers: Vec<Vec<Step>>,
    top: Vec<f64>,
    a_z: Vec<f64>,
    z: Vec<f64>,
    y: f64,
}

pub fn lstm_forward(model: &LstmModel, window: &[Vec<f64>]) -> Result<f64> {
    model.forward(window)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mae,
    Mse,
}

impl Loss {
    fn value(self, residual: f64) -> f64 {
        match self {
            Loss::Mae => residual.abs(),
            Loss::Mse => residual * residual,
        }
    }

    /// Derivative w.r.t. the prediction; the MAE subgradient is 0 at 0.
    fn slope(self, residual: f64) -> f64 {
        match self {
            Loss::Mae if residual == 0.0 => 0.0,
            Loss::Mae => residual.signum(),
            Loss::Mse => 2.0 * residual,
        }
    }
}

/// Mean loss of `model` over the windows of `data` (no dropout).
pub fn dataset_loss(model: &LstmModel, data: &SequenceDataset, loss: Loss) -> Result<f64> {
    let mut total = 0.0;
    for n in 0..data.len() {
        total += loss.value(model.forward(data.window(n))? - data.target(n));
    }
    Ok(total / data.len() as f64)
}

/// Gradients of the mean `loss` over windows `batch` of `data` (no dropout).
pub fn gradients(
    model: &LstmModel,
    data: &SequenceDataset,
    batch: &[usize],
    loss: Loss,
) -> Result<LstmModel> {
    let mut grad = model.zeros_like();
    for &n in batch {
        let xs = model.standardize(data.window(n))?;
        let trace = model.run(&xs, None);
        let dy = loss.slope(trace.y - data.target(n)) / batch.len() as f64;
        model.backward(&trace, None, dy, &mut grad);
    }
    Ok(grad)
}

/// Largest relative difference between analytic gradients and central
/// finite differences of the mean squared error over `batch`.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`, so parameters with
/// vanishing gradients are compared on an absolute scale.
pub fn grad_check(
    model: &LstmModel,
    data: &SequenceDataset,
    batch: &[usize],
    epsilon: f64,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidParam("epsilon must be in [1e-6, 1e-3]".into()));
    }
    let analytic = gradients(model, data, batch, Loss::Mse)?;
    let sub = data.subset(batch);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let n_tensors = model.tensors().len();
    for t in 0..n_tensors {
        for j in 0..model.tensors()[t].len() {
            let orig = model.tensors()[t][j];
            probe.tensors_mut()[t][j] = orig + epsilon;
            let up = dataset_loss(&probe, &sub, Loss::Mse)?;
            probe.tensors_mut()[t][j] = orig - epsilon;
            let down = dataset_loss(&probe, &sub, Loss::Mse)?;
            probe.tensors_mut()[t][j] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.tensors()[t][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub units: usize,
    pub layers: usize,
    pub dropout: f64,
    pub dense_units: usize,
    pub lag: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    /// Share of windows, taken from the end, held out for early stopping.
    pub validation_frac: f64,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for LstmParams {
    fn default() -> Self {
        LstmParams {
            units: 32,
            layers: 1,
            dropout: 0.0,
            dense_units: 16,
            lag: 7,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            patience: 5,
            validation_frac: 0.2,
            loss: Loss::Mae,
            seed: 0,
        }
    }
}

impl LstmParams {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.units < 1 || self.dense_units < 1 {
            errs.push("units and dense_units must be at least 1");
        }
        if !(1..=2).contains(&self.layers) {
            errs.push("layers must be 1 or 2");
        }
        if !(0.0..=0.5).contains(&self.dropout) {
            errs.push("dropout must be in [0, 0.5]");
        }
        if self.lag < 1 || self.epochs < 1 || self.batch_size < 1 {
            errs.push("lag, epochs and batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            errs.push("learning_rate must be positive");
        }
        if !(self.validation_frac > 0.0 && self.validation_frac < 1.0) {
            errs.push("validation_frac must be in (0, 1)");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParam(errs.join("; ")))
        }
    }

    /// Overlay a set sampled from the LSTM search space.
    pub fn with_sample(&self, set: &ParamSet) -> Result<LstmParams> {
        let p = LstmParams {
            units: param_usize(set, "units")?,
            layers: param_usize(set, "layers")?,
            dropout: param_f64(set, "dropout")?,
            dense_units: param_usize(set, "dense_units")?,
            ..self.clone()
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmFit {
    /// Weights with the lowest validation loss, initial weights included.
    pub model: LstmModel,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Epoch 0 is the initialized model.
    pub history: Vec<EpochLog>,
    pub n_train: usize,
    pub n_val: usize,
}

impl LstmFit {
    /// Windows used for early stopping, in the order they were held out.
    pub fn split(data: &SequenceDataset, validation_frac: f64) -> Result<(SequenceDataset, SequenceDataset)> {
        let n = data.len();
        let n_val = ((validation_frac * n as f64).round() as usize).max(1);
        if n < 2 || n_val >= n {
            return Err(Error::TooFewRows(format!(
                "{n} windows are too few for a validation split"
            )));
        }
        let train: Vec<usize> = (0..n - n_val).collect();
        let val: Vec<usize> = (n - n_val..n).collect();
        Ok((data.subset(&train), data.subset(&val)))
    }
}

/// Train on the windows of `data` with Adam and early stopping.
///
/// The last `validation_frac` of the windows (chronologically) are held out.
/// Inputs are standardized with the mean and standard deviation of the rows
/// the training windows cover; the output bias starts at the median
/// training target.
pub fn lstm_fit(data: &SequenceDataset, params: &LstmParams) -> Result<LstmFit> {
    params.validate()?;
    if data.lag != params.lag {
        return Err(Error::InvalidParam(format!(
            "dataset lag {} differs from model lag {}",
            data.lag, params.lag
        )));
    }
    let n_input = data.rows.first().map_or(0, Vec::len);
    if n_input == 0 {
        return Err(Error::TooFewRows("LSTM needs at least one feature".into()));
    }
    if data.rows.iter().flatten().chain(&data.row_targets).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LSTM training data".into()));
    }
    let (train, val) = LstmFit::split(data, params.validation_frac)?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut shuffle_rng = init_rng.clone();
    shuffle_rng.set_stream(1);
    let mut dropout_rng = init_rng.clone();
    dropout_rng.set_stream(2);

    let shape = LstmShape {
        n_input,
        units: params.units,
        layers: params.layers,
        dense_units: params.dense_units,
    };
    let mut model = LstmModel::random(shape, params.lag, &mut init_rng);
    model.dropout = params.dropout;
    let (mean, std) = covered_row_stats(&train);
    model.feature_mean = mean;
    model.feature_std = std;
    let mut targets = train.targets();
    targets.sort_by(f64::total_cmp);
    model.b_y = median(&targets);

    let xs: Vec<Vec<Vec<f64>>> = (0..train.len())
        .map(|n| model.standardize(train.window(n)))
        .collect::<Result<_>>()?;
    let ys = train.targets();

    let mut adam = Adam::new(&model, params.learning_rate);
    let mut best = model.clone();
    let mut best_val = dataset_loss(&model, &val, params.loss)?;
    let mut history = vec![EpochLog {
        epoch: 0,
        train_loss: dataset_loss(&model, &train, params.loss)?,
        val_loss: best_val,
    }];
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let keep = 1.0 - params.dropout;

    for epoch in 1..=params.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(params.batch_size).enumerate() {
            let mut grad = model.zeros_like();
            for &n in batch {
                let masks = (params.dropout > 0.0).then(|| {
                    model
                        .layers
                        .iter()
                        .map(|l| {
                            (0..params.lag)
                                .map(|_| {
                                    (0..l.units)
                                        .map(|_| {
                                            if dropout_rng.random::<f64>() < keep {
                                                1.0 / keep
                                            } else {
                                                0.0
                                            }
                                        })
                                        .collect()
                                })
                                .collect()
                        })
                        .collect::<Vec<Vec<Vec<f64>>>>()
                });
                let trace = model.run(&xs[n], masks.as_deref());
                let r = trace.y - ys[n];
                if !r.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite prediction at epoch {epoch}, batch {b}"
                    )));
                }
                epoch_loss += params.loss.value(r);
                let dy = params.loss.slope(r) / batch.len() as f64;
                model.backward(&trace, masks.as_deref(), dy, &mut grad);
            }
            adam.step(&mut model, &grad);
        }
        let val_loss = dataset_loss(&model, &val, params.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        history.push(EpochLog {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= params.patience {
            break;
        }
    }
    Ok(LstmFit {
        model: best,
        best_epoch,
        best_val_loss: best_val,
        history,
        n_train: train.len(),
        n_val: val.len(),
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Mean and standard deviation of every row covered by a window; a zero
/// deviation is replaced by one.
fn covered_row_stats(data: &SequenceDataset) -> (Vec<f64>, Vec<f64>) {
    let p = data.rows[0].len();
    let mut covered = vec![false; data.rows.len()];
    for &e in &data.ends {
        covered[e + 1 - data.lag..=e].iter_mut().for_each(|c| *c = true);
    }
    let rows: Vec<&Vec<f64>> = data
        .rows
        .iter()
        .zip(&covered)
        .filter_map(|(r, &c)| c.then_some(r))
        .collect();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..p)
        .map(|j| {
            let s = (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-7;

    fn new(model: &LstmModel, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            lr,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, model: &mut LstmModel, grad: &LstmModel) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in model
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for j in 0..p.len() {
                m[j] = Self::BETA1 * m[j] + (1.0 - Self::BETA1) * g[j];
                v[j] = Self::BETA2 * v[j] + (1.0 - Self::BETA2) * g[j] * g[j];
                p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + Self::EPS);
            }
        }
    }
}
