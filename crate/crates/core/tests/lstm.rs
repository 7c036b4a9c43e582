use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use t2g_core::lstm::{
    dataset_loss, grad_check, gradients, lstm_fit, make_sequences, LstmLayer, LstmModel,
    LstmParams, LstmShape, Loss,
};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weight `(r, c)` of a row-major matrix with `cols` columns.
fn at(w: &[f64], r: usize, c: usize, cols: usize) -> f64 {
    w[r * cols + c]
}

/// One layer over a sequence, unit by unit, straight from the gate equations.
fn scalar_layer(l: &LstmLayer, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (h, n) = (l.units, l.n_input);
    let mut m_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut out = Vec::new();
    for x in xs {
        let mut c = vec![0.0; h];
        let mut m = vec![0.0; h];
        let mut i_gate = vec![0.0; h];
        let mut f_gate = vec![0.0; h];
        for u in 0..h {
            let mut ai = l.b_i[u];
            let mut af = l.b_f[u];
            let mut ag = l.b_c[u];
            for j in 0..n {
                ai += at(&l.w_ix, u, j, n) * x[j];
                af += at(&l.w_fx, u, j, n) * x[j];
                ag += at(&l.w_cx, u, j, n) * x[j];
            }
            for j in 0..h {
                ai += at(&l.w_im, u, j, h) * m_prev[j] + at(&l.w_ic, u, j, h) * c_prev[j];
                af += at(&l.w_fm, u, j, h) * m_prev[j] + at(&l.w_fc, u, j, h) * c_prev[j];
                ag += at(&l.w_cm, u, j, h) * m_prev[j];
            }
            i_gate[u] = sig(ai);
            f_gate[u] = sig(af);
            c[u] = f_gate[u] * c_prev[u] + i_gate[u] * ag.tanh();
        }
        for u in 0..h {
            let mut ao = l.b_o[u];
            for j in 0..n {
                ao += at(&l.w_ox, u, j, n) * x[j];
            }
            for j in 0..h {
                ao += at(&l.w_om, u, j, h) * m_prev[j] + at(&l.w_oc, u, j, h) * c[j];
            }
            m[u] = sig(ao) * c[u].tanh();
        }
        out.push(m.clone());
        m_prev = m;
        c_prev = c;
    }
    out
}

fn scalar_forward(model: &LstmModel, window: &[Vec<f64>]) -> f64 {
    let mut seq: Vec<Vec<f64>> = window
        .iter()
        .map(|r| {
            r.iter()
                .zip(&model.feature_mean)
                .zip(&model.feature_std)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();
    for layer in &model.layers {
        seq = scalar_layer(layer, &seq);
    }
    let top = seq.last().unwrap();
    let units = top.len();
    let mut y = model.b_y;
    for d in 0..model.dense_units {
        let mut a = model.b_z[d];
        for u in 0..units {
            a += at(&model.w_zm, d, u, units) * top[u];
        }
        y += model.w_ym[d] * a.max(0.0);
    }
    y
}

fn random_model(seed: u64, shape: LstmShape, lag: usize) -> LstmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = LstmModel::random(shape, lag, &mut rng);
    // nonzero biases and standardization so every term is exercised
    for layer in &mut m.layers {
        for b in [&mut layer.b_i, &mut layer.b_f, &mut layer.b_c, &mut layer.b_o] {
            b.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
    }
    m.b_z.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.5));
    m.b_y = rng.random_range(-1.0..1.0);
    m.feature_mean = (0..shape.n_input).map(|_| rng.random_range(-1.0..1.0)).collect();
    m.feature_std = (0..shape.n_input).map(|_| rng.random_range(0.5..2.0)).collect();
    m
}

fn random_rows(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let rows = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (rows, y)
}

#[test]
fn forward_matches_scalar_oracle() {
    for seed in 0..100 {
        let layers = 1 + (seed % 2) as usize;
        let shape = LstmShape { n_input: 4, units: 5, layers, dense_units: 3 };
        let m = random_model(seed, shape, 6);
        let (rows, _) = random_rows(seed, 6, 4);
        let got = m.forward(&rows).unwrap();
        let want = scalar_forward(&m, &rows);
        assert!((got - want).abs() <= 1e-12, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    for (seed, layers) in [(1, 1), (2, 2), (3, 1), (4, 2)] {
        let shape = LstmShape { n_input: 3, units: 4, layers, dense_units: 3 };
        let m = random_model(seed, shape, 3);
        let (rows, y) = random_rows(seed, 8, 3);
        let data = make_sequences(&rows, &y, 3).unwrap();
        let batch: Vec<usize> = (0..data.len()).collect();
        let err = grad_check(&m, &data, &batch, 1e-5).unwrap();
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        let coarse = grad_check(&m, &data, &batch, 2e-5).unwrap();
        assert!(coarse < 1e-3);
    }
}

#[test]
fn identical_units_get_identical_gradients() {
    let shape = LstmShape { n_input: 2, units: 3, layers: 1, dense_units: 2 };
    let mut m = LstmModel::zeros(shape, 3);
    for t in m.tensors_mut() {
        t.fill(0.3);
    }
    let rows = vec![vec![0.0, 0.0]; 3];
    let data = make_sequences(&rows, &[1.0, 2.0, 3.0], 3).unwrap();
    let g = gradients(&m, &data, &[0], Loss::Mse).unwrap();
    let w = &g.layers[0].w_ix;
    for u in 1..3 {
        assert_eq!(w[u * 2..u * 2 + 2], w[0..2]);
    }
}

#[test]
fn constant_target_is_learned() {
    let (rows, _) = random_rows(9, 120, 3);
    let y = vec![42.0; rows.len()];
    let data = make_sequences(&rows, &y, 3).unwrap();
    let params = LstmParams { units: 4, dense_units: 4, lag: 3, seed: 5, ..Default::default() };
    let fit = lstm_fit(&data, &params).unwrap();
    let mae = dataset_loss(&fit.model, &data, Loss::Mae).unwrap();
    assert!(mae < 0.5, "{mae}");
}

#[test]
fn fit_returns_best_checkpoint_and_is_deterministic() {
    let (rows, _) = random_rows(3, 150, 3);
    let y: Vec<f64> = rows.iter().map(|r| 20.0 + 5.0 * r[0] - 3.0 * r[1]).collect();
    let data = make_sequences(&rows, &y, 4).unwrap();
    let params = LstmParams {
        units: 6,
        dense_units: 5,
        lag: 4,
        epochs: 30,
        seed: 11,
        ..Default::default()
    };
    let a = lstm_fit(&data, &params).unwrap();
    let b = lstm_fit(&data, &params).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
    let initial = a.history[0].val_loss;
    assert!(a.best_val_loss <= initial);
    assert!(a.history.iter().all(|h| h.val_loss >= a.best_val_loss));
    assert_eq!(a.n_train + a.n_val, data.len());

    let with_dropout = LstmParams { dropout: 0.3, layers: 2, ..params };
    let c = lstm_fit(&data, &with_dropout).unwrap();
    let d = lstm_fit(&data, &with_dropout).unwrap();
    assert_eq!(c.model, d.model);
}

#[test]
fn model_json_round_trip() {
    let shape = LstmShape { n_input: 3, units: 4, layers: 2, dense_units: 2 };
    let m = random_model(8, shape, 2);
    let json = serde_json::to_string(&m).unwrap();
    let back: LstmModel = serde_json::from_str(&json).unwrap();
    back.validate().unwrap();
    let (rows, _) = random_rows(8, 2, 3);
    assert_eq!(back.forward(&rows).unwrap(), m.forward(&rows).unwrap());
}
