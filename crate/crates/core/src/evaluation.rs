//! Chronological splitting, error metrics and report files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const DEFAULT_TRAIN_FRAC: f64 = 0.7;
/// Largest absolute error counted as a near miss, in seconds.
pub const NEAR_MISS_S: f64 = 2.0;

/// Deltas of a report against a baseline. MAE and RMSE are relative changes
/// in percent, EH and NM differences in percentage points. A relative delta
/// is `None` when the baseline value is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub d_mae_pct: Option<f64>,
    pub d_rmse_pct: Option<f64>,
    pub d_eh: f64,
    pub d_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_test: usize,
    pub mae_s: f64,
    pub rmse_s: f64,
    pub eh_pct: f64,
    pub nm_pct: f64,
    pub deltas: Option<Deltas>,
}

/// Split rows into the first `ceil(train_frac * n)` and the rest.
pub fn split_chronological(
    m: &FeatureMatrix,
    train_frac: f64,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let n_train = split_point(m.n_rows(), train_frac)?;
    Ok((m.slice_rows(0..n_train), m.slice_rows(n_train..m.n_rows())))
}

/// Number of training rows for `n` rows at `train_frac`.
pub fn split_point(n: usize, train_frac: f64) -> Result<usize> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidParam(format!(
            "train fraction must be in (0, 1), got {train_frac}"
        )));
    }
    let n_train = (train_frac * n as f64).ceil() as usize;
    if n < 2 || n_train >= n {
        return Err(Error::TooFewRows(format!(
            "{n} rows leave no test rows at train fraction {train_frac}"
        )));
    }
    Ok(n_train)
}

/// Round half away from zero.
pub fn round_prediction(v: f64) -> f64 {
    v.round()
}

/// MAE, RMSE, exact-hit and near-miss shares of rounded predictions.
pub fn compute_metrics(
    predictions: &[f64],
    truths: &[f64],
    baseline: Option<&MetricsReport>,
) -> Result<MetricsReport> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape {
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::TooFewRows("no predictions to score".into()));
    }
    if predictions.iter().chain(truths).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("predictions or truths".into()));
    }
    let n = truths.len() as f64;
    let (mut abs, mut sq, mut hits, mut near) = (0.0, 0.0, 0usize, 0usize);
    for (p, t) in predictions.iter().zip(truths) {
        let e = (round_prediction(*p) - t).abs();
        abs += e;
        sq += e * e;
        hits += usize::from(e == 0.0);
        near += usize::from(e <= NEAR_MISS_S);
    }
    let mut report = MetricsReport {
        n_test: truths.len(),
        mae_s: abs / n,
        rmse_s: (sq / n).sqrt(),
        eh_pct: 100.0 * hits as f64 / n,
        nm_pct: 100.0 * near as f64 / n,
        deltas: None,
    };
    if let Some(b) = baseline {
        report.deltas = Some(deltas(&report, b));
    }
    Ok(report)
}

fn deltas(r: &MetricsReport, b: &MetricsReport) -> Deltas {
    let rel = |v: f64, base: f64| (base != 0.0).then(|| (v - base) / base * 100.0);
    Deltas {
        d_mae_pct: rel(r.mae_s, b.mae_s),
        d_rmse_pct: rel(r.rmse_s, b.rmse_s),
        d_eh: r.eh_pct - b.eh_pct,
        d_nm: r.nm_pct - b.nm_pct,
    }
}

/// Scores of a model and a baseline on the same test rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub model: MetricsReport,
    pub baseline: MetricsReport,
    pub predictions: Vec<f64>,
    pub baseline_predictions: Vec<f64>,
}

/// Run both predictors over `test` and score the model against the baseline.
pub fn evaluate_model<M, B>(model: M, test: &FeatureMatrix, baseline: B) -> Result<Evaluation>
where
    M: FnOnce(&FeatureMatrix) -> Result<Vec<f64>>,
    B: FnOnce(&FeatureMatrix) -> Result<Vec<f64>>,
{
    let predictions = model(test)?;
    let baseline_predictions = baseline(test)?;
    let base = compute_metrics(&baseline_predictions, &test.targets, None)?;
    let model = compute_metrics(&predictions, &test.targets, Some(&base))?;
    Ok(Evaluation {
        model,
        baseline: base,
        predictions,
        baseline_predictions,
    })
}

pub const REPORT_HEADER: &str =
    "signal,model,n_test,mae_s,rmse_s,eh_pct,nm_pct,d_mae_pct,d_rmse_pct,d_eh,d_nm";

/// One report CSV row. Missing deltas are left empty.
pub fn report_row(signal: &str, model: &str, r: &MetricsReport) -> String {
    let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
    let d = r.deltas;
    format!(
        "{signal},{model},{},{},{},{},{},{},{},{},{}",
        r.n_test,
        fmt(r.mae_s),
        fmt(r.rmse_s),
        fmt(r.eh_pct),
        fmt(r.nm_pct),
        opt(d.and_then(|d| d.d_mae_pct)),
        opt(d.and_then(|d| d.d_rmse_pct)),
        opt(d.map(|d| d.d_eh)),
        opt(d.map(|d| d.d_nm)),
    )
}

/// Plot-ready `cycle,truth,prediction` CSV; predictions are written rounded.
pub fn plot_csv(cycles: &[usize], truths: &[f64], predictions: &[f64]) -> String {
    let mut s = String::from("cycle,truth,prediction\n");
    for ((c, t), p) in cycles.iter().zip(truths).zip(predictions) {
        s.push_str(&format!("{c},{t},{}\n", round_prediction(*p)));
    }
    s
}

fn fmt(v: f64) -> String {
    // avoid "-0.0000"
    let s = format!("{v:.4}");
    if s.trim_start_matches('-').trim_matches(['0', '.']).is_empty() {
        "0.0000".into()
    } else {
        s
    }
}
