//! Recursive feature elimination, chronological k-fold cross-validation and
//! seeded random hyperparameter search.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::ols_fit;
use crate::error::{Error, Result};
use crate::forest::{rf_fit, ForestParams};

pub const DEFAULT_FOLDS: usize = 5;

/// Weights used to rank columns during elimination.
#[derive(Debug, Clone, PartialEq)]
pub enum Ranker {
    /// Absolute OLS coefficients on standardized columns.
    Ols,
    /// Impurity importances of a forest.
    Forest(ForestParams),
}

/// Drop the lowest-ranked `step` columns at a time until `n_keep` remain.
///
/// Ties drop the highest column index first. Returns the kept column indices
/// in ascending order.
pub fn rfe(
    x: &[Vec<f64>],
    y: &[f64],
    n_keep: usize,
    ranker: &Ranker,
    step: usize,
) -> Result<Vec<usize>> {
    let p = x.first().map_or(0, Vec::len);
    if n_keep < 1 || n_keep > p {
        return Err(Error::InvalidParam(format!(
            "n_keep must be in 1..={p}, got {n_keep}"
        )));
    }
    if step < 1 {
        return Err(Error::InvalidParam("RFE step must be at least 1".into()));
    }
    let mut kept: Vec<usize> = (0..p).collect();
    while kept.len() > n_keep {
        let sub: Vec<Vec<f64>> = x
            .iter()
            .map(|r| kept.iter().map(|&j| r[j]).collect())
            .collect();
        let weights = rank_weights(&sub, y, ranker)?;
        let mut order: Vec<usize> = (0..kept.len()).collect();
        order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(b.cmp(&a)));
        let n_drop = step.min(kept.len() - n_keep);
        let mut drop = order[..n_drop].to_vec();
        drop.sort_unstable();
        for pos in drop.into_iter().rev() {
            kept.remove(pos);
        }
    }
    Ok(kept)
}

/// Per-column weights of `ranker` on `x`.
pub fn rank_weights(x: &[Vec<f64>], y: &[f64], ranker: &Ranker) -> Result<Vec<f64>> {
    match ranker {
        Ranker::Forest(params) => Ok(rf_fit(x, y, params)?.importances),
        Ranker::Ols => {
            let m = ols_fit(x, y)?;
            let n = x.len() as f64;
            Ok((0..m.coefficients.len())
                .map(|j| {
                    let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
                    let sd = (x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
                    (m.coefficients[j] * sd).abs()
                })
                .collect())
        }
    }
}

/// Contiguous chronological folds; the first `n % k` folds get one extra row.
pub fn fold_ranges(n: usize, k: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if k < 2 || n < k {
        return Err(Error::InvalidParam(format!(
            "need 2 <= k <= rows, got k={k} with {n} rows"
        )));
    }
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    Ok((0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScores {
    pub fold_mae: Vec<f64>,
    pub fold_mse: Vec<f64>,
    pub mean_mae: f64,
    pub mean_mse: f64,
}

/// k-fold cross-validation. `fit_eval(train, validation)` fits on the
/// training row indices and returns predictions for the validation rows.
/// Losses are computed on raw predictions.
pub fn kfold_cv<F>(y: &[f64], k: usize, mut fit_eval: F) -> Result<CvScores>
where
    F: FnMut(&[usize], &[usize]) -> Result<Vec<f64>>,
{
    let folds = fold_ranges(y.len(), k)?;
    let (mut fold_mae, mut fold_mse) = (Vec::with_capacity(k), Vec::with_capacity(k));
    for fold in folds {
        let val: Vec<usize> = fold.clone().collect();
        let train: Vec<usize> = (0..y.len()).filter(|i| !fold.contains(i)).collect();
        let pred = fit_eval(&train, &val)?;
        if pred.len() != val.len() {
            return Err(Error::Shape {
                expected: val.len(),
                got: pred.len(),
            });
        }
        let n = val.len() as f64;
        let errs = pred.iter().zip(&val).map(|(p, &i)| p - y[i]);
        fold_mae.push(errs.clone().map(f64::abs).sum::<f64>() / n);
        fold_mse.push(errs.map(|e| e * e).sum::<f64>() / n);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(CvScores {
        mean_mae: mean(&fold_mae),
        mean_mse: mean(&fold_mse),
        fold_mae,
        fold_mse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamSpec {
    /// Uniform integer in `low..=high`.
    Int { name: String, low: i64, high: i64 },
    /// Uniform real in `low..high`.
    Real { name: String, low: f64, high: f64 },
}

impl ParamSpec {
    pub fn name(&self) -> &str {
        match self {
            ParamSpec::Int { name, .. } | ParamSpec::Real { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
}

impl ParamValue {
    pub fn as_f64(self) -> f64 {
        match self {
            ParamValue::Int(v) => v as f64,
            ParamValue::Real(v) => v,
        }
    }
}

pub type ParamSet = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for p in &self.params {
            let ok = match p {
                ParamSpec::Int { low, high, .. } => low <= high,
                ParamSpec::Real { low, high, .. } => {
                    low.is_finite() && high.is_finite() && low <= high
                }
            };
            if !ok {
                return Err(Error::InvalidParam(format!("empty range for {}", p.name())));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> ParamSet {
        self.params
            .iter()
            .map(|p| {
                let v = match p {
                    ParamSpec::Int { low, high, .. } => ParamValue::Int(rng.random_range(*low..=*high)),
                    ParamSpec::Real { low, high, .. } if low == high => ParamValue::Real(*low),
                    ParamSpec::Real { low, high, .. } => ParamValue::Real(rng.random_range(*low..*high)),
                };
                (p.name().to_string(), v)
            })
            .collect()
    }

    pub fn forest() -> Self {
        SearchSpace {
            params: vec![
                int("n_estimators", 50, 200),
                int("max_depth", 3, 12),
                int("min_samples_split", 2, 6),
                real("min_weight_fraction_leaf", 0.0, 0.5),
            ],
        }
    }

    pub fn lstm() -> Self {
        SearchSpace {
            params: vec![
                int("units", 8, 256),
                int("layers", 1, 2),
                real("dropout", 0.0, 0.5),
                int("dense_units", 1, 50),
            ],
        }
    }
}

fn int(name: &str, low: i64, high: i64) -> ParamSpec {
    ParamSpec::Int { name: name.into(), low, high }
}

fn real(name: &str, low: f64, high: f64) -> ParamSpec {
    ParamSpec::Real { name: name.into(), low, high }
}

/// Integer parameter `name` from a sampled set.
pub fn param_usize(set: &ParamSet, name: &str) -> Result<usize> {
    match set.get(name) {
        Some(ParamValue::Int(v)) if *v >= 0 => Ok(*v as usize),
        Some(ParamValue::Real(v)) if *v >= 0.0 && v.fract() == 0.0 => Ok(*v as usize),
        _ => Err(Error::InvalidParam(format!("missing or invalid integer {name}"))),
    }
}

pub fn param_f64(set: &ParamSet, name: &str) -> Result<f64> {
    set.get(name)
        .map(|v| v.as_f64())
        .ok_or_else(|| Error::InvalidParam(format!("missing parameter {name}")))
}

/// Forest parameters from a set sampled from [`SearchSpace::forest`].
pub fn forest_params(set: &ParamSet, seed: u64) -> Result<ForestParams> {
    let p = ForestParams {
        n_estimators: param_usize(set, "n_estimators")?,
        max_depth: param_usize(set, "max_depth")?,
        min_samples_split: param_usize(set, "min_samples_split")?,
        min_weight_fraction_leaf: param_f64(set, "min_weight_fraction_leaf")?,
        seed,
        ..Default::default()
    };
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub params: ParamSet,
    pub scores: CvScores,
    /// Informational; not written to trial logs.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub trials: Vec<TrialResult>,
    /// Index into `trials` of the lowest mean MAE, earliest on ties.
    pub best: usize,
}

impl SearchOutcome {
    pub fn best_trial(&self) -> &TrialResult {
        &self.trials[self.best]
    }
}

/// Evaluate `n_trials` independent samples of `space` by k-fold CV.
///
/// Trial `t` samples from ChaCha8 seeded with `seed` on stream `t`.
/// `fit_eval(params, train, validation)` returns validation predictions.
pub fn random_search<F>(
    space: &SearchSpace,
    n_trials: usize,
    y: &[f64],
    k: usize,
    seed: u64,
    mut fit_eval: F,
) -> Result<SearchOutcome>
where
    F: FnMut(&ParamSet, &[usize], &[usize]) -> Result<Vec<f64>>,
{
    space.validate()?;
    if n_trials < 1 {
        return Err(Error::InvalidParam("need at least one trial".into()));
    }
    fold_ranges(y.len(), k)?;
    let mut trials = Vec::with_capacity(n_trials);
    for t in 0..n_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let params = space.sample(&mut rng);
        let started = Instant::now();
        let scores = kfold_cv(y, k, |tr, va| fit_eval(&params, tr, va))?;
        trials.push(TrialResult {
            trial: t,
            params,
            scores,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }
    let best = (1..trials.len()).fold(0, |b, i| {
        if trials[i].scores.mean_mae < trials[b].scores.mean_mae {
            i
        } else {
            b
        }
    });
    Ok(SearchOutcome { trials, best })
}

pub const TRIAL_LOG_HEADER: &str = "trial,params_json,fold_losses,mean_mae,mean_mse";

/// Trial log CSV. Fold losses are the per-fold MAEs joined by `;`.
pub fn trial_log_csv(trials: &[TrialResult]) -> String {
    let mut s = format!("{TRIAL_LOG_HEADER}\n");
    for t in trials {
        let json = serde_json::to_string(&t.params).expect("params serialize");
        let folds: Vec<String> = t.scores.fold_mae.iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&format!(
            "{},\"{}\",{},{:.6},{:.6}\n",
            t.trial,
            json.replace('"', "\"\""),
            folds.join(";"),
            t.scores.mean_mae,
            t.scores.mean_mse
        ));
    }
    s
}
