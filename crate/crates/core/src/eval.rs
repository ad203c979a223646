//! Rolling evaluation with exponential aggregation of overlapping
//! forecasts, boxplot statistics and the identity-replacement ablation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::{denormalize, Dataset, SampleWindow};
use crate::error::{Error, Result};
use crate::model::{zero_predictor, DelayNet, DelayNetConfig, FilterPosition, Forecaster};
use crate::train::{fit, forecaster_mae, Batch, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Weight of the newest forecast in the running average.
    pub alpha: f64,
    /// Steps between fresh forecasts.
    pub sample_period: usize,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { alpha: 0.3, sample_period: 16, batch_size: 64 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.sample_period == 0 || self.batch_size == 0 {
            return Err(Error::config("sample_period and batch_size must be positive"));
        }
        Ok(())
    }
}

/// Weights of `n` forecasts, oldest first, under `e = alpha·p + (1-alpha)·e`.
pub fn ema_weights(n: usize, alpha: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let age = (n - 1 - i) as i32;
            let keep = (1.0 - alpha).powi(age);
            if i == 0 {
                keep
            } else {
                alpha * keep
            }
        })
        .collect()
}

/// Running exponential average of forecasts given oldest first.
pub fn ema(values: &[f64], alpha: f64) -> Option<f64> {
    let (first, rest) = values.split_first()?;
    Some(rest.iter().fold(*first, |e, p| alpha * p + (1.0 - alpha) * e))
}

/// Aggregated forecast for one target at one minute.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaPoint {
    pub target: usize,
    pub minute: i64,
    pub truth: f64,
    pub prediction: f64,
    pub n_forecasts: usize,
}

/// Error of the single forecast made from one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowError {
    pub start: i64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaReport {
    pub points: Vec<EmaPoint>,
    /// MAE of the aggregated forecasts, in data units.
    pub mae: f64,
    pub windows: Vec<WindowError>,
}

/// Forecasts every `sample_period` steps over time-ordered windows and
/// aggregates all forecasts covering the same minute, newest weighted
/// highest. Errors are reported in de-normalized units.
pub fn ema_rolling_eval(model: &dyn Forecaster, windows: &[SampleWindow], cfg: &EvalConfig) -> Result<EmaReport> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::data("no windows to evaluate"));
    }
    if windows.windows(2).any(|w| w[1].start <= w[0].start) {
        return Err(Error::data("evaluation windows must be strictly ordered by start time"));
    }
    let mut chosen: Vec<&SampleWindow> = Vec::new();
    for w in windows {
        let due = match chosen.last() {
            None => true,
            Some(prev) => w.start - prev.start >= cfg.sample_period as i64 * w.step_minutes,
        };
        if due {
            chosen.push(w);
        }
    }
    let forecasts: Vec<Vec<f64>> = chosen
        .par_chunks(cfg.batch_size)
        .map(|chunk| -> Result<Vec<Vec<f64>>> {
            let batch = Batch::from_samples(chunk)?;
            let pred = model.predict(&batch.x1, &batch.x2)?.to_vec();
            let per = pred.len() / chunk.len();
            chunk.iter().zip(pred.chunks(per)).map(|(w, p)| denormalize(p, w)).collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut covering: BTreeMap<(usize, i64), (f64, Vec<f64>)> = BTreeMap::new();
    let mut per_window = Vec::with_capacity(chosen.len());
    for (w, pred) in chosen.iter().zip(&forecasts) {
        let truth = w.y_denormalized()?;
        let t_len = w.future_steps;
        let mut abs = 0.0;
        for (i, (p, y)) in pred.iter().zip(&truth).enumerate() {
            let key = (i / t_len, w.future_minute(i % t_len));
            covering.entry(key).or_insert_with(|| (*y, Vec::new())).1.push(*p);
            abs += (p - y).abs();
        }
        per_window.push(WindowError { start: w.start, mae: abs / pred.len() as f64 });
    }
    let points: Vec<EmaPoint> = covering
        .into_iter()
        .map(|((target, minute), (truth, preds))| EmaPoint {
            target,
            minute,
            truth,
            prediction: ema(&preds, cfg.alpha).expect("every key holds a forecast"),
            n_forecasts: preds.len(),
        })
        .collect();
    let mae = points.iter().map(|p| (p.prediction - p.truth).abs()).sum::<f64>() / points.len() as f64;
    if !mae.is_finite() {
        return Err(Error::numeric("non-finite evaluation error"));
    }
    Ok(EmaReport { points, mae, windows: per_window })
}

/// Boxplot summary: box at the quartiles, whiskers at the 10th and 90th
/// percentiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub p10: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
    pub outliers: Vec<f64>,
    pub n: usize,
}

/// Linear interpolation between order statistics at rank `q·(n-1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::data("box statistics of an empty list"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::data("box statistics of a list containing NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let p10 = percentile(&sorted, 0.10);
    let p90 = percentile(&sorted, 0.90);
    Ok(BoxStats {
        p10,
        p25: percentile(&sorted, 0.25),
        median: percentile(&sorted, 0.5),
        p75: percentile(&sorted, 0.75),
        p90,
        outliers: sorted.iter().copied().filter(|v| *v < p10 || *v > p90).collect(),
        n: values.len(),
    })
}

pub const BOX_HEADER: &str = "name,p10,p25,median,p75,p90,n";

pub fn box_row(name: &str, b: &BoxStats) -> String {
    format!("{name},{:.9},{:.9},{:.9},{:.9},{:.9},{}", b.p10, b.p25, b.median, b.p75, b.p90, b.n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub positions: Vec<FilterPosition>,
    pub trials: usize,
    /// Every subset of `positions`; otherwise only the full network, each
    /// single replacement and all of them together.
    pub exhaustive: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { positions: FilterPosition::ALL.to_vec(), trials: 5, exhaustive: true }
    }
}

/// One ablation variant and its per-trial results.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub identity: Vec<FilterPosition>,
    pub best_val_mae: Vec<f64>,
    pub stats: BoxStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Validation MAE of the always-zero forecast.
    pub zero_mae: f64,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Box statistics CSV with the zero reference as a degenerate row.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{BOX_HEADER}\n");
        for r in &self.rows {
            s.push_str(&box_row(&r.name, &r.stats));
            s.push('\n');
        }
        let z = box_stats(&[self.zero_mae]).expect("one finite value");
        s.push_str(&box_row("zero", &z));
        s.push('\n');
        s
    }

    /// `variant,trial,best_val_mae` rows.
    pub fn trials_csv(&self) -> String {
        let mut s = String::from("variant,trial,best_val_mae\n");
        for r in &self.rows {
            for (i, v) in r.best_val_mae.iter().enumerate() {
                s.push_str(&format!("{},{i},{v:.12e}\n", r.name));
            }
        }
        s
    }
}

/// Variant name: `full`, or the replaced positions joined by `+`.
pub fn variant_name(identity: &[FilterPosition]) -> String {
    if identity.is_empty() {
        "full".into()
    } else {
        let names: Vec<&str> = identity.iter().map(|p| p.name()).collect();
        format!("identity:{}", names.join("+"))
    }
}

/// Subsets of `positions` to replace, smallest first.
pub fn variants(positions: &[FilterPosition], exhaustive: bool) -> Vec<Vec<FilterPosition>> {
    let mut pos = positions.to_vec();
    pos.sort();
    pos.dedup();
    let mut out: Vec<Vec<FilterPosition>> = (0..1usize << pos.len())
        .map(|mask| pos.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, p)| *p).collect())
        .collect();
    out.sort_by_key(|v: &Vec<FilterPosition>| v.len());
    if !exhaustive {
        out.retain(|v| v.len() <= 1 || v.len() == pos.len());
    }
    out
}

/// Trains every identity-replacement variant `trials` times with fresh
/// seeds `train.seed + trial` and summarizes the best validation MAE.
pub fn ablation_grid(base: &DelayNetConfig, data: &Dataset, cfg: &AblationConfig, train: &TrainConfig) -> Result<AblationReport> {
    if cfg.trials == 0 {
        return Err(Error::config("ablation needs at least one trial"));
    }
    base.validate()?;
    let groups = variants(&cfg.positions, cfg.exhaustive);
    let jobs: Vec<(usize, usize)> = (0..groups.len()).flat_map(|g| (0..cfg.trials).map(move |t| (g, t))).collect();
    let mut results: Vec<((usize, usize), f64)> = jobs
        .par_iter()
        .map(|&(g, t)| -> Result<((usize, usize), f64)> {
            let model_cfg = base.with_identity(&groups[g]);
            let seed = train.seed.wrapping_add(t as u64);
            let net = DelayNet::build(&model_cfg, seed)?;
            let report = fit(&net, &data.train, &data.val, &TrainConfig { seed, ..train.clone() })?;
            Ok(((g, t), report.best_val_mae))
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|(id, _)| *id);
    let rows = groups
        .iter()
        .enumerate()
        .map(|(g, identity)| {
            let maes: Vec<f64> = results.iter().filter(|((gi, _), _)| *gi == g).map(|(_, v)| *v).collect();
            Ok(AblationRow { name: variant_name(identity), identity: identity.clone(), stats: box_stats(&maes)?, best_val_mae: maes })
        })
        .collect::<Result<Vec<_>>>()?;
    let zero_mae = forecaster_mae(&zero_predictor(base), &data.val, train.batch_size)?;
    Ok(AblationReport { rows, zero_mae })
}
