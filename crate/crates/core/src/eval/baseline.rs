//! Comparison scores: an L1-penalized logistic regression on summary
//! features and a user-defined points table.

use serde::{Deserialize, Serialize};

use super::metrics::ScoredOutcome;
use crate::cohort::{Cohort, ColumnRole, PatientRecord};
use crate::error::{Error, Result};

const SUMMARY_STATS: usize = 5;

/// Per-stream mean, std, min, max and last value (`NaN` for absent streams)
/// followed by the encoded admission columns without the intercept.
pub fn summary_features(patient: &PatientRecord, num_streams: usize, roles: &[ColumnRole]) -> Vec<f64> {
    let mut out = Vec::with_capacity(num_streams * SUMMARY_STATS + roles.len());
    for d in 0..num_streams {
        let vals: Vec<f64> = patient.observations.iter().filter(|o| o.stream == d).map(|o| o.value).collect();
        if vals.is_empty() {
            out.extend([f64::NAN; SUMMARY_STATS]);
            continue;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.extend([mean, std, min, max, *vals.last().expect("non-empty")]);
    }
    for (x, role) in patient.admission.features.iter().zip(roles) {
        if *role != ColumnRole::Intercept {
            out.push(*x);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l1_penalty: f64,
    pub max_iter: usize,
    /// Stop when no coefficient moves by more than this in one step.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { l1_penalty: 0.0, max_iter: 5000, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
    /// Column centring and scaling learned on the training set.
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log-likelihood `log(1 + e^z) − y·z`.
fn loss(x: &[Vec<f64>], y: &[f64], b: f64, w: &[f64]) -> f64 {
    let n = x.len() as f64;
    x.iter()
        .zip(y)
        .map(|(row, &yi)| {
            let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - yi * z
        })
        .sum::<f64>()
        / n
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl LogisticModel {
    /// Proximal gradient descent with backtracking; the intercept is not penalized.
    pub fn fit(x: &[Vec<f64>], y: &[bool], cfg: &LogisticConfig) -> Result<Self> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return Err(Error::DimensionMismatch(format!("{n} feature rows for {} labels", y.len())));
        }
        if !(cfg.l1_penalty >= 0.0) {
            return Err(Error::InvalidArgument("L1 penalty must be non-negative".into()));
        }
        let p = x[0].len();
        let mut center = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for j in 0..p {
            let col: Vec<f64> = x.iter().map(|r| r[j]).filter(|v| v.is_finite()).collect();
            if col.is_empty() {
                continue;
            }
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            center[j] = m;
            scale[j] = if s > 0.0 { s } else { 1.0 };
        }
        let mut model = Self { intercept: 0.0, weights: vec![0.0; p], center, scale, iterations: 0, converged: false };
        let z: Vec<Vec<f64>> = x.iter().map(|r| model.standardize(r)).collect();
        let yf: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();

        let mut step = 1.0;
        let mut cur = loss(&z, &yf, model.intercept, &model.weights);
        for it in 0..cfg.max_iter {
            let mut gb = 0.0;
            let mut gw = vec![0.0; p];
            for (row, &yi) in z.iter().zip(&yf) {
                let r = sigmoid(model.intercept + row.iter().zip(&model.weights).map(|(a, c)| a * c).sum::<f64>()) - yi;
                gb += r;
                for (g, a) in gw.iter_mut().zip(row) {
                    *g += r * a;
                }
            }
            gb /= n as f64;
            gw.iter_mut().for_each(|g| *g /= n as f64);

            let (nb, nw, next) = loop {
                let nb = model.intercept - step * gb;
                let nw: Vec<f64> = model
                    .weights
                    .iter()
                    .zip(&gw)
                    .map(|(w, g)| soft_threshold(w - step * g, step * cfg.l1_penalty))
                    .collect();
                let next = loss(&z, &yf, nb, &nw);
                // sufficient decrease for the smooth part
                let db = nb - model.intercept;
                let dw: Vec<f64> = nw.iter().zip(&model.weights).map(|(a, b)| a - b).collect();
                let lin = gb * db + gw.iter().zip(&dw).map(|(g, d)| g * d).sum::<f64>();
                let quad = (db * db + dw.iter().map(|d| d * d).sum::<f64>()) / (2.0 * step);
                if next <= cur + lin + quad + 1e-15 || step < 1e-12 {
                    break (nb, nw, next);
                }
                step *= 0.5;
            };
            let moved = (nb - model.intercept)
                .abs()
                .max(nw.iter().zip(&model.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            model.intercept = nb;
            model.weights = nw;
            cur = next;
            model.iterations = it + 1;
            if moved < cfg.tol {
                model.converged = true;
                break;
            }
            step *= 1.5;
        }
        if !model.converged {
            log::warn!("logistic baseline stopped after {} iterations without converging", model.iterations);
        }
        Ok(model)
    }

    /// Missing features are imputed at the training mean.
    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(v, (m, s))| if v.is_finite() { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let z = self.standardize(row);
        sigmoid(self.intercept + z.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>())
    }
}

/// Fit on `train`, score `test`.
pub fn logistic_baseline(train: &Cohort, test: &Cohort, l1_penalty: f64) -> Result<Vec<ScoredOutcome>> {
    if train.stream_names != test.stream_names || train.manifest != test.manifest {
        return Err(Error::ManifestMismatch("train and test cohorts differ in streams or admission features".into()));
    }
    let roles = train.manifest.column_roles();
    let d = train.num_streams();
    let x: Vec<Vec<f64>> = train.patients.iter().map(|p| summary_features(p, d, &roles)).collect();
    let y: Vec<bool> = train.patients.iter().map(|p| p.outcome.is_positive()).collect();
    let model = LogisticModel::fit(&x, &y, &LogisticConfig { l1_penalty, ..Default::default() })?;
    Ok(test
        .patients
        .iter()
        .map(|p| ScoredOutcome {
            id: p.id.clone(),
            score: model.predict(&summary_features(p, d, &roles)),
            label: p.outcome.is_positive(),
        })
        .collect())
}

/// Points awarded when a value falls in `[lower, upper)`; open ends are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamBands {
    pub stream: String,
    pub bands: Vec<Band>,
}

/// Early-warning-style table: each stream's latest value earns the points of
/// the first matching band; the total is divided by the maximum attainable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub streams: Vec<StreamBands>,
}

impl ScoreTable {
    pub fn score(&self, patient: &PatientRecord, stream_names: &[String]) -> Result<f64> {
        let mut total = 0.0;
        let mut max = 0.0;
        for sb in &self.streams {
            let d = stream_names
                .iter()
                .position(|n| *n == sb.stream)
                .ok_or_else(|| Error::Config(format!("score table names unknown stream '{}'", sb.stream)))?;
            max += sb.bands.iter().map(|b| b.points).fold(0.0, f64::max);
            if let Some(v) = patient.observations.iter().rev().find(|o| o.stream == d).map(|o| o.value) {
                if let Some(b) =
                    sb.bands.iter().find(|b| b.lower.is_none_or(|l| v >= l) && b.upper.is_none_or(|u| v < u))
                {
                    total += b.points;
                }
            }
        }
        Ok(if max > 0.0 { total / max } else { 0.0 })
    }
}

pub fn score_table_baseline(table: &ScoreTable, test: &Cohort) -> Result<Vec<ScoredOutcome>> {
    test.patients
        .iter()
        .map(|p| {
            Ok(ScoredOutcome {
                id: p.id.clone(),
                score: table.score(p, &test.stream_names)?,
                label: p.outcome.is_positive(),
            })
        })
        .collect()
}
