//! Real-time scoring: per-expert posterior deterioration risk and its
//! admission-weighted average.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{EncodingManifest, NormalizationStats, PatientRecord};
use crate::error::{Error, Result};
use crate::gp::{
    log_marginal_likelihood_value, windowed_log_likelihood, ObservationBlock, StationaryGpParams, WindowConfig,
    WindowedGpParams,
};
use crate::mixture::StableMixture;
use crate::transfer::{clip_normalize, DeterioratingExpertSet, ResponsibilityRegressor};

/// `P(v = 1 | block)` for one stable/deteriorating expert pair. The windowed
/// model is anchored at `anchor`.
pub fn expert_risk(
    block: &ObservationBlock,
    stable: &StationaryGpParams,
    det: &WindowedGpParams,
    anchor: f64,
    prior: f64,
) -> Result<f64> {
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::InvalidArgument(format!("prior must lie in (0, 1), got {prior}")));
    }
    let log_f1 = windowed_log_likelihood(block, det, anchor)?;
    let log_f0 = log_marginal_likelihood_value(block, stable)?;
    Ok(posterior(log_f1 - log_f0, prior))
}

/// `p·e^d / (p·e^d + 1 − p)` without overflow.
pub fn posterior(log_ratio: f64, prior: f64) -> f64 {
    if log_ratio >= 0.0 {
        prior / (prior + (1.0 - prior) * (-log_ratio).exp())
    } else {
        let e = log_ratio.exp();
        prior * e / (prior * e + (1.0 - prior))
    }
}

/// Convex combination of expert scores with weights `beta_hat`.
pub fn aggregate_risk(beta_hat: &[f64], scores: &[f64]) -> Result<f64> {
    if beta_hat.len() != scores.len() || scores.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} expert scores", beta_hat.len(), scores.len())));
    }
    let total: f64 = beta_hat.iter().sum();
    let value: f64 = beta_hat.iter().zip(scores).map(|(b, s)| b / total * s).sum();
    let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| (l.min(s), h.max(s)));
    // guard the convex hull against the last ulp of rounding
    Ok(value.clamp(lo, hi))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub seed: u64,
    /// SHA-256 of the training cohort as written to disk.
    pub cohort_fingerprint: String,
    pub num_stable: usize,
    pub num_deteriorating: usize,
    /// Log Bayes factors `B_{M,M−1}` for every size compared.
    pub log_bayes_factors: Vec<f64>,
    /// Training settings, echoed for provenance.
    pub settings: BTreeMap<String, String>,
}

/// Everything needed to score a new patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub stream_names: Vec<String>,
    pub stable: StableMixture,
    pub deteriorating: DeterioratingExpertSet,
    pub regressor: ResponsibilityRegressor,
    pub normalization: NormalizationStats,
    pub class_prior: f64,
    pub window: WindowConfig,
    pub metadata: BundleMetadata,
}

impl ModelBundle {
    pub fn num_experts(&self) -> usize {
        self.stable.len()
    }

    pub fn manifest(&self) -> &EncodingManifest {
        &self.regressor.manifest
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.stable.len();
        let d = self.stream_names.len();
        if self.deteriorating.len() != m || self.regressor.num_experts() != m {
            return Err(Error::DimensionMismatch(format!(
                "bundle mixes {m} stable experts, {} deteriorating experts and {} regression columns",
                self.deteriorating.len(),
                self.regressor.num_experts()
            )));
        }
        if self.stable.dim() != d || self.deteriorating.experts.iter().any(|e| e.dim() != d) {
            return Err(Error::DimensionMismatch(format!("experts do not cover the bundle's {d} streams")));
        }
        if self.normalization.stream_mean.len() != d
            || self.normalization.feature_mean.len() != self.regressor.weights.nrows()
        {
            return Err(Error::DimensionMismatch("normalization does not match the bundle".into()));
        }
        if !(self.class_prior > 0.0 && self.class_prior < 1.0) {
            return Err(Error::InvalidArgument(format!("class prior {} outside (0, 1)", self.class_prior)));
        }
        Ok(())
    }

    /// Admission-predicted expert weights for a patient in raw units.
    pub fn beta_hat(&self, patient: &PatientRecord) -> Result<Vec<f64>> {
        if *patient.admission.manifest != self.regressor.manifest {
            return Err(Error::ManifestMismatch(format!(
                "patient {} uses admission features [{}], the model expects [{}]",
                patient.id,
                patient.admission.manifest.feature_names().join(", "),
                self.regressor.manifest.feature_names().join(", ")
            )));
        }
        let y = self.normalization.normalize_features(&patient.admission.features);
        Ok(clip_normalize(&self.regressor.predict_raw(&y)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreSchedule {
    /// One score after every distinct observation time.
    EveryObservation,
    /// Scores every `hours` starting at the first observation, plus the last.
    FixedInterval { hours: f64 },
    /// A single score at the last observation.
    Endpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub schedule: ScoreSchedule,
    /// Only observations within this many hours of the scoring time are used.
    pub lookback_hours: Option<f64>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self { schedule: ScoreSchedule::EveryObservation, lookback_hours: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrace {
    pub times: Vec<f64>,
    /// `per_expert[m][k]` is expert `m`'s score at `times[k]`.
    pub per_expert: Vec<Vec<f64>>,
    pub aggregate: Vec<f64>,
    pub beta_hat: Vec<f64>,
}

impl RiskTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.aggregate.last().copied()
    }
}

fn schedule_times(patient: &PatientRecord, schedule: ScoreSchedule) -> Result<Vec<f64>> {
    let first = patient.observations[0].time;
    let last = patient.last_time();
    Ok(match schedule {
        ScoreSchedule::EveryObservation => {
            let mut t: Vec<f64> = patient.observations.iter().map(|o| o.time).collect();
            t.dedup();
            t
        }
        ScoreSchedule::Endpoint => vec![last],
        ScoreSchedule::FixedInterval { hours } => {
            if !(hours > 0.0 && hours.is_finite()) {
                return Err(Error::InvalidArgument("score interval must be positive".into()));
            }
            let mut t = Vec::new();
            let mut k = 0usize;
            loop {
                let at = first + k as f64 * hours;
                if at >= last {
                    break;
                }
                t.push(at);
                k += 1;
            }
            t.push(last);
            t
        }
    })
}

/// Score a patient (raw units) at every point of the schedule.
pub fn score_stream(patient: &PatientRecord, bundle: &ModelBundle, opts: &ScoreOptions) -> Result<RiskTrace> {
    score_stream_with(patient, bundle, opts, None)
}

/// Like [`score_stream`], optionally overriding the admission-predicted weights.
pub fn score_stream_with(
    patient: &PatientRecord,
    bundle: &ModelBundle,
    opts: &ScoreOptions,
    beta_override: Option<&[f64]>,
) -> Result<RiskTrace> {
    if patient.observations.is_empty() {
        return Err(Error::InvalidPatient { id: patient.id.clone(), message: "no observations".into() });
    }
    let d = bundle.stream_names.len();
    if let Some(o) = patient.observations.iter().find(|o| o.stream >= d) {
        return Err(Error::DimensionMismatch(format!(
            "patient {} has stream index {} but the model has {d} streams",
            patient.id, o.stream
        )));
    }
    let beta_hat = match beta_override {
        Some(b) => b.to_vec(),
        None => bundle.beta_hat(patient)?,
    };
    let m = bundle.num_experts();
    if beta_hat.len() != m {
        return Err(Error::DimensionMismatch(format!("{} weights for {m} experts", beta_hat.len())));
    }
    let stats = &bundle.normalization;
    let normalized: Vec<(usize, f64, f64)> =
        patient.observations.iter().map(|o| (o.stream, o.time, stats.normalize_value(o.stream, o.value))).collect();

    let times = schedule_times(patient, opts.schedule)?;
    let mut trace = RiskTrace {
        times: Vec::with_capacity(times.len()),
        per_expert: vec![Vec::with_capacity(times.len()); m],
        aggregate: Vec::with_capacity(times.len()),
        beta_hat: beta_hat.clone(),
    };
    for &t in &times {
        let from = opts.lookback_hours.map_or(f64::NEG_INFINITY, |h| t - h);
        let pts: Vec<&(usize, f64, f64)> = normalized.iter().filter(|(_, tt, _)| *tt <= t && *tt >= from).collect();
        if pts.is_empty() {
            continue;
        }
        let block = ObservationBlock::new(pts.iter().map(|p| (p.0, p.1)).collect(), pts.iter().map(|p| p.2).collect())?;
        let anchor = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let mut scores = Vec::with_capacity(m);
        for (stable, det) in bundle.stable.experts.iter().zip(&bundle.deteriorating.experts) {
            scores.push(expert_risk(&block, stable, det, anchor, bundle.class_prior)?);
        }
        trace.times.push(t);
        for (k, s) in scores.iter().enumerate() {
            trace.per_expert[k].push(*s);
        }
        trace.aggregate.push(aggregate_risk(&beta_hat, &scores)?);
    }
    Ok(trace)
}
