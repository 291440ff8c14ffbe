use serde::{Deserialize, Serialize};

use super::{Cohort, ColumnRole, OutcomeFilter};
use crate::error::{Error, Result};

/// Standard deviation used for streams that are constant in the fitting subset.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-stream and per-admission-column affine standardization.
///
/// Stream statistics use the population convention over all observations of
/// the subset. Only numeric admission columns are standardized; indicator and
/// intercept columns carry mean 0 / std 1 so the transform leaves them alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub stream_mean: Vec<f64>,
    pub stream_std: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// Streams whose std was replaced by [`STD_FLOOR`].
    #[serde(default)]
    pub floored_streams: Vec<usize>,
}

impl NormalizationStats {
    /// Zero means and unit deviations.
    pub fn identity(num_streams: usize, num_features: usize) -> Self {
        Self {
            stream_mean: vec![0.0; num_streams],
            stream_std: vec![1.0; num_streams],
            feature_mean: vec![0.0; num_features],
            feature_std: vec![1.0; num_features],
            floored_streams: Vec::new(),
        }
    }

    pub fn normalize_value(&self, stream: usize, value: f64) -> f64 {
        (value - self.stream_mean[stream]) / self.stream_std[stream]
    }

    pub fn normalize_features(&self, features: &[f64]) -> Vec<f64> {
        features.iter().zip(self.feature_mean.iter().zip(&self.feature_std)).map(|(x, (m, s))| (x - m) / s).collect()
    }

    fn check(&self, cohort: &Cohort) -> Result<()> {
        if self.stream_mean.len() != cohort.num_streams() || self.stream_std.len() != cohort.num_streams() {
            return Err(Error::DimensionMismatch(format!(
                "stats cover {} streams, cohort has {}",
                self.stream_mean.len(),
                cohort.num_streams()
            )));
        }
        if self.feature_mean.len() != cohort.num_features() || self.feature_std.len() != cohort.num_features() {
            return Err(Error::DimensionMismatch(format!(
                "stats cover {} admission columns, cohort has {}",
                self.feature_mean.len(),
                cohort.num_features()
            )));
        }
        Ok(())
    }
}

/// Fit standardization statistics on the patients selected by `subset`.
pub fn fit_normalization(cohort: &Cohort, subset: OutcomeFilter) -> Result<NormalizationStats> {
    let idx = cohort.indices(subset);
    if idx.is_empty() {
        return Err(Error::EmptySubset(format!("no patients match {subset:?}")));
    }
    let d = cohort.num_streams();
    let mut count = vec![0usize; d];
    let mut sum = vec![0.0; d];
    for &i in &idx {
        for o in &cohort.patients[i].observations {
            count[o.stream] += 1;
            sum[o.stream] += o.value;
        }
    }
    if let Some(s) = count.iter().position(|&c| c == 0) {
        return Err(Error::EmptySubset(format!(
            "stream '{}' has no observations in the subset",
            cohort.stream_names[s]
        )));
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let mut ss = vec![0.0; d];
    for &i in &idx {
        for o in &cohort.patients[i].observations {
            let r = o.value - mean[o.stream];
            ss[o.stream] += r * r;
        }
    }
    let mut floored = Vec::new();
    let std: Vec<f64> = (0..d)
        .map(|s| {
            let v = (ss[s] / count[s] as f64).sqrt();
            if v > 0.0 {
                v
            } else {
                log::warn!("stream '{}' is constant in the fitting subset; std floored", cohort.stream_names[s]);
                floored.push(s);
                STD_FLOOR
            }
        })
        .collect();

    let roles = cohort.manifest.column_roles();
    let n = idx.len() as f64;
    let mut feature_mean = vec![0.0; roles.len()];
    let mut feature_std = vec![1.0; roles.len()];
    for (j, role) in roles.iter().enumerate() {
        if *role != ColumnRole::Numeric {
            continue;
        }
        let m = idx.iter().map(|&i| cohort.patients[i].admission.features[j]).sum::<f64>() / n;
        let v = idx.iter().map(|&i| (cohort.patients[i].admission.features[j] - m).powi(2)).sum::<f64>() / n;
        feature_mean[j] = m;
        // constant numeric features are only centred
        feature_std[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
    }

    Ok(NormalizationStats { stream_mean: mean, stream_std: std, feature_mean, feature_std, floored_streams: floored })
}

/// Map every observation and admission column to standardized units.
pub fn apply_normalization(cohort: &Cohort, stats: &NormalizationStats) -> Result<Cohort> {
    stats.check(cohort)?;
    let mut out = cohort.clone();
    for p in &mut out.patients {
        for o in &mut p.observations {
            o.value = stats.normalize_value(o.stream, o.value);
        }
        p.admission.features = stats.normalize_features(&p.admission.features);
    }
    Ok(out)
}

/// Undo [`apply_normalization`].
pub fn invert_normalization(cohort: &Cohort, stats: &NormalizationStats) -> Result<Cohort> {
    stats.check(cohort)?;
    let mut out = cohort.clone();
    for p in &mut out.patients {
        for o in &mut p.observations {
            o.value = o.value * stats.stream_std[o.stream] + stats.stream_mean[o.stream];
        }
        for (x, (m, s)) in p.admission.features.iter_mut().zip(stats.feature_mean.iter().zip(&stats.feature_std)) {
            *x = *x * s + m;
        }
    }
    Ok(out)
}
