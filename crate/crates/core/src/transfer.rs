//! Carrying the stable-domain class structure over to new and deteriorating
//! patients: a linear map from admission features to responsibilities, a
//! Bernoulli partition of the deteriorating patients, and windowed experts
//! trained on each part.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{AdmissionVector, EncodingManifest};
use crate::error::{Error, Result};
use crate::gp::{fit_windowed_mle, ObservationBlock, OptimizerConfig, WindowConfig, WindowedGpParams};
use crate::mixture::{ResponsibilityMatrix, StableMixture};

/// Relative ridge strength used when the design is rank-deficient.
pub const RIDGE_SCALE: f64 = 1e-6;

/// Linear map `β̂ = Wᵀy` from encoded admission features to responsibilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsibilityRegressor {
    /// `S × M`; column `m` holds `w_m`.
    pub weights: DMatrix<f64>,
    pub manifest: EncodingManifest,
    /// Residual sum of squares per column.
    pub rss: Vec<f64>,
    /// Ridge strength, when the design needed one.
    pub ridge: Option<f64>,
}

/// Per-column least squares of the soft responsibilities on the encoded
/// admission vectors. A small ridge engages when the design is rank-deficient
/// or has no more rows than columns.
pub fn fit_responsibility_regression(
    admissions: &[AdmissionVector],
    responsibilities: &ResponsibilityMatrix,
) -> Result<ResponsibilityRegressor> {
    let n = admissions.len();
    if n == 0 {
        return Err(Error::EmptySubset("no admission vectors to regress on".into()));
    }
    if responsibilities.num_patients() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} admission vectors but {} responsibility rows",
            responsibilities.num_patients()
        )));
    }
    let manifest = admissions[0].manifest.clone();
    if admissions.iter().any(|a| *a.manifest != *manifest) {
        return Err(Error::ManifestMismatch("admission vectors use different encodings".into()));
    }
    let s = manifest.encoded_len();
    if admissions.iter().any(|a| a.len() != s) {
        return Err(Error::DimensionMismatch(format!("admission vectors must have {s} entries")));
    }
    let m = responsibilities.num_experts();
    let x = DMatrix::from_fn(n, s, |i, j| admissions[i].features[j]);
    let y = DMatrix::from_fn(n, m, |i, j| responsibilities.row(i)[j]);

    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let sv = &svd.singular_values;
    let smax = sv.max();
    let tol = smax * n.max(s) as f64 * f64::EPSILON;
    let rank = sv.iter().filter(|&&v| v > tol).count();

    let ridge = if rank < s || n <= s {
        let lambda = RIDGE_SCALE * sv.iter().map(|v| v * v).sum::<f64>() / s as f64;
        log::warn!("admission design has rank {rank} of {s} columns over {n} rows; using ridge {lambda:.3e}");
        Some(lambda.max(f64::MIN_POSITIVE))
    } else {
        None
    };
    let shrink = DVector::from_iterator(
        sv.len(),
        sv.iter().map(|&v| match ridge {
            Some(l) => v / (v * v + l),
            None => 1.0 / v,
        }),
    );
    let uty = u.transpose() * &y;
    let scaled = DMatrix::from_fn(uty.nrows(), m, |i, j| uty[(i, j)] * shrink[i]);
    let weights = vt.transpose() * scaled;

    let resid = &y - &x * &weights;
    let rss = (0..m).map(|j| resid.column(j).norm_squared()).collect();
    Ok(ResponsibilityRegressor { weights, manifest: (*manifest).clone(), rss, ridge })
}

impl ResponsibilityRegressor {
    pub fn num_experts(&self) -> usize {
        self.weights.ncols()
    }

    /// Raw linear prediction `Wᵀy` before clipping.
    pub fn predict_raw(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.weights.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "regressor expects {} admission columns, got {}",
                self.weights.nrows(),
                features.len()
            )));
        }
        let y = DVector::from_column_slice(features);
        Ok((self.weights.transpose() * y).iter().copied().collect())
    }
}

/// Clip negative entries to zero and renormalize; uniform when nothing is left.
pub fn clip_normalize(raw: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = raw.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return vec![1.0 / raw.len() as f64; raw.len()];
    }
    clipped.iter().map(|v| v / total).collect()
}

/// Admission-predicted responsibilities on the simplex.
pub fn predict_responsibilities(reg: &ResponsibilityRegressor, admission: &AdmissionVector) -> Result<Vec<f64>> {
    if *admission.manifest != reg.manifest {
        return Err(Error::ManifestMismatch("admission encoding differs from the regressor's".into()));
    }
    Ok(clip_normalize(&reg.predict_raw(&admission.features)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Patient indices per expert, ascending.
    pub sets: Vec<Vec<usize>>,
    pub seed: u64,
}

impl Partition {
    pub fn counts(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }
}

/// Independent `Bernoulli(β_im)` inclusion of patient `i` in set `m`.
pub fn self_taught_partition(beta_hat: &[Vec<f64>], num_experts: usize, seed: u64) -> Result<Partition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = vec![Vec::new(); num_experts];
    for (i, row) in beta_hat.iter().enumerate() {
        if row.len() != num_experts {
            return Err(Error::DimensionMismatch(format!("row {i} has {} entries, expected {num_experts}", row.len())));
        }
        for (m, &b) in row.iter().enumerate() {
            let u: f64 = rng.random();
            if u < b {
                sets[m].push(i);
            }
        }
    }
    Ok(Partition { sets, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterioratingExpertSet {
    pub experts: Vec<WindowedGpParams>,
    /// Patients used to train each expert.
    pub counts: Vec<usize>,
    /// Experts whose partition was empty and which copy the stable expert.
    pub untrained: Vec<bool>,
    pub seed: u64,
}

impl DeterioratingExpertSet {
    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }
}

/// Windowed MLE per partition set. `data` holds each deteriorating patient's
/// normalized block together with its anchor (stay length).
pub fn train_deteriorating_experts(
    data: &[(ObservationBlock, f64)],
    partition: &Partition,
    stable: &StableMixture,
    window_cfg: WindowConfig,
    opt: &OptimizerConfig,
) -> Result<DeterioratingExpertSet> {
    window_cfg.validate()?;
    if partition.sets.len() != stable.len() {
        return Err(Error::DimensionMismatch(format!(
            "partition has {} sets but the mixture has {} experts",
            partition.sets.len(),
            stable.len()
        )));
    }
    let mut experts = Vec::with_capacity(stable.len());
    let mut untrained = Vec::with_capacity(stable.len());
    for (m, set) in partition.sets.iter().enumerate() {
        let fallback = &stable.experts[m];
        if set.is_empty() {
            log::warn!("deteriorating expert {} has no patients; copying the stable expert", m + 1);
            experts.push(WindowedGpParams::replicate(fallback, window_cfg)?);
            untrained.push(true);
            continue;
        }
        let subset: Vec<(ObservationBlock, f64)> = set.iter().map(|&i| data[i].clone()).collect();
        let weights = vec![1.0; subset.len()];
        experts.push(fit_windowed_mle(&subset, &weights, window_cfg, opt, fallback)?);
        untrained.push(false);
    }
    Ok(DeterioratingExpertSet { experts, counts: partition.counts(), untrained, seed: partition.seed })
}
