//! Synthetic cohorts from a hierarchical latent class model: a latent class
//! drives the admission features and the deterioration outcome, and class
//! plus outcome together select the GP that generates the vital streams.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{
    AdmissionValue, AdmissionVector, Cohort, EncodingManifest, FeatureKind, FeatureSpec, Observation, Outcome,
    PatientRecord,
};
use crate::error::{Error, Result};
use crate::gp::kernel::{assemble, factorize};
use crate::gp::{split_by_window, ObservationBlock, StationaryGpParams, WindowConfig, WindowedGpParams};

pub const LATENT_FILE: &str = "latent.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    /// Prior probability of the class.
    pub weight: f64,
    /// `P(v = 1 | Z)`.
    pub deterioration_prob: f64,
    pub stable: StationaryGpParams,
    /// Anchored at the end of the stay.
    pub deteriorating: WindowedGpParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdmissionModel {
    /// Gaussian with per-class mean and std.
    Numeric { mean: Vec<f64>, std: Vec<f64> },
    /// Per-class level probabilities.
    Categorical { levels: Vec<String>, probs: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionFeatureModel {
    pub name: String,
    #[serde(flatten)]
    pub model: AdmissionModel,
}

/// Log-normal stay length truncated to `[min_hours, max_hours]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StayModel {
    pub log_mean: f64,
    pub log_std: f64,
    pub min_hours: f64,
    pub max_hours: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingModel {
    pub interval_hours: f64,
    /// Each gap is `interval ± U(0, jitter)`.
    pub jitter_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub stream_names: Vec<String>,
    /// Raw value = offset + scale · latent value, per stream.
    pub stream_offset: Vec<f64>,
    pub stream_scale: Vec<f64>,
    pub classes: Vec<ClassModel>,
    pub admission: Vec<AdmissionFeatureModel>,
    pub stay: StayModel,
    pub sampling: SamplingModel,
    #[serde(default)]
    pub seed: u64,
}

/// Generator truth for one patient, kept out of the cohort files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latent {
    pub class: usize,
    pub outcome: Outcome,
}

impl GeneratorConfig {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_streams(&self) -> usize {
        self.stream_names.len()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn manifest(&self) -> Result<EncodingManifest> {
        EncodingManifest::new(
            self.admission
                .iter()
                .map(|f| FeatureSpec {
                    name: f.name.clone(),
                    kind: match &f.model {
                        AdmissionModel::Numeric { .. } => FeatureKind::Numeric,
                        AdmissionModel::Categorical { levels, .. } => {
                            FeatureKind::Categorical { levels: levels.clone() }
                        }
                    },
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.num_streams();
        let m = self.num_classes();
        let bad = |msg: String| Err(Error::Config(msg));
        if d == 0 || m == 0 {
            return bad("generator needs at least one stream and one class".into());
        }
        if self.stream_offset.len() != d || self.stream_scale.len() != d {
            return bad(format!("stream offsets and scales must have {d} entries"));
        }
        if self.stream_scale.iter().any(|s| !(*s > 0.0)) {
            return bad("stream scales must be positive".into());
        }
        let total: f64 = self.classes.iter().map(|c| c.weight).sum();
        if self.classes.iter().any(|c| !(c.weight >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return bad("class weights must lie on the simplex".into());
        }
        for (k, c) in self.classes.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.deterioration_prob) {
                return bad(format!("class {k}: deterioration probability outside [0, 1]"));
            }
            if c.stable.dim() != d || c.deteriorating.dim() != d {
                return bad(format!("class {k}: GP parameters do not cover {d} streams"));
            }
        }
        for f in &self.admission {
            match &f.model {
                AdmissionModel::Numeric { mean, std } => {
                    if mean.len() != m || std.len() != m || std.iter().any(|s| !(*s >= 0.0)) {
                        return bad(format!("feature '{}': need {m} means and non-negative stds", f.name));
                    }
                }
                AdmissionModel::Categorical { levels, probs } => {
                    if probs.len() != m || probs.iter().any(|p| p.len() != levels.len()) {
                        return bad(format!("feature '{}': need {m} probability rows over the levels", f.name));
                    }
                    if probs
                        .iter()
                        .any(|p| p.iter().any(|x| !(*x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9)
                    {
                        return bad(format!("feature '{}': level probabilities must lie on the simplex", f.name));
                    }
                }
            }
        }
        self.manifest()?;
        let st = &self.stay;
        if !(st.min_hours > 0.0 && st.max_hours >= st.min_hours && st.log_std >= 0.0) {
            return bad("stay model needs 0 < min <= max and a non-negative log std".into());
        }
        let s = &self.sampling;
        if !(s.interval_hours > 0.0 && s.jitter_hours >= 0.0 && s.jitter_hours < s.interval_hours) {
            return bad("sampling interval must be positive and exceed the jitter".into());
        }
        Ok(())
    }
}

/// Patient ids are zero-padded sequence numbers.
pub fn patient_id(index: usize) -> String {
    format!("p{index:05}")
}

/// Joint draw from a stationary GP at the block's index, noise included.
pub fn sample_gp(index: &[(usize, f64)], params: &StationaryGpParams, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let block = ObservationBlock::new(index.to_vec(), vec![0.0; index.len()])?;
    let (chol, _) = factorize(assemble(&block, params).covariance)?;
    let z = DVector::from_iterator(index.len(), (0..index.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let x = chol.l() * z;
    Ok(index.iter().zip(x.iter()).map(|(&(d, _), v)| params.mean()[d] + v).collect())
}

/// Joint draw from a windowed GP anchored at `anchor`; windows are independent.
pub fn sample_windowed(
    index: &[(usize, f64)],
    params: &WindowedGpParams,
    anchor: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let cfg = params.config();
    let block = ObservationBlock::new(index.to_vec(), vec![0.0; index.len()])?;
    let windows: Vec<usize> = index.iter().map(|&(_, t)| cfg.window_of(t - anchor)).collect();
    let mut out = vec![0.0; index.len()];
    for (w, part) in split_by_window(&block, cfg, anchor).into_iter().enumerate() {
        let Some(part) = part else { continue };
        let drawn = sample_gp(&part.index, &params.windows[w], rng)?;
        let slots = (0..index.len()).filter(|&a| windows[a] == w);
        for (slot, v) in slots.zip(drawn) {
            out[slot] = v;
        }
    }
    Ok(out)
}

fn draw_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    WeightedIndex::new(weights).expect("validated weights").sample(rng)
}

/// One patient from the generator, using the `index`-th random stream of the
/// configured seed so that patients can be drawn in any order.
pub fn sample_patient(
    cfg: &GeneratorConfig,
    manifest: &Arc<EncodingManifest>,
    index: usize,
) -> Result<(PatientRecord, Latent)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);

    let weights: Vec<f64> = cfg.classes.iter().map(|c| c.weight).collect();
    let class = draw_index(&weights, &mut rng);
    let model = &cfg.classes[class];

    let mut raw = BTreeMap::new();
    for f in &cfg.admission {
        let value = match &f.model {
            AdmissionModel::Numeric { mean, std } => {
                let n = Normal::new(mean[class], std[class]).map_err(|e| Error::Config(e.to_string()))?;
                AdmissionValue::Number(n.sample(&mut rng))
            }
            AdmissionModel::Categorical { levels, probs } => {
                AdmissionValue::Level(levels[draw_index(&probs[class], &mut rng)].clone())
            }
        };
        raw.insert(f.name.clone(), value);
    }
    let admission = AdmissionVector::encode(manifest.clone(), &raw)?;

    let outcome = if rng.random::<f64>() < model.deterioration_prob { Outcome::Deteriorating } else { Outcome::Stable };
    let stay_dist = LogNormal::new(cfg.stay.log_mean, cfg.stay.log_std).map_err(|e| Error::Config(e.to_string()))?;
    let stay = stay_dist.sample(&mut rng).clamp(cfg.stay.min_hours, cfg.stay.max_hours);

    let s = cfg.sampling;
    let mut index_pts = Vec::new();
    for d in 0..cfg.num_streams() {
        let mut t = rng.random::<f64>() * s.interval_hours;
        while t <= stay {
            index_pts.push((d, t));
            t += s.interval_hours + rng.random_range(-1.0..=1.0) * s.jitter_hours;
        }
    }
    if index_pts.is_empty() {
        index_pts.push((0, stay));
    }
    index_pts.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let latent_values = match outcome {
        Outcome::Stable => sample_gp(&index_pts, &model.stable, &mut rng)?,
        Outcome::Deteriorating => sample_windowed(&index_pts, &model.deteriorating, stay, &mut rng)?,
    };
    let observations = index_pts
        .iter()
        .zip(latent_values)
        .map(|(&(stream, time), x)| Observation {
            stream,
            time,
            value: cfg.stream_offset[stream] + cfg.stream_scale[stream] * x,
        })
        .collect();
    let record = PatientRecord::new(patient_id(index), observations, admission, stay, outcome)?;
    Ok((record, Latent { class, outcome }))
}

/// `n` independent patients; the latent table is returned separately.
pub fn generate_cohort(cfg: &GeneratorConfig, n: usize) -> Result<(Cohort, Vec<Latent>)> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("cohort size must be at least 1".into()));
    }
    let manifest = Arc::new(cfg.manifest()?);
    let mut patients = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for i in 0..n {
        let (p, l) = sample_patient(cfg, &manifest, i)?;
        patients.push(p);
        latent.push(l);
    }
    Ok((Cohort::new(cfg.stream_names.clone(), manifest, patients)?, latent))
}

/// `patient_id,Z,v` rows.
pub fn write_latent<W: Write>(cohort: &Cohort, latent: &[Latent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Config(format!("writing latent table: {e}"));
    w.write_record(["patient_id", "Z", "v"]).map_err(io)?;
    for (p, l) in cohort.patients.iter().zip(latent) {
        w.write_record([p.id.clone(), l.class.to_string(), l.outcome.label().to_string()]).map_err(io)?;
    }
    w.flush().map_err(|source| Error::Io { path: LATENT_FILE.into(), source })?;
    Ok(())
}

pub fn read_latent(path: &Path) -> Result<BTreeMap<String, Latent>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for (k, row) in r.records().enumerate() {
        let line = k as u64 + 2;
        let parse_err = |message: String| Error::Parse { file: path.display().to_string(), line, message };
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        if row.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", row.len())));
        }
        let class = row[1].parse().map_err(|_| parse_err(format!("bad class '{}'", &row[1])))?;
        let outcome = row[2]
            .parse()
            .ok()
            .and_then(Outcome::from_label)
            .ok_or_else(|| parse_err(format!("bad outcome '{}'", &row[2])))?;
        out.insert(row[0].to_string(), Latent { class, outcome });
    }
    Ok(out)
}

/// Vital signs of the ward preset, in order.
pub const VITAL_STREAMS: [&str; 5] = ["o2_saturation", "heart_rate", "respiratory_rate", "temperature", "systolic_bp"];

fn gp(mean: &[f64], sigma_diag: &[f64], corr: f64, lengthscale: f64, noise_var: f64) -> StationaryGpParams {
    let d = mean.len();
    let cov = DMatrix::from_fn(d, d, |i, j| {
        let s = (sigma_diag[i] * sigma_diag[j]).sqrt();
        if i == j {
            sigma_diag[i]
        } else {
            corr * s
        }
    });
    let chol = cov.cholesky().expect("preset covariance is positive definite").l();
    StationaryGpParams::new(DVector::from_column_slice(mean), chol, lengthscale, noise_var).expect("valid preset")
}

/// Windowed parameters whose mean drifts linearly from `base` in the earliest
/// window to `base + shift` in the window ending at the anchor. Covariance and
/// lengthscale stay those of `base`, so deterioration shows only as a trend.
fn drifting(base: &StationaryGpParams, shift: &[f64], window: WindowConfig) -> WindowedGpParams {
    let w = window.count;
    let windows = (0..w)
        .map(|k| {
            let frac = if w == 1 { 1.0 } else { k as f64 / (w - 1) as f64 };
            base.with_mean(base.mean() + DVector::from_column_slice(shift) * frac)
        })
        .collect();
    WindowedGpParams::new(windows, window.width_hours).expect("valid preset")
}

fn simplex(weights: &[f64]) -> Vec<f64> {
    let t: f64 = weights.iter().sum();
    weights.iter().map(|w| w / t).collect()
}

/// A cohort shaped like a general-ward population: five vital signs, seven
/// admission features, `m_true` latent classes (1 to 4) and the given
/// deteriorating prevalence.
///
/// The second class has a chronically abnormal baseline that resembles the
/// first class shortly before deterioration, so a single pooled expert pair
/// confuses the two while class-specific experts do not.
pub fn ward_like(m_true: usize, prevalence: f64, seed: u64) -> Result<GeneratorConfig> {
    if !(1..=4).contains(&m_true) {
        return Err(Error::Config("the preset supports 1 to 4 classes".into()));
    }
    if !(0.0..1.0).contains(&prevalence) {
        return Err(Error::Config("prevalence must lie in [0, 1)".into()));
    }
    let window = WindowConfig::default();
    // latent units; shifts point toward hypoxia, tachycardia, tachypnea, fever, hypotension
    let base_means: [[f64; 5]; 4] = [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [-1.6, 1.6, 1.6, 0.6, -1.0],
        [0.2, 0.6, 0.4, 1.8, 0.3],
        [-0.4, -1.4, -0.2, -0.4, 1.6],
    ];
    let shifts: [[f64; 5]; 4] = [
        [-1.6, 1.6, 1.6, 0.6, -1.0],
        [-1.2, 1.0, 1.2, 1.8, -2.2],
        [-0.8, 1.6, 1.0, 0.8, -2.0],
        [-1.8, 2.2, 1.4, 0.2, -1.6],
    ];
    let diag: [[f64; 5]; 4] =
        [[0.4, 0.5, 0.4, 0.3, 0.5], [0.6, 0.4, 0.5, 0.4, 0.4], [0.3, 0.6, 0.4, 0.6, 0.4], [0.5, 0.3, 0.3, 0.4, 0.6]];
    let corr = [0.3, -0.2, 0.4, 0.1];
    let ells = [6.0, 10.0, 8.0, 14.0];
    let class_weights = simplex(&[0.4, 0.25, 0.2, 0.15][..m_true]);
    let relative_risk = [1.0, 1.5, 1.2, 1.3];
    let norm: f64 = (0..m_true).map(|k| class_weights[k] * relative_risk[k]).sum();

    let classes = (0..m_true)
        .map(|k| {
            let stable = gp(&base_means[k], &diag[k], corr[k], ells[k], 0.1);
            let deteriorating = drifting(&stable, &shifts[k], window);
            ClassModel {
                weight: class_weights[k],
                deterioration_prob: (prevalence * relative_risk[k] / norm).min(1.0),
                stable,
                deteriorating,
            }
        })
        .collect();

    let per_class = |v: [f64; 4]| v[..m_true].to_vec();
    let cat = |levels: &[&str], probs: [&[f64]; 4]| AdmissionModel::Categorical {
        levels: levels.iter().map(|s| s.to_string()).collect(),
        probs: probs[..m_true].iter().map(|p| simplex(p)).collect(),
    };
    let admission = vec![
        AdmissionFeatureModel {
            name: "transfer_status".into(),
            model: cat(&["direct", "transfer"], [&[0.8, 0.2], &[0.4, 0.6], &[0.7, 0.3], &[0.6, 0.4]]),
        },
        AdmissionFeatureModel {
            name: "gender".into(),
            model: cat(&["female", "male"], [&[0.5, 0.5], &[0.45, 0.55], &[0.55, 0.45], &[0.35, 0.65]]),
        },
        AdmissionFeatureModel {
            name: "age".into(),
            model: AdmissionModel::Numeric {
                mean: per_class([62.0, 48.0, 55.0, 71.0]),
                std: per_class([12.0, 10.0, 14.0, 9.0]),
            },
        },
        AdmissionFeatureModel {
            name: "race".into(),
            model: cat(
                &["white", "black", "asian", "other"],
                [&[0.6, 0.15, 0.15, 0.1], &[0.55, 0.15, 0.2, 0.1], &[0.6, 0.1, 0.2, 0.1], &[0.65, 0.15, 0.1, 0.1]],
            ),
        },
        AdmissionFeatureModel {
            name: "ethnicity".into(),
            model: cat(&["non_hispanic", "hispanic"], [&[0.7, 0.3], &[0.75, 0.25], &[0.7, 0.3], &[0.8, 0.2]]),
        },
        AdmissionFeatureModel {
            name: "stem_cell_transplant".into(),
            model: cat(&["no", "yes"], [&[0.95, 0.05], &[0.1, 0.9], &[0.85, 0.15], &[0.97, 0.03]]),
        },
        AdmissionFeatureModel {
            name: "admission_unit".into(),
            model: cat(
                &["medicine", "surgery", "oncology", "cardiology"],
                [&[0.55, 0.3, 0.05, 0.1], &[0.1, 0.05, 0.8, 0.05], &[0.5, 0.3, 0.15, 0.05], &[0.15, 0.1, 0.05, 0.7]],
            ),
        },
    ];

    let cfg = GeneratorConfig {
        stream_names: VITAL_STREAMS.iter().map(|s| s.to_string()).collect(),
        stream_offset: vec![96.0, 82.0, 18.0, 37.0, 122.0],
        stream_scale: vec![2.0, 12.0, 3.0, 0.5, 15.0],
        classes,
        admission,
        stay: StayModel { log_mean: 60f64.ln(), log_std: 0.7, min_hours: 8.0, max_hours: 400.0 },
        sampling: SamplingModel { interval_hours: 4.0, jitter_hours: 1.0 },
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Stable-only cohort of `m_true` classes on `dim` streams whose means sit
/// `separation` pooled standard deviations apart, with short stays. One
/// numeric admission feature tracks the class.
pub fn separated_classes(m_true: usize, dim: usize, separation: f64, seed: u64) -> Result<GeneratorConfig> {
    if m_true == 0 || dim == 0 {
        return Err(Error::Config("need at least one class and one stream".into()));
    }
    let window = WindowConfig::default();
    let sigma: f64 = 0.5;
    let noise: f64 = 0.1;
    let pooled_std = (sigma + noise).sqrt();
    let step = separation * pooled_std;
    let classes = (0..m_true)
        .map(|k| {
            let mean: Vec<f64> =
                (0..dim).map(|d| if d % 2 == 0 { k as f64 * step } else { -(k as f64) * step }).collect();
            let stable = gp(&mean, &vec![sigma; dim], 0.2, 6.0 + 2.0 * k as f64, noise);
            let deteriorating = drifting(&stable, &vec![1.5; dim], window);
            ClassModel { weight: 1.0 / m_true as f64, deterioration_prob: 0.0, stable, deteriorating }
        })
        .collect();
    let cfg = GeneratorConfig {
        stream_names: (0..dim).map(|d| format!("stream_{}", d + 1)).collect(),
        stream_offset: vec![0.0; dim],
        stream_scale: vec![1.0; dim],
        classes,
        admission: vec![AdmissionFeatureModel {
            name: "score".into(),
            model: AdmissionModel::Numeric {
                mean: (0..m_true).map(|k| k as f64 * 2.0).collect(),
                std: vec![0.5; m_true],
            },
        }],
        stay: StayModel { log_mean: 24f64.ln(), log_std: 0.3, min_hours: 12.0, max_hours: 48.0 },
        sampling: SamplingModel { interval_hours: 4.0, jitter_hours: 1.0 },
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for m in 1..=4 {
            let cfg = ward_like(m, 0.0832, 1).unwrap();
            let prev: f64 = cfg.classes.iter().map(|c| c.weight * c.deterioration_prob).sum();
            assert!((prev - 0.0832).abs() < 1e-12);
        }
        assert_eq!(ward_like(4, 0.0832, 1).unwrap().manifest().unwrap().features().len(), 7);
        separated_classes(3, 2, 3.0, 1).unwrap();
    }

    #[test]
    fn single_class_and_no_deterioration() {
        let cfg = separated_classes(1, 2, 3.0, 4).unwrap();
        let (cohort, latent) = generate_cohort(&cfg, 30).unwrap();
        assert!(latent.iter().all(|l| l.class == 0 && l.outcome == Outcome::Stable));
        assert_eq!(cohort.len(), 30);
    }

    #[test]
    fn times_increase_per_stream_and_stay_within_bounds() {
        let cfg = ward_like(2, 0.3, 8).unwrap();
        let (cohort, _) = generate_cohort(&cfg, 20).unwrap();
        for p in &cohort.patients {
            for d in 0..5 {
                let t: Vec<f64> = p.observations.iter().filter(|o| o.stream == d).map(|o| o.time).collect();
                assert!(t.windows(2).all(|w| w[1] > w[0]));
                assert!(t.iter().all(|&x| x >= 0.0 && x <= p.stay_length_hours));
            }
        }
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ward_like(3, 0.1, 2).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: GeneratorConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
