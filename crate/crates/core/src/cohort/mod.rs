//! Patient records, cohort containers and admission-feature encoding.
//!
//! A cohort holds irregularly sampled multi-stream observations for each
//! patient together with static admission features, the ward-stay length and
//! the binary outcome (0 = discharged, 1 = transferred to intensive care).

mod io;
mod normalize;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_cohort, load_patient_json, read_cohort, read_patient_json, save_cohort, write_cohort, write_patient_json,
    MEASUREMENTS_FILE, PATIENTS_FILE,
};
pub use normalize::{apply_normalization, fit_normalization, invert_normalization, NormalizationStats, STD_FLOOR};

/// One measurement of one physiological stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub stream: usize,
    /// Hours since ward admission.
    pub time: f64,
    pub value: f64,
}

/// Clinical outcome label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Stable,
    Deteriorating,
}

impl Outcome {
    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            0 => Some(Outcome::Stable),
            1 => Some(Outcome::Deteriorating),
            _ => None,
        }
    }

    pub fn label(self) -> u8 {
        match self {
            Outcome::Stable => 0,
            Outcome::Deteriorating => 1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Outcome::Deteriorating
    }
}

/// Which patients a subset operation selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeFilter {
    All,
    Only(Outcome),
}

impl OutcomeFilter {
    pub fn accepts(self, outcome: Outcome) -> bool {
        match self {
            OutcomeFilter::All => true,
            OutcomeFilter::Only(o) => o == outcome,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    /// The first level is the reference level and gets no column.
    Categorical {
        levels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

/// Raw (decoded) admission feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdmissionValue {
    Number(f64),
    Level(String),
}

/// What a column of the encoded admission vector means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Numeric,
    Indicator,
    Intercept,
}

/// Maps named admission features to the encoded real vector: numeric
/// features pass through, categoricals are one-hot with the first level
/// dropped, and a trailing constant-1 intercept column is appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncodingManifest {
    features: Vec<FeatureSpec>,
}

impl EncodingManifest {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Config(format!("duplicate admission feature '{}'", f.name)));
            }
            if let FeatureKind::Categorical { levels } = &f.kind {
                if levels.is_empty() {
                    return Err(Error::Config(format!("feature '{}' declares no levels", f.name)));
                }
                let distinct: std::collections::BTreeSet<_> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(Error::Config(format!("feature '{}' repeats a level", f.name)));
                }
            }
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    /// Encoded dimension including the intercept.
    pub fn encoded_len(&self) -> usize {
        self.features
            .iter()
            .map(|f| match &f.kind {
                FeatureKind::Numeric => 1,
                FeatureKind::Categorical { levels } => levels.len() - 1,
            })
            .sum::<usize>()
            + 1
    }

    pub fn column_roles(&self) -> Vec<ColumnRole> {
        let mut roles = Vec::with_capacity(self.encoded_len());
        for f in &self.features {
            match &f.kind {
                FeatureKind::Numeric => roles.push(ColumnRole::Numeric),
                FeatureKind::Categorical { levels } => {
                    roles.extend(std::iter::repeat_n(ColumnRole::Indicator, levels.len() - 1))
                }
            }
        }
        roles.push(ColumnRole::Intercept);
        roles
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.encoded_len());
        for f in &self.features {
            match &f.kind {
                FeatureKind::Numeric => names.push(f.name.clone()),
                FeatureKind::Categorical { levels } => {
                    names.extend(levels[1..].iter().map(|l| format!("{}={}", f.name, l)))
                }
            }
        }
        names.push("(intercept)".to_string());
        names
    }

    pub fn encode(&self, raw: &BTreeMap<String, AdmissionValue>) -> Result<Vec<f64>> {
        for key in raw.keys() {
            if !self.features.iter().any(|f| &f.name == key) {
                return Err(Error::ManifestMismatch(format!(
                    "unknown admission feature '{key}' (valid: {})",
                    self.feature_names().join(", ")
                )));
            }
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        for f in &self.features {
            let value = raw
                .get(&f.name)
                .ok_or_else(|| Error::ManifestMismatch(format!("missing admission feature '{}'", f.name)))?;
            match (&f.kind, value) {
                (FeatureKind::Numeric, AdmissionValue::Number(x)) if x.is_finite() => out.push(*x),
                (FeatureKind::Categorical { levels }, AdmissionValue::Level(level)) => {
                    let idx = levels.iter().position(|l| l == level).ok_or_else(|| {
                        Error::ManifestMismatch(format!(
                            "feature '{}' has no level '{}' (levels: {})",
                            f.name,
                            level,
                            levels.join(", ")
                        ))
                    })?;
                    out.extend((1..levels.len()).map(|j| if j == idx { 1.0 } else { 0.0 }));
                }
                _ => {
                    return Err(Error::ManifestMismatch(format!(
                        "admission feature '{}' has a value of the wrong kind",
                        f.name
                    )))
                }
            }
        }
        out.push(1.0);
        Ok(out)
    }

    /// Inverse of [`encode`](Self::encode) for raw-unit vectors.
    pub fn decode(&self, encoded: &[f64]) -> Result<BTreeMap<String, AdmissionValue>> {
        if encoded.len() != self.encoded_len() {
            return Err(Error::DimensionMismatch(format!(
                "encoded admission vector has length {}, manifest expects {}",
                encoded.len(),
                self.encoded_len()
            )));
        }
        let mut out = BTreeMap::new();
        let mut pos = 0;
        for f in &self.features {
            match &f.kind {
                FeatureKind::Numeric => {
                    out.insert(f.name.clone(), AdmissionValue::Number(encoded[pos]));
                    pos += 1;
                }
                FeatureKind::Categorical { levels } => {
                    let k = levels.len() - 1;
                    let hot = encoded[pos..pos + k].iter().position(|&x| x == 1.0);
                    let level = match hot {
                        Some(j) => &levels[j + 1],
                        None => &levels[0],
                    };
                    out.insert(f.name.clone(), AdmissionValue::Level(level.clone()));
                    pos += k;
                }
            }
        }
        Ok(out)
    }

    /// Parse a `name=value` override against this manifest's feature kinds.
    pub fn parse_value(&self, name: &str, text: &str) -> Result<AdmissionValue> {
        let spec = self.features.iter().find(|f| f.name == name).ok_or_else(|| {
            Error::ManifestMismatch(format!(
                "unknown admission feature '{name}' (valid: {})",
                self.feature_names().join(", ")
            ))
        })?;
        match &spec.kind {
            FeatureKind::Numeric => text
                .trim()
                .parse::<f64>()
                .map(AdmissionValue::Number)
                .map_err(|_| Error::InvalidArgument(format!("feature '{name}' expects a number, got '{text}'"))),
            FeatureKind::Categorical { .. } => Ok(AdmissionValue::Level(text.to_string())),
        }
    }
}

/// Encoded admission features of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionVector {
    pub features: Vec<f64>,
    pub manifest: Arc<EncodingManifest>,
}

impl AdmissionVector {
    pub fn encode(manifest: Arc<EncodingManifest>, raw: &BTreeMap<String, AdmissionValue>) -> Result<Self> {
        let features = manifest.encode(raw)?;
        Ok(Self { features, manifest })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    /// Sorted by `(time, stream)`.
    pub observations: Vec<Observation>,
    pub admission: AdmissionVector,
    pub stay_length_hours: f64,
    pub outcome: Outcome,
}

impl PatientRecord {
    pub fn new(
        id: impl Into<String>,
        mut observations: Vec<Observation>,
        admission: AdmissionVector,
        stay_length_hours: f64,
        outcome: Outcome,
    ) -> Result<Self> {
        let id = id.into();
        sort_observations(&mut observations);
        let record = Self { id, observations, admission, stay_length_hours, outcome };
        record.validate(None)?;
        Ok(record)
    }

    fn validate(&self, num_streams: Option<usize>) -> Result<()> {
        let fail = |message: String| Err(Error::InvalidPatient { id: self.id.clone(), message });
        if !(self.stay_length_hours.is_finite() && self.stay_length_hours > 0.0) {
            return fail(format!("stay length {} is not a positive number of hours", self.stay_length_hours));
        }
        if self.observations.is_empty() {
            return fail("patient has no observations".into());
        }
        for obs in &self.observations {
            if !(obs.time.is_finite() && obs.value.is_finite()) {
                return fail(format!("non-finite observation at time {}", obs.time));
            }
            if obs.time < 0.0 {
                return fail(format!("negative observation time {}", obs.time));
            }
            if obs.time > self.stay_length_hours {
                return fail(format!("observation time {} exceeds stay length {}", obs.time, self.stay_length_hours));
            }
            if let Some(d) = num_streams {
                if obs.stream >= d {
                    return fail(format!("stream index {} out of range (D = {d})", obs.stream));
                }
            }
        }
        if self.observations.windows(2).any(|w| (w[0].time, w[0].stream) > (w[1].time, w[1].stream)) {
            return fail("observations are not sorted by (time, stream)".into());
        }
        Ok(())
    }

    /// Time of the last observation.
    pub fn last_time(&self) -> f64 {
        self.observations.last().map_or(0.0, |o| o.time)
    }
}

pub(crate) fn sort_observations(obs: &mut [Observation]) {
    obs.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.stream.cmp(&b.stream)));
}

/// A set of patients sharing streams and admission schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub stream_names: Vec<String>,
    pub manifest: Arc<EncodingManifest>,
    pub patients: Vec<PatientRecord>,
}

impl Cohort {
    pub fn new(
        stream_names: Vec<String>,
        manifest: Arc<EncodingManifest>,
        patients: Vec<PatientRecord>,
    ) -> Result<Self> {
        let cohort = Self { stream_names, manifest, patients };
        cohort.validate()?;
        Ok(cohort)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stream_names.is_empty() {
            return Err(Error::Config("cohort declares no streams".into()));
        }
        let s = self.manifest.encoded_len();
        let mut ids = std::collections::BTreeSet::new();
        for p in &self.patients {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::InvalidPatient { id: p.id.clone(), message: "duplicate patient id".into() });
            }
            if p.admission.manifest != self.manifest || p.admission.len() != s {
                return Err(Error::ManifestMismatch(format!(
                    "patient '{}' admission vector does not follow the cohort manifest",
                    p.id
                )));
            }
            p.validate(Some(self.stream_names.len()))?;
        }
        Ok(())
    }

    /// Number of physiological streams `D`.
    pub fn num_streams(&self) -> usize {
        self.stream_names.len()
    }

    /// Encoded admission dimension `S` (including the intercept).
    pub fn num_features(&self) -> usize {
        self.manifest.encoded_len()
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn indices(&self, filter: OutcomeFilter) -> Vec<usize> {
        (0..self.patients.len()).filter(|&i| filter.accepts(self.patients[i].outcome)).collect()
    }

    /// New cohort holding the given patients in the given order.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            stream_names: self.stream_names.clone(),
            manifest: self.manifest.clone(),
            patients: indices.iter().map(|&i| self.patients[i].clone()).collect(),
        }
    }

    pub fn filter(&self, filter: OutcomeFilter) -> Cohort {
        self.subset(&self.indices(filter))
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.patients.iter().filter(|p| p.outcome == outcome).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn manifest() -> Arc<EncodingManifest> {
        Arc::new(
            EncodingManifest::new(vec![
                FeatureSpec { name: "age".into(), kind: FeatureKind::Numeric },
                FeatureSpec {
                    name: "unit".into(),
                    kind: FeatureKind::Categorical { levels: vec!["a".into(), "b".into(), "c".into()] },
                },
            ])
            .unwrap(),
        )
    }

    fn raw(age: f64, unit: &str) -> BTreeMap<String, AdmissionValue> {
        BTreeMap::from([
            ("age".to_string(), AdmissionValue::Number(age)),
            ("unit".to_string(), AdmissionValue::Level(unit.to_string())),
        ])
    }

    #[test]
    fn one_hot_drops_first_level_and_appends_intercept() {
        let m = manifest();
        assert_eq!(m.encoded_len(), 4);
        assert_eq!(m.encode(&raw(40.0, "a")).unwrap(), vec![40.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.encode(&raw(40.0, "c")).unwrap(), vec![40.0, 0.0, 1.0, 1.0]);
        assert_eq!(m.column_names(), vec!["age", "unit=b", "unit=c", "(intercept)"]);
        let back = m.decode(&[40.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(back, raw(40.0, "b"));
    }

    #[test]
    fn encode_rejects_unknown_level_and_feature() {
        let m = manifest();
        assert!(m.encode(&raw(1.0, "zzz")).is_err());
        let mut r = raw(1.0, "a");
        r.insert("height".into(), AdmissionValue::Number(2.0));
        assert!(matches!(m.encode(&r), Err(Error::ManifestMismatch(_))));
    }

    #[test]
    fn patient_invariants_are_checked() {
        let m = manifest();
        let adm = AdmissionVector::encode(m, &raw(50.0, "a")).unwrap();
        let obs = vec![
            Observation { stream: 1, time: 2.0, value: 1.0 },
            Observation { stream: 0, time: 2.0, value: 1.0 },
            Observation { stream: 0, time: 1.0, value: 1.0 },
        ];
        let p = PatientRecord::new("p", obs.clone(), adm.clone(), 10.0, Outcome::Stable).unwrap();
        let order: Vec<_> = p.observations.iter().map(|o| (o.time, o.stream)).collect();
        assert_eq!(order, vec![(1.0, 0), (2.0, 0), (2.0, 1)]);
        assert!(PatientRecord::new("p", obs.clone(), adm.clone(), 1.5, Outcome::Stable).is_err());
        assert!(PatientRecord::new("p", vec![], adm.clone(), 1.5, Outcome::Stable).is_err());
        let neg = vec![Observation { stream: 0, time: -1.0, value: 0.0 }];
        assert!(PatientRecord::new("p", neg, adm, 1.5, Outcome::Stable).is_err());
    }

    #[test]
    fn outcome_subsets_partition_the_cohort() {
        let m = manifest();
        let mk = |id: &str, o| {
            let adm = AdmissionVector::encode(m.clone(), &raw(1.0, "a")).unwrap();
            PatientRecord::new(id, vec![Observation { stream: 0, time: 0.0, value: 0.0 }], adm, 1.0, o).unwrap()
        };
        let c = Cohort::new(
            vec!["hr".into()],
            m.clone(),
            vec![mk("a", Outcome::Stable), mk("b", Outcome::Deteriorating), mk("c", Outcome::Stable)],
        )
        .unwrap();
        let s = c.indices(OutcomeFilter::Only(Outcome::Stable));
        let d = c.indices(OutcomeFilter::Only(Outcome::Deteriorating));
        assert_eq!(s, vec![0, 2]);
        assert_eq!(d, vec![1]);
        assert_eq!(s.len() + d.len(), c.len());
    }
}
