use crate::cohort::{Observation, PatientRecord};
use crate::error::{Error, Result};

/// Vectorized observations of one patient: `(stream, time)` index plus values.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBlock {
    pub index: Vec<(usize, f64)>,
    pub values: Vec<f64>,
}

impl ObservationBlock {
    pub fn new(index: Vec<(usize, f64)>, values: Vec<f64>) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::InvalidArgument("observation block is empty".into()));
        }
        if index.len() != values.len() {
            return Err(Error::DimensionMismatch(format!("{} index entries but {} values", index.len(), values.len())));
        }
        if index.iter().any(|(_, t)| !t.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("observation block has non-finite entries".into()));
        }
        Ok(Self { index, values })
    }

    pub fn from_observations(obs: &[Observation]) -> Result<Self> {
        Self::new(obs.iter().map(|o| (o.stream, o.time)).collect(), obs.iter().map(|o| o.value).collect())
    }

    pub fn from_patient(p: &PatientRecord) -> Result<Self> {
        Self::from_observations(&p.observations)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Same observations with times re-expressed as `t - anchor`.
    pub fn shifted(&self, anchor: f64) -> Self {
        Self { index: self.index.iter().map(|&(d, t)| (d, t - anchor)).collect(), values: self.values.clone() }
    }

    /// Entries whose position satisfies `keep`; `None` when nothing is kept.
    pub fn select(&self, mut keep: impl FnMut(usize, f64) -> bool) -> Option<Self> {
        let mut index = Vec::new();
        let mut values = Vec::new();
        for (&(d, t), &v) in self.index.iter().zip(&self.values) {
            if keep(d, t) {
                index.push((d, t));
                values.push(v);
            }
        }
        (!index.is_empty()).then_some(Self { index, values })
    }

    pub fn max_stream(&self) -> usize {
        self.index.iter().map(|&(d, _)| d).max().unwrap_or(0)
    }
}
