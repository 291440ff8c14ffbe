//! Cohort file formats.
//!
//! `measurements.csv` holds one observation per row with header
//! `patient_id,stream,time_hours,value`. `patients.jsonl` starts with a
//! header object declaring `stream_names` and `admission_features`, then holds
//! one JSON object per patient line: `id`, `stay_length_hours`, `outcome`
//! (0/1) and an `admission` map from feature name to value.
//!
//! A single patient can also travel as one self-describing JSON document
//! (see [`read_patient_json`]).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    sort_observations, AdmissionValue, AdmissionVector, Cohort, EncodingManifest, FeatureSpec, Observation, Outcome,
    PatientRecord,
};
use crate::error::{Error, Result};

pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const PATIENTS_FILE: &str = "patients.jsonl";
const MEASUREMENTS_HEADER: [&str; 4] = ["patient_id", "stream", "time_hours", "value"];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientsHeader {
    stream_names: Vec<String>,
    admission_features: Vec<FeatureSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientLine {
    id: String,
    stay_length_hours: f64,
    outcome: u8,
    admission: BTreeMap<String, AdmissionValue>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Load a cohort from a measurements file and a patients file.
pub fn load_cohort(measurements_path: &Path, patients_path: &Path) -> Result<Cohort> {
    let m = open(measurements_path)?;
    let p = open(patients_path)?;
    read_cohort(m, &measurements_path.display().to_string(), p, &patients_path.display().to_string())
}

/// Parse a cohort from readers; `*_name` values are used in error messages.
pub fn read_cohort<M: Read, P: Read>(
    measurements: M,
    measurements_name: &str,
    patients: P,
    patients_name: &str,
) -> Result<Cohort> {
    let parse_err = |file: &str, line: u64, message: String| Error::Parse { file: file.to_string(), line, message };

    let mut header: Option<(Vec<String>, Arc<EncodingManifest>)> = None;
    let mut records: Vec<(String, f64, Outcome, BTreeMap<String, AdmissionValue>)> = Vec::new();
    for (n, line) in BufReader::new(patients).lines().enumerate() {
        let lineno = n as u64 + 1;
        let line = line.map_err(|e| parse_err(patients_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: PatientsHeader =
                serde_json::from_str(&line).map_err(|e| parse_err(patients_name, lineno, e.to_string()))?;
            let manifest = EncodingManifest::new(h.admission_features)
                .map_err(|e| parse_err(patients_name, lineno, e.to_string()))?;
            header = Some((h.stream_names, Arc::new(manifest)));
            continue;
        }
        let rec: PatientLine =
            serde_json::from_str(&line).map_err(|e| parse_err(patients_name, lineno, e.to_string()))?;
        let outcome = Outcome::from_label(rec.outcome)
            .ok_or_else(|| parse_err(patients_name, lineno, format!("outcome must be 0 or 1, got {}", rec.outcome)))?;
        records.push((rec.id, rec.stay_length_hours, outcome, rec.admission));
    }
    let (stream_names, manifest) =
        header.ok_or_else(|| parse_err(patients_name, 1, "missing cohort header line".into()))?;
    let stream_index: HashMap<&str, usize> = stream_names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if stream_index.len() != stream_names.len() {
        return Err(parse_err(patients_name, 1, "duplicate stream name in header".into()));
    }
    let patient_index: HashMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.0.as_str(), i)).collect();
    if patient_index.len() != records.len() {
        return Err(parse_err(patients_name, 0, "duplicate patient id".into()));
    }

    let mut observations: Vec<Vec<Observation>> = vec![Vec::new(); records.len()];
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(measurements);
    let hdr = reader.headers().map_err(|e| parse_err(measurements_name, 1, e.to_string()))?;
    if hdr.iter().collect::<Vec<_>>() != MEASUREMENTS_HEADER {
        return Err(parse_err(measurements_name, 1, format!("expected header '{}'", MEASUREMENTS_HEADER.join(","))));
    }
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(measurements_name, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let pid = field(0);
        let &pi = patient_index.get(pid).ok_or_else(|| Error::UnknownPatient { id: pid.to_string(), line })?;
        let &stream = stream_index
            .get(field(1))
            .ok_or_else(|| parse_err(measurements_name, line, format!("unknown stream '{}'", field(1))))?;
        let num = |i: usize, what: &str| -> Result<f64> {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| parse_err(measurements_name, line, format!("invalid {what} '{}'", field(i))))?;
            if !v.is_finite() {
                return Err(parse_err(measurements_name, line, format!("non-finite {what}")));
            }
            Ok(v)
        };
        let time = num(2, "time")?;
        let value = num(3, "value")?;
        observations[pi].push(Observation { stream, time, value });
    }

    let mut patients = Vec::with_capacity(records.len());
    for ((id, stay, outcome, admission), mut obs) in records.into_iter().zip(observations) {
        if obs.is_empty() {
            log::warn!("dropping patient '{id}': no observations");
            continue;
        }
        sort_observations(&mut obs);
        let admission = AdmissionVector::encode(manifest.clone(), &admission)
            .map_err(|e| Error::InvalidPatient { id: id.clone(), message: e.to_string() })?;
        patients.push(PatientRecord::new(id, obs, admission, stay, outcome)?);
    }
    Cohort::new(stream_names, manifest, patients)
}

/// Serialize a cohort into the two documented formats.
pub fn write_cohort<M: Write, P: Write>(cohort: &Cohort, mut measurements: M, mut patients: P) -> Result<()> {
    let io = |source| Error::Io { path: "<writer>".into(), source };
    let header = PatientsHeader {
        stream_names: cohort.stream_names.clone(),
        admission_features: cohort.manifest.features().to_vec(),
    };
    writeln!(patients, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
    writeln!(measurements, "{}", MEASUREMENTS_HEADER.join(",")).map_err(io)?;
    for p in &cohort.patients {
        let line = PatientLine {
            id: p.id.clone(),
            stay_length_hours: p.stay_length_hours,
            outcome: p.outcome.label(),
            admission: cohort.manifest.decode(&p.admission.features)?,
        };
        writeln!(patients, "{}", serde_json::to_string(&line).expect("record serializes")).map_err(io)?;
        for o in &p.observations {
            writeln!(measurements, "{},{},{:?},{:?}", csv_field(&p.id), cohort.stream_names[o.stream], o.time, o.value)
                .map_err(io)?;
        }
    }
    Ok(())
}

fn csv_field(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"")).into()
    } else {
        s.into()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientMeasurement {
    stream: String,
    time_hours: f64,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientDocument {
    stream_names: Vec<String>,
    admission_features: Vec<FeatureSpec>,
    id: String,
    stay_length_hours: f64,
    outcome: u8,
    admission: BTreeMap<String, AdmissionValue>,
    measurements: Vec<PatientMeasurement>,
}

/// Parse a single-patient document: the cohort header fields plus one
/// patient's fields and a `measurements` array of `{stream, time_hours,
/// value}`. Returns a one-patient cohort.
pub fn read_patient_json<R: Read>(reader: R, name: &str) -> Result<Cohort> {
    let doc: PatientDocument = serde_json::from_reader(reader).map_err(|e| Error::Parse {
        file: name.to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let manifest = Arc::new(EncodingManifest::new(doc.admission_features)?);
    let outcome = Outcome::from_label(doc.outcome).ok_or_else(|| Error::InvalidPatient {
        id: doc.id.clone(),
        message: format!("outcome must be 0 or 1, got {}", doc.outcome),
    })?;
    let mut obs = Vec::with_capacity(doc.measurements.len());
    for m in &doc.measurements {
        let stream = doc.stream_names.iter().position(|s| *s == m.stream).ok_or_else(|| Error::InvalidPatient {
            id: doc.id.clone(),
            message: format!("unknown stream '{}'", m.stream),
        })?;
        obs.push(Observation { stream, time: m.time_hours, value: m.value });
    }
    sort_observations(&mut obs);
    let admission = AdmissionVector::encode(manifest.clone(), &doc.admission)
        .map_err(|e| Error::InvalidPatient { id: doc.id.clone(), message: e.to_string() })?;
    let patient = PatientRecord::new(doc.id, obs, admission, doc.stay_length_hours, outcome)?;
    Cohort::new(doc.stream_names, manifest, vec![patient])
}

pub fn load_patient_json(path: &Path) -> Result<Cohort> {
    read_patient_json(BufReader::new(open(path)?), &path.display().to_string())
}

/// Serialize patient `index` of `cohort` as a single-patient document.
pub fn write_patient_json<W: Write>(cohort: &Cohort, index: usize, out: W) -> Result<()> {
    let p = cohort
        .patients
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(format!("patient index {index} out of range")))?;
    let doc = PatientDocument {
        stream_names: cohort.stream_names.clone(),
        admission_features: cohort.manifest.features().to_vec(),
        id: p.id.clone(),
        stay_length_hours: p.stay_length_hours,
        outcome: p.outcome.label(),
        admission: cohort.manifest.decode(&p.admission.features)?,
        measurements: p
            .observations
            .iter()
            .map(|o| PatientMeasurement {
                stream: cohort.stream_names[o.stream].clone(),
                time_hours: o.time,
                value: o.value,
            })
            .collect(),
    };
    serde_json::to_writer_pretty(out, &doc).map_err(|e| Error::Io { path: "<writer>".into(), source: e.into() })
}

/// Write `measurements.csv` and `patients.jsonl` into `dir`.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    let create = |name: &str| {
        let path = dir.join(name);
        File::create(&path).map_err(|source| Error::Io { path, source })
    };
    let m = std::io::BufWriter::new(create(MEASUREMENTS_FILE)?);
    let p = std::io::BufWriter::new(create(PATIENTS_FILE)?);
    write_cohort(cohort, m, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PATIENTS: &str = r#"{"stream_names":["O2 saturation","heart rate"],"admission_features":[{"name":"age","kind":"numeric"},{"name":"gender","kind":"categorical","levels":["F","M"]}]}
{"id":"p1","stay_length_hours":24.0,"outcome":0,"admission":{"age":52.0,"gender":"M"}}
{"id":"p2","stay_length_hours":10.5,"outcome":1,"admission":{"age":34.0,"gender":"F"}}
"#;

    const MEASUREMENTS: &str = "patient_id,stream,time_hours,value
p1,heart rate,4.0,80
p1,O2 saturation,4.0,97
p1,heart rate,0.5,75
p2,O2 saturation,10.5,91.25
";

    fn parse(m: &str, p: &str) -> Result<Cohort> {
        read_cohort(m.as_bytes(), "m.csv", p.as_bytes(), "p.jsonl")
    }

    #[test]
    fn two_patient_fixture_loads_sorted() {
        let c = parse(MEASUREMENTS, PATIENTS).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.num_streams(), 2);
        assert_eq!(c.num_features(), 3);
        let p1 = &c.patients[0];
        let order: Vec<_> = p1.observations.iter().map(|o| (o.time, o.stream)).collect();
        assert_eq!(order, vec![(0.5, 1), (4.0, 0), (4.0, 1)]);
        assert_eq!(p1.admission.features, vec![52.0, 1.0, 1.0]);
        assert_eq!(c.patients[1].outcome, Outcome::Deteriorating);
    }

    #[test]
    fn patient_document_round_trip() {
        let c = parse(MEASUREMENTS, PATIENTS).unwrap();
        let mut buf = Vec::new();
        write_patient_json(&c, 0, &mut buf).unwrap();
        let one = read_patient_json(buf.as_slice(), "p.json").unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.stream_names, c.stream_names);
        assert_eq!(one.patients[0].observations, c.patients[0].observations);
        assert_eq!(one.patients[0].admission.features, c.patients[0].admission.features);
    }

    #[test]
    fn time_beyond_stay_names_patient() {
        let bad = MEASUREMENTS.replace("p2,O2 saturation,10.5", "p2,O2 saturation,11.0");
        match parse(&bad, PATIENTS) {
            Err(Error::InvalidPatient { id, .. }) => assert_eq!(id, "p2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_patient_reports_line() {
        let bad = format!("{MEASUREMENTS}p9,heart rate,1.0,2.0\n");
        match parse(&bad, PATIENTS) {
            Err(Error::UnknownPatient { id, line }) => {
                assert_eq!(id, "p9");
                assert_eq!(line, 6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_number_reports_line() {
        let bad = MEASUREMENTS.replace("0.5,75", "0.5,abc");
        match parse(&bad, PATIENTS) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_patients_are_dropped() {
        let m = "patient_id,stream,time_hours,value\np1,heart rate,1.0,80\n";
        let c = parse(m, PATIENTS).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.patients[0].id, "p1");
    }

    #[test]
    fn five_vital_streams_keep_declared_order() {
        let names = ["O2 saturation", "heart rate", "respiratory rate", "temperature", "systolic blood pressure"];
        let header = format!(
            "{{\"stream_names\":{},\"admission_features\":[]}}\n{{\"id\":\"a\",\"stay_length_hours\":8.0,\"outcome\":0,\"admission\":{{}}}}\n",
            serde_json::to_string(&names).unwrap()
        );
        let mut m = String::from("patient_id,stream,time_hours,value\n");
        for (k, n) in names.iter().rev().enumerate() {
            m.push_str(&format!("a,{n},{k}.0,1.0\n"));
        }
        let c = parse(&m, &header).unwrap();
        assert_eq!(c.stream_names, names);
        assert_eq!(c.num_features(), 1);
    }

    #[test]
    fn load_save_load_is_idempotent() {
        let c = parse(MEASUREMENTS, PATIENTS).unwrap();
        let (mut m1, mut p1) = (Vec::new(), Vec::new());
        write_cohort(&c, &mut m1, &mut p1).unwrap();
        let c2 = read_cohort(&m1[..], "m", &p1[..], "p").unwrap();
        assert_eq!(c, c2);
        let (mut m2, mut p2) = (Vec::new(), Vec::new());
        write_cohort(&c2, &mut m2, &mut p2).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(p1, p2);
    }
}
