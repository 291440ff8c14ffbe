use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use mogp_cli::BundleFile;
use mogp_risk::cohort::{load_cohort, write_patient_json, MEASUREMENTS_FILE, PATIENTS_FILE};
use mogp_risk::synth::LATENT_FILE;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mogp")).arg("-q").args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "mogp {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "mogp {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const FAST: [&str; 4] = ["--m-max", "2", "--opt-max-iter", "25"];

struct Fixture {
    root: PathBuf,
    cohort: PathBuf,
    bundle: PathBuf,
    patient: PathBuf,
}

/// A small generated cohort, a bundle trained on it and one patient file.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-fixture");
        let _ = std::fs::remove_dir_all(&root);
        std::fs::create_dir_all(&root).unwrap();
        let cohort = root.join("cohort");
        ok(&[
            "generate",
            "--preset",
            "ward",
            "--m-true",
            "2",
            "--prevalence",
            "0.25",
            "--max-stay-hours",
            "36",
            "-n",
            "60",
            "--seed",
            "4",
            "--out",
            s(&cohort),
        ]);
        let bundle = root.join("model.json");
        ok(&[&["train", "--cohort", s(&cohort), "--out", s(&bundle), "--seed", "1"][..], &FAST].concat());
        let c = load_cohort(&cohort.join(MEASUREMENTS_FILE), &cohort.join(PATIENTS_FILE)).unwrap();
        let patient = root.join("patient.json");
        write_patient_json(&c, 0, std::fs::File::create(&patient).unwrap()).unwrap();
        Fixture { root, cohort, bundle, patient }
    })
}

fn scratch(name: &str) -> PathBuf {
    let p = fixture().root.join(name);
    let _ = std::fs::remove_dir_all(&p);
    p
}

#[test]
fn generate_writes_cohort_files() {
    let f = fixture();
    for name in [MEASUREMENTS_FILE, PATIENTS_FILE, LATENT_FILE] {
        assert!(f.cohort.join(name).is_file(), "{name} missing");
    }
    let jsonl = std::fs::read_to_string(f.cohort.join(PATIENTS_FILE)).unwrap();
    // one header line, then one line per patient
    assert_eq!(jsonl.lines().count(), 61);
    let latent = std::fs::read_to_string(f.cohort.join(LATENT_FILE)).unwrap();
    assert_eq!(latent.lines().count(), 61);
}

#[test]
fn generate_is_reproducible() {
    let (a, b) = (scratch("gen-a"), scratch("gen-b"));
    for dir in [&a, &b] {
        ok(&["generate", "--preset", "separated", "--m-true", "2", "-n", "30", "--seed", "9", "--out", s(dir)]);
    }
    for name in [MEASUREMENTS_FILE, PATIENTS_FILE, LATENT_FILE] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn generate_reports_missing_config() {
    let out = scratch("gen-missing");
    let err = fails(&["generate", "--config", "/nonexistent/gen.json", "-n", "5", "--out", s(&out)]);
    assert!(err.contains("/nonexistent/gen.json"), "{err}");
    assert!(!out.join(MEASUREMENTS_FILE).exists());
}

#[test]
fn bundle_survives_load_and_save_unchanged() {
    let f = fixture();
    let original = std::fs::read(&f.bundle).unwrap();
    let bundle = BundleFile::load(&f.bundle).unwrap();
    let again = scratch("resaved.json");
    BundleFile::save(&bundle, &again).unwrap();
    assert_eq!(original, std::fs::read(&again).unwrap());
}

#[test]
fn rejects_foreign_bundle_version() {
    let f = fixture();
    let text = std::fs::read_to_string(&f.bundle).unwrap().replacen("\"version\": 1", "\"version\": 99", 1);
    let path = scratch("future.json");
    std::fs::write(&path, text).unwrap();
    let err = fails(&["score", "--bundle", s(&path), "--input", s(&f.patient), "--out", s(&scratch("never"))]);
    assert!(err.contains("version 99"), "{err}");
}

#[test]
fn single_expert_cap_computes_no_bayes_factor() {
    let f = fixture();
    let out = scratch("m1.json");
    let stdout = ok(&["train", "--cohort", s(&f.cohort), "--out", s(&out), "--m-max", "1", "--opt-max-iter", "25"]);
    assert!(stdout.contains("none computed"), "{stdout}");
    assert_eq!(BundleFile::load(&out).unwrap().num_experts(), 1);
}

#[test]
fn scoring_one_patient_gives_one_row_per_observation_time() {
    let f = fixture();
    let out = scratch("scores-one");
    ok(&["score", "--bundle", s(&f.bundle), "--input", s(&f.patient), "--out", s(&out)]);
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 1);
    let patient = mogp_risk::cohort::load_patient_json(&f.patient).unwrap();
    let mut times: Vec<f64> = patient.patients[0].observations.iter().map(|o| o.time).collect();
    times.dedup();
    let text = std::fs::read_to_string(&files[0]).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("time_hours,expert_1") && header.ends_with(",aggregate"), "{header}");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), times.len());
    for row in rows {
        let agg: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&agg));
    }
}

#[test]
fn rescoring_is_byte_identical() {
    let f = fixture();
    let (a, b) = (scratch("rescore-a"), scratch("rescore-b"));
    for dir in [&a, &b] {
        ok(&["score", "--bundle", s(&f.bundle), "--input", s(&f.cohort), "--out", s(dir), "--schedule", "endpoint"]);
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 60);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap());
    }
}

#[test]
fn fixed_interval_needs_an_interval() {
    let f = fixture();
    let out = scratch("interval");
    fails(&[
        "score",
        "--bundle",
        s(&f.bundle),
        "--input",
        s(&f.patient),
        "--out",
        s(&out),
        "--schedule",
        "fixed-interval",
    ]);
    ok(&[
        "score",
        "--bundle",
        s(&f.bundle),
        "--input",
        s(&f.patient),
        "--out",
        s(&out),
        "--schedule",
        "fixed-interval",
        "--interval-hours",
        "4",
        "--plot-data",
    ]);
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 2);
}

#[test]
fn stream_mismatch_is_named() {
    let f = fixture();
    let text = std::fs::read_to_string(&f.patient).unwrap().replace("heart_rate", "pulse");
    let path = scratch("renamed.json");
    std::fs::write(&path, text).unwrap();
    let out = scratch("renamed-out");
    let err = fails(&["score", "--bundle", s(&f.bundle), "--input", s(&path), "--out", s(&out)]);
    assert!(err.contains("stream names differ") && err.contains("pulse"), "{err}");
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn unchanged_override_leaves_traces_equal() {
    let f = fixture();
    let out = scratch("same.csv");
    let patient = mogp_risk::cohort::load_patient_json(&f.patient).unwrap();
    let raw = patient.manifest.decode(&patient.patients[0].admission.features).unwrap();
    let age = match &raw["age"] {
        mogp_risk::cohort::AdmissionValue::Number(x) => *x,
        other => panic!("age is {other:?}"),
    };
    let set = format!("age={age}");
    ok(&["whatif", "--bundle", s(&f.bundle), "--input", s(&f.patient), "--set", &set, "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    for row in text.lines().skip(1) {
        let v: Vec<&str> = row.split(',').collect();
        assert_eq!(v[1], v[2], "{row}");
    }
}

#[test]
fn unknown_override_lists_valid_features() {
    let f = fixture();
    let out = scratch("bad.csv");
    let err = fails(&[
        "whatif",
        "--bundle",
        s(&f.bundle),
        "--input",
        s(&f.patient),
        "--set",
        "shoe_size=44",
        "--out",
        s(&out),
    ]);
    assert!(err.contains("shoe_size") && err.contains("age") && err.contains("admission_unit"), "{err}");
    assert!(!out.exists());
}

#[test]
fn evaluate_writes_reports() {
    let f = fixture();
    let out = scratch("eval");
    let stdout =
        ok(&[
            &[
                "evaluate",
                "--cohort",
                s(&f.cohort),
                "-k",
                "2",
                "--seed",
                "2",
                "--baseline",
                "logistic",
                "--out",
                s(&out),
            ][..],
            &FAST,
        ]
        .concat());
    assert!(stdout.contains("logistic"), "{stdout}");
    for name in ["report.json", "folds.csv", "summary.csv", "curves.csv"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    for row in summary.lines().skip(1) {
        let auc: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&auc), "{row}");
    }
}

#[test]
fn evaluate_needs_enough_positives_per_fold() {
    let f = fixture();
    let err = fails(
        &[&["evaluate", "--cohort", s(&f.cohort), "-k", "40", "--out", s(&scratch("eval-k"))][..], &FAST].concat(),
    );
    assert!(err.to_lowercase().contains("fold") || err.contains("k"), "{err}");
}
