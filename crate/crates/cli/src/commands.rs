use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use mogp_risk::cohort::{
    load_cohort, load_patient_json, write_cohort, AdmissionVector, Cohort, PatientRecord, MEASUREMENTS_FILE,
    PATIENTS_FILE,
};
use mogp_risk::eval::{run_cv_experiment, CvConfig, CvReport, EndpointRule, MethodSummary, ScoreTable};
use mogp_risk::pipeline::{train, TrainConfig};
use mogp_risk::risk::{score_stream, ModelBundle, RiskTrace, ScoreOptions, ScoreSchedule};
use mogp_risk::synth::{generate_cohort, separated_classes, ward_like, write_latent, GeneratorConfig, LATENT_FILE};
use serde::Serialize;

use crate::bundle_file::BundleFile;
use crate::output::{file_stem, write_atomic, StagedDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Five vital signs, seven admission features, heterogeneous classes.
    Ward,
    /// Stable-only classes with well-separated means.
    Separated,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Generator configuration (JSON).
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Latent classes (presets only).
    #[arg(long, default_value_t = 4)]
    pub m_true: usize,
    /// Deteriorating fraction (ward preset).
    #[arg(long, default_value_t = 0.0832)]
    pub prevalence: f64,
    /// Class separation in pooled standard deviations (separated preset).
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    /// Number of streams (separated preset).
    #[arg(long, default_value_t = 2)]
    pub streams: usize,
    /// Upper bound on generated stays, in hours.
    #[arg(long)]
    pub max_stay_hours: Option<f64>,
    #[arg(short, long)]
    pub n: usize,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Overrides the configuration's seed; presets default to 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn generator_config(args: &GenerateArgs) -> Result<GeneratorConfig> {
    let mut cfg = match (&args.config, args.preset) {
        (Some(path), _) => GeneratorConfig::from_json_file(path)?,
        (None, Some(Preset::Ward)) => ward_like(args.m_true, args.prevalence, 0)?,
        (None, Some(Preset::Separated)) => separated_classes(args.m_true, args.streams, args.separation, 0)?,
        (None, None) => bail!("either --config or --preset is required"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(h) = args.max_stay_hours {
        cfg.stay.max_hours = h;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_generate(args: &GenerateArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = generator_config(args)?;
    log::info!("generating {} patients (seed {})", args.n, cfg.seed);
    let (cohort, latent) = generate_cohort(&cfg, args.n)?;
    let mut staged = StagedDir::new(&args.out)?;
    let mut m = staged.create(MEASUREMENTS_FILE)?;
    let mut p = staged.create(PATIENTS_FILE)?;
    write_cohort(&cohort, &mut m, &mut p)?;
    m.flush()?;
    p.flush()?;
    drop((m, p));
    staged.write(LATENT_FILE, |w| Ok(write_latent(&cohort, &latent, w)?))?;
    staged.commit()?;
    writeln!(
        stdout,
        "wrote {} patients ({} deteriorating) to {}",
        cohort.len(),
        cohort.patients.iter().filter(|p| p.outcome.is_positive()).count(),
        args.out.display()
    )?;
    Ok(())
}

/// Model tunables shared by `train` and `evaluate`. Unset flags keep the
/// library defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// EM stopping threshold on the mean absolute responsibility change [1e-3].
    #[arg(long)]
    pub eps: Option<f64>,
    /// EM iteration cap [50].
    #[arg(long)]
    pub em_max_iter: Option<usize>,
    /// Bayes-factor threshold for adding an expert [3].
    #[arg(long)]
    pub b_bar: Option<f64>,
    /// Largest number of experts considered [10].
    #[arg(long)]
    pub m_max: Option<usize>,
    /// Deterioration windows [4].
    #[arg(long)]
    pub windows: Option<usize>,
    /// Width of each deterioration window in hours [12].
    #[arg(long)]
    pub window_width: Option<f64>,
    /// P(deterioration) used by the posterior [training prevalence].
    #[arg(long)]
    pub prior: Option<f64>,
    /// L-BFGS iteration cap per expert fit [200].
    #[arg(long)]
    pub opt_max_iter: Option<usize>,
}

impl ModelFlags {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig { seed, ..Default::default() };
        let em = &mut cfg.discovery.em;
        if let Some(v) = self.eps {
            em.eps = v;
        }
        if let Some(v) = self.em_max_iter {
            em.max_iter = v;
        }
        if let Some(v) = self.opt_max_iter {
            em.optimizer.max_iter = v;
        }
        if let Some(v) = self.b_bar {
            cfg.discovery.b_bar = v;
        }
        if let Some(v) = self.m_max {
            cfg.discovery.m_max = v;
        }
        if let Some(v) = self.windows {
            cfg.window.count = v;
        }
        if let Some(v) = self.window_width {
            cfg.window.width_hours = v;
        }
        cfg.class_prior = self.prior;
        cfg
    }
}

pub fn load_cohort_dir(dir: &Path) -> Result<Cohort> {
    if !dir.is_dir() {
        bail!("cohort directory {} does not exist", dir.display());
    }
    Ok(load_cohort(&dir.join(MEASUREMENTS_FILE), &dir.join(PATIENTS_FILE))?)
}

/// A cohort directory, or a single-patient JSON document.
pub fn load_input(path: &Path) -> Result<Cohort> {
    if path.is_dir() {
        load_cohort_dir(path)
    } else if path.is_file() {
        Ok(load_patient_json(path)?)
    } else {
        bail!("input {} does not exist", path.display())
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Cohort directory.
    #[arg(long)]
    pub cohort: PathBuf,
    /// Bundle file to write.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Fit exactly this many experts instead of selecting.
    #[arg(long)]
    pub force_m: Option<usize>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the full training report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn cmd_train(args: &TrainArgs, stdout: &mut dyn Write) -> Result<()> {
    let cohort = load_cohort_dir(&args.cohort)?;
    let mut cfg = args.model.train_config(args.seed);
    cfg.force_m = args.force_m;
    log::info!("training on {} patients", cohort.len());
    let (bundle, report) = train(&cohort, &cfg)?;

    BundleFile::save(&bundle, &args.out)?;
    if let Some(path) = &args.report {
        let bytes = serde_json::to_vec_pretty(&report)?;
        write_atomic(path, |w| Ok(w.write_all(&bytes)?))?;
    }

    writeln!(stdout, "selected M: {}", report.selected_m)?;
    if report.bayes_factors.is_empty() {
        writeln!(stdout, "log Bayes factors: none computed")?;
    } else {
        for (k, b) in report.bayes_factors.iter().enumerate() {
            writeln!(stdout, "log Bayes factor M={} vs M={}: {:.4}", k + 2, k + 1, b.log_value)?;
        }
    }
    let rss: Vec<String> = report.regression_rss.iter().map(|r| format!("{r:.6}")).collect();
    writeln!(stdout, "regression RSS per expert: {}", rss.join(" "))?;
    if let Some(l) = report.regression_ridge {
        writeln!(stdout, "regression ridge: {l:e}")?;
    }
    let counts: Vec<String> = report.partition_counts.iter().map(|c| c.to_string()).collect();
    writeln!(stdout, "deteriorating partition sizes: {}", counts.join(" "))?;
    if !report.untrained_experts.is_empty() {
        let u: Vec<String> = report.untrained_experts.iter().map(|m| (m + 1).to_string()).collect();
        writeln!(stdout, "untrained deteriorating experts (copied from stable): {}", u.join(" "))?;
    }
    writeln!(stdout, "bundle written to {}", args.out.display())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleKind {
    EveryObservation,
    FixedInterval,
    Endpoint,
}

#[derive(Debug, Clone, Args)]
pub struct ScheduleFlags {
    #[arg(long, value_enum, default_value = "every-observation")]
    pub schedule: ScheduleKind,
    /// Step of the fixed-interval schedule, in hours.
    #[arg(long, required_if_eq("schedule", "fixed-interval"))]
    pub interval_hours: Option<f64>,
    /// Only use observations this many hours before each scoring time.
    #[arg(long)]
    pub lookback_hours: Option<f64>,
}

impl Default for ScheduleFlags {
    fn default() -> Self {
        Self { schedule: ScheduleKind::EveryObservation, interval_hours: None, lookback_hours: None }
    }
}

impl ScheduleFlags {
    pub fn options(&self) -> Result<ScoreOptions> {
        let schedule = match self.schedule {
            ScheduleKind::EveryObservation => ScoreSchedule::EveryObservation,
            ScheduleKind::Endpoint => ScoreSchedule::Endpoint,
            ScheduleKind::FixedInterval => ScoreSchedule::FixedInterval {
                hours: self.interval_hours.ok_or_else(|| anyhow!("--interval-hours is required"))?,
            },
        };
        if let Some(h) = self.lookback_hours {
            if !(h > 0.0 && h.is_finite()) {
                bail!("--lookback-hours must be positive");
            }
        }
        Ok(ScoreOptions { schedule, lookback_hours: self.lookback_hours })
    }
}

fn check_compatible(bundle: &ModelBundle, cohort: &Cohort) -> Result<()> {
    if bundle.stream_names != cohort.stream_names {
        bail!(
            "stream names differ: the bundle expects [{}], the input has [{}]",
            bundle.stream_names.join(", "),
            cohort.stream_names.join(", ")
        );
    }
    if bundle.manifest() != &*cohort.manifest {
        bail!(
            "admission features differ: the bundle expects [{}], the input has [{}]",
            bundle.manifest().feature_names().join(", "),
            cohort.manifest.feature_names().join(", ")
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Cohort directory or single-patient JSON file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory; one `<patient>.csv` per patient.
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub schedule: ScheduleFlags,
    /// Also write `<patient>.dat` plot data (one block per series).
    #[arg(long)]
    pub plot_data: bool,
}

pub fn write_trace_csv(trace: &RiskTrace, w: &mut dyn Write) -> Result<()> {
    let m = trace.per_expert.len();
    let mut header = vec!["time_hours".to_string()];
    header.extend((1..=m).map(|j| format!("expert_{j}")));
    header.push("aggregate".into());
    writeln!(w, "{}", header.join(","))?;
    for k in 0..trace.len() {
        write!(w, "{}", trace.times[k])?;
        for e in &trace.per_expert {
            write!(w, ",{}", e[k])?;
        }
        writeln!(w, ",{}", trace.aggregate[k])?;
    }
    Ok(())
}

/// Gnuplot-style data: one block per series separated by two blank lines,
/// each introduced by a `# name` comment.
pub fn write_plot_data(trace: &RiskTrace, w: &mut dyn Write) -> Result<()> {
    let series = trace
        .per_expert
        .iter()
        .enumerate()
        .map(|(j, s)| (format!("expert_{}", j + 1), s))
        .chain(std::iter::once(("aggregate".to_string(), &trace.aggregate)));
    for (i, (name, values)) in series.enumerate() {
        if i > 0 {
            writeln!(w, "\n")?;
        }
        writeln!(w, "# {name}")?;
        for (t, v) in trace.times.iter().zip(values) {
            writeln!(w, "{t}\t{v}")?;
        }
    }
    Ok(())
}

pub fn cmd_score(args: &ScoreArgs, stdout: &mut dyn Write) -> Result<()> {
    let bundle = BundleFile::load(&args.bundle)?;
    let cohort = load_input(&args.input)?;
    check_compatible(&bundle, &cohort)?;
    let opts = args.schedule.options()?;
    let mut staged = StagedDir::new(&args.out)?;
    for p in &cohort.patients {
        let trace = score_stream(p, &bundle, &opts).with_context(|| format!("scoring patient {}", p.id))?;
        let stem = file_stem(&p.id);
        staged.write(&format!("{stem}.csv"), |w| write_trace_csv(&trace, w))?;
        if args.plot_data {
            staged.write(&format!("{stem}.dat"), |w| write_plot_data(&trace, w))?;
        }
    }
    let written = staged.commit()?;
    writeln!(stdout, "scored {} patients; {} files in {}", cohort.len(), written.len(), args.out.display())?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct WhatifArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Single-patient JSON file, or a cohort directory with --patient-id.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub patient_id: Option<String>,
    /// Admission override, repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE", required = true)]
    pub overrides: Vec<String>,
    /// Paired trace file to write.
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub schedule: ScheduleFlags,
}

fn select_patient<'a>(cohort: &'a Cohort, id: Option<&str>) -> Result<&'a PatientRecord> {
    match id {
        Some(id) => cohort.patients.iter().find(|p| p.id == id).ok_or_else(|| anyhow!("no patient with id '{id}'")),
        None if cohort.len() == 1 => Ok(&cohort.patients[0]),
        None => bail!("the input holds {} patients; choose one with --patient-id", cohort.len()),
    }
}

/// Re-encode `patient`'s admission vector with `name=value` overrides applied.
pub fn override_admission(patient: &PatientRecord, overrides: &[String]) -> Result<PatientRecord> {
    let manifest = patient.admission.manifest.clone();
    let mut raw = manifest.decode(&patient.admission.features)?;
    for o in overrides {
        let (name, value) = o.split_once('=').ok_or_else(|| anyhow!("override '{o}' is not of the form NAME=VALUE"))?;
        let name = name.trim();
        raw.insert(name.to_string(), manifest.parse_value(name, value.trim())?);
    }
    let mut out = patient.clone();
    out.admission = AdmissionVector::encode(manifest, &raw)?;
    Ok(out)
}

pub fn cmd_whatif(args: &WhatifArgs, stdout: &mut dyn Write) -> Result<()> {
    let bundle = BundleFile::load(&args.bundle)?;
    let cohort = load_input(&args.input)?;
    check_compatible(&bundle, &cohort)?;
    let patient = select_patient(&cohort, args.patient_id.as_deref())?;
    let changed = override_admission(patient, &args.overrides)?;
    let opts = args.schedule.options()?;
    let original = score_stream(patient, &bundle, &opts)?;
    let counterfactual = score_stream(&changed, &bundle, &opts)?;

    let m = bundle.num_experts();
    write_atomic(&args.out, |w| {
        let mut header = vec!["time_hours".to_string(), "aggregate_original".into(), "aggregate_override".into()];
        header.extend((1..=m).map(|j| format!("beta_original_{j}")));
        header.extend((1..=m).map(|j| format!("beta_override_{j}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..original.len() {
            write!(w, "{},{},{}", original.times[k], original.aggregate[k], counterfactual.aggregate[k])?;
            for b in original.beta_hat.iter().chain(&counterfactual.beta_hat) {
                write!(w, ",{b}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    let max_diff =
        original.aggregate.iter().zip(&counterfactual.aggregate).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    writeln!(stdout, "patient {}: largest aggregate change {max_diff:.4}", patient.id)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EndpointFlag {
    Last,
    Max,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Cohort directory.
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(short, long, default_value_t = 10)]
    pub k: usize,
    /// Number of independent cross-validation repeats.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// First repeat's seed; repeat `r` uses `seed + r`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also evaluate a model forced to this many experts (1 = single expert).
    #[arg(long)]
    pub force_m: Option<usize>,
    #[arg(long, value_enum)]
    pub baseline: Vec<Baseline>,
    /// L1 penalty of the logistic baseline.
    #[arg(long, default_value_t = 0.01)]
    pub l1: f64,
    /// Points table (JSON) scored as an extra baseline.
    #[arg(long)]
    pub score_table: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "last")]
    pub endpoint: EndpointFlag,
    /// Score test patients from only their last this-many hours.
    #[arg(long)]
    pub lookback_hours: Option<f64>,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct EvaluationDocument<'a> {
    configs: Vec<CvConfig>,
    reports: &'a [CvReport],
}

fn methods(r: &CvReport) -> Vec<(&'static str, &MethodSummary)> {
    let mut v = vec![("mixture", &r.mixture)];
    if let Some(s) = &r.forced {
        v.push(("forced_m", s));
    }
    if let Some(s) = &r.logistic {
        v.push(("logistic", s));
    }
    if let Some(s) = &r.score_table {
        v.push(("score_table", s));
    }
    v
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn cmd_evaluate(args: &EvaluateArgs, stdout: &mut dyn Write) -> Result<()> {
    let cohort = load_cohort_dir(&args.cohort)?;
    let score_table: Option<ScoreTable> = match &args.score_table {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("{} is not a score table", path.display()))?)
        }
        None => None,
    };
    let mut configs = Vec::new();
    let mut reports = Vec::new();
    for r in 0..args.seeds {
        let seed = args.seed + r;
        let cfg = CvConfig {
            k: args.k,
            seed,
            train: args.model.train_config(seed),
            endpoint: match args.endpoint {
                EndpointFlag::Last => EndpointRule::Last,
                EndpointFlag::Max => EndpointRule::Max,
            },
            lookback_hours: args.lookback_hours,
            forced_m: args.force_m,
            logistic_l1: args.baseline.contains(&Baseline::Logistic).then_some(args.l1),
            score_table: score_table.clone(),
        };
        log::info!("cross-validation repeat {}/{} (seed {seed})", r + 1, args.seeds);
        reports.push(run_cv_experiment(&cohort, &cfg)?);
        configs.push(cfg);
    }

    let mut staged = StagedDir::new(&args.out)?;
    let doc = serde_json::to_vec_pretty(&EvaluationDocument { configs, reports: &reports })?;
    staged.write("report.json", |w| Ok(w.write_all(&doc)?))?;
    staged.write("folds.csv", |w| {
        writeln!(
            w,
            "seed,fold,n_train,n_test,test_positives,selected_m,auc,auc_forced_m,auc_logistic,auc_score_table"
        )?;
        for r in &reports {
            for f in &r.folds {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.seed,
                    f.fold,
                    f.n_train,
                    f.n_test,
                    f.test_positives,
                    f.selected_m,
                    opt(f.auc),
                    opt(f.auc_forced),
                    opt(f.auc_logistic),
                    opt(f.auc_score_table)
                )?;
            }
        }
        Ok(())
    })?;
    staged.write("summary.csv", |w| {
        writeln!(w, "seed,method,pooled_auc,mean_fold_auc,std_fold_auc")?;
        for r in &reports {
            for (name, s) in methods(r) {
                writeln!(w, "{},{name},{},{},{}", r.seed, s.pooled_auc, s.mean_fold_auc, s.std_fold_auc)?;
            }
        }
        Ok(())
    })?;
    staged.write("curves.csv", |w| {
        writeln!(w, "seed,method,threshold,tpr,ppv")?;
        for r in &reports {
            for (name, s) in methods(r) {
                for c in &s.curve {
                    writeln!(w, "{},{name},{},{},{}", r.seed, c.threshold, c.tpr, c.ppv)?;
                }
            }
        }
        Ok(())
    })?;
    staged.commit()?;

    for (name, _) in methods(&reports[0]) {
        let aucs: Vec<f64> = reports
            .iter()
            .map(|r| methods(r).into_iter().find(|(n, _)| *n == name).map(|(_, s)| s.pooled_auc).unwrap_or(f64::NAN))
            .collect();
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        writeln!(stdout, "{name}: mean pooled AUC {mean:.4} over {} repeat(s)", aucs.len())?;
    }
    writeln!(stdout, "report written to {}", args.out.display())?;
    Ok(())
}
