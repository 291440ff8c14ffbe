use serde::{Deserialize, Serialize};

use super::baseline::{logistic_baseline, score_table_baseline, ScoreTable};
use super::folds::stratified_kfold;
use super::metrics::{roc_auc, tpr_ppv_curve, CurvePoint, ScoredOutcome};
use crate::cohort::Cohort;
use crate::error::Result;
use crate::pipeline::{derive_seed, train, TrainConfig};
use crate::risk::{score_stream, ModelBundle, ScoreOptions, ScoreSchedule};

/// How a risk trace is reduced to one number per patient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointRule {
    /// Aggregate risk at the last observation.
    #[default]
    Last,
    /// Largest aggregate risk over the whole trace.
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub endpoint: EndpointRule,
    /// Score each test patient from only the observations this many hours
    /// before the endpoint.
    pub lookback_hours: Option<f64>,
    /// Also train and score a model forced to this many experts on every
    /// fold; `Some(1)` is the single-expert ablation.
    pub forced_m: Option<usize>,
    /// L1 penalty of the logistic baseline, when requested.
    pub logistic_l1: Option<f64>,
    pub score_table: Option<ScoreTable>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 10,
            seed: 0,
            train: TrainConfig::default(),
            endpoint: EndpointRule::Last,
            lookback_hours: None,
            forced_m: None,
            logistic_l1: None,
            score_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_positives: usize,
    pub selected_m: usize,
    /// `None` when the test fold lacks one of the classes.
    pub auc: Option<f64>,
    pub auc_forced: Option<f64>,
    pub auc_logistic: Option<f64>,
    pub auc_score_table: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub pooled_auc: f64,
    pub mean_fold_auc: f64,
    pub std_fold_auc: f64,
    pub outcomes: Vec<ScoredOutcome>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub mixture: MethodSummary,
    pub forced_m: Option<usize>,
    pub forced: Option<MethodSummary>,
    pub logistic: Option<MethodSummary>,
    pub score_table: Option<MethodSummary>,
}

/// Score every patient of `test` with `bundle`, reduced per `rule`.
pub fn endpoint_scores(
    bundle: &ModelBundle,
    test: &Cohort,
    rule: EndpointRule,
    lookback_hours: Option<f64>,
) -> Result<Vec<ScoredOutcome>> {
    let opts = ScoreOptions {
        schedule: match rule {
            EndpointRule::Last => ScoreSchedule::Endpoint,
            EndpointRule::Max => ScoreSchedule::EveryObservation,
        },
        lookback_hours,
    };
    test.patients
        .iter()
        .map(|p| {
            let trace = score_stream(p, bundle, &opts)?;
            let score = match rule {
                EndpointRule::Last => trace.last().unwrap_or(bundle.class_prior),
                EndpointRule::Max => trace.aggregate.iter().copied().fold(0.0, f64::max),
            };
            Ok(ScoredOutcome { id: p.id.clone(), score, label: p.outcome.is_positive() })
        })
        .collect()
}

fn fold_auc(outcomes: &[ScoredOutcome]) -> Option<f64> {
    roc_auc(outcomes).ok()
}

fn summarize(per_fold: &[Vec<ScoredOutcome>]) -> Result<MethodSummary> {
    let outcomes: Vec<ScoredOutcome> = per_fold.iter().flatten().cloned().collect();
    let aucs: Vec<f64> = per_fold.iter().filter_map(|o| fold_auc(o)).collect();
    let n = aucs.len().max(1) as f64;
    let mean = aucs.iter().sum::<f64>() / n;
    let std = (aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(MethodSummary {
        pooled_auc: roc_auc(&outcomes)?,
        mean_fold_auc: mean,
        std_fold_auc: std,
        curve: tpr_ppv_curve(&outcomes)?,
        outcomes,
    })
}

/// Stratified cross-validation of the full training pipeline, optionally
/// alongside a forced-size ablation and the baselines.
pub fn run_cv_experiment(cohort: &Cohort, cfg: &CvConfig) -> Result<CvReport> {
    let plan = stratified_kfold(cohort, cfg.k, cfg.seed)?;
    let mut folds = Vec::with_capacity(cfg.k);
    let mut mix = Vec::with_capacity(cfg.k);
    let mut forced = Vec::new();
    let mut logistic = Vec::new();
    let mut table = Vec::new();
    for f in 0..cfg.k {
        let train_set = cohort.subset(&plan.train_indices(f));
        let test_set = cohort.subset(&plan.folds[f]);
        let mut tcfg = cfg.train.clone();
        tcfg.seed = derive_seed(cfg.seed, 100 + f as u64);
        log::info!("fold {}/{}: {} train, {} test", f + 1, cfg.k, train_set.len(), test_set.len());

        let (bundle, report) = train(&train_set, &tcfg)?;
        let scored = endpoint_scores(&bundle, &test_set, cfg.endpoint, cfg.lookback_hours)?;
        let mut fr = FoldReport {
            fold: f,
            n_train: train_set.len(),
            n_test: test_set.len(),
            test_positives: plan.positives[f],
            selected_m: report.selected_m,
            auc: fold_auc(&scored),
            auc_forced: None,
            auc_logistic: None,
            auc_score_table: None,
        };
        mix.push(scored);

        if let Some(m) = cfg.forced_m {
            let mut fixed = tcfg.clone();
            fixed.force_m = Some(m);
            let (bf, _) = train(&train_set, &fixed)?;
            let sf = endpoint_scores(&bf, &test_set, cfg.endpoint, cfg.lookback_hours)?;
            fr.auc_forced = fold_auc(&sf);
            forced.push(sf);
        }
        if let Some(l1) = cfg.logistic_l1 {
            let sl = logistic_baseline(&train_set, &test_set, l1)?;
            fr.auc_logistic = fold_auc(&sl);
            logistic.push(sl);
        }
        if let Some(t) = &cfg.score_table {
            let st = score_table_baseline(t, &test_set)?;
            fr.auc_score_table = fold_auc(&st);
            table.push(st);
        }
        folds.push(fr);
    }
    Ok(CvReport {
        k: cfg.k,
        seed: cfg.seed,
        folds,
        mixture: summarize(&mix)?,
        forced_m: cfg.forced_m,
        forced: if cfg.forced_m.is_some() { Some(summarize(&forced)?) } else { None },
        logistic: if cfg.logistic_l1.is_some() { Some(summarize(&logistic)?) } else { None },
        score_table: if cfg.score_table.is_some() { Some(summarize(&table)?) } else { None },
    })
}
