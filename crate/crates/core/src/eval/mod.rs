//! Cross-validated evaluation: folds, ranking metrics and baselines.

mod baseline;
mod cv;
mod folds;
mod metrics;

pub use baseline::{
    logistic_baseline, score_table_baseline, summary_features, Band, LogisticConfig, LogisticModel, ScoreTable,
    StreamBands,
};
pub use cv::{endpoint_scores, run_cv_experiment, CvConfig, CvReport, EndpointRule, FoldReport, MethodSummary};
pub use folds::{stratified_kfold, stratified_kfold_labels, FoldPlan};
pub use metrics::{adjusted_rand_index, roc_auc, tpr_ppv_curve, CurvePoint, ScoredOutcome};
