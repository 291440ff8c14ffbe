//! Offline training from a raw cohort to a scoring bundle.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{apply_normalization, fit_normalization, write_cohort, Cohort, Outcome, OutcomeFilter};
use crate::error::{Error, Result};
use crate::gp::{ObservationBlock, WindowConfig};
use crate::mixture::{discover_experts, fit_fixed_size, BayesFactor, Discovery, DiscoveryConfig, EmReport};
use crate::risk::{BundleMetadata, ModelBundle};
use crate::transfer::{
    clip_normalize, fit_responsibility_regression, self_taught_partition, train_deteriorating_experts,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub discovery: DiscoveryConfig,
    pub window: WindowConfig,
    /// Skip model selection and fit exactly this many experts.
    pub force_m: Option<usize>,
    /// `P(v = 1)`; defaults to the deteriorating fraction of the cohort.
    pub class_prior: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub selected_m: usize,
    pub em_reports: Vec<EmReport>,
    pub bayes_factors: Vec<BayesFactor>,
    pub regression_rss: Vec<f64>,
    pub regression_ridge: Option<f64>,
    pub partition_counts: Vec<usize>,
    pub untrained_experts: Vec<usize>,
    pub partition_seed: u64,
}

/// Independent sub-seed for one pipeline stage.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng.next_u64()
}

const STAGE_EM: u64 = 1;
const STAGE_PARTITION: u64 = 2;

/// SHA-256 of the cohort in its on-disk formats.
pub fn cohort_fingerprint(cohort: &Cohort) -> Result<String> {
    let mut m = Vec::new();
    let mut p = Vec::new();
    write_cohort(cohort, &mut m, &mut p)?;
    let mut h = Sha256::new();
    h.update(&m);
    h.update(&p);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn blocks_of(cohort: &Cohort) -> Result<Vec<ObservationBlock>> {
    cohort.patients.iter().map(ObservationBlock::from_patient).collect()
}

/// Normalize, discover the stable mixture, regress responsibilities on
/// admission features, partition the deteriorating patients and fit their
/// windowed experts.
pub fn train(cohort: &Cohort, cfg: &TrainConfig) -> Result<(ModelBundle, TrainReport)> {
    cohort.validate()?;
    let n_stable = cohort.count(Outcome::Stable);
    let n_det = cohort.count(Outcome::Deteriorating);
    if n_stable == 0 {
        return Err(Error::EmptySubset("the cohort has no stable patients".into()));
    }
    if n_det == 0 {
        return Err(Error::EmptySubset(
            "the cohort has no deteriorating patients, so deteriorating experts cannot be trained".into(),
        ));
    }
    cfg.window.validate()?;

    let stats = fit_normalization(cohort, OutcomeFilter::Only(Outcome::Stable))?;
    let normalized = apply_normalization(cohort, &stats)?;
    let stable = normalized.filter(OutcomeFilter::Only(Outcome::Stable));
    let det = normalized.filter(OutcomeFilter::Only(Outcome::Deteriorating));
    let dim = cohort.num_streams();

    let blocks = blocks_of(&stable)?;
    let em_seed = derive_seed(cfg.seed, STAGE_EM);
    let discovery = match cfg.force_m {
        Some(m) => {
            let fit = fit_fixed_size(&blocks, dim, m, &cfg.discovery.em, em_seed)?;
            Discovery {
                mixture: fit.mixture,
                responsibilities: fit.responsibilities,
                reports: vec![fit.report],
                bayes_factors: Vec::new(),
            }
        }
        None => discover_experts(&blocks, dim, &cfg.discovery, em_seed)?,
    };
    let m = discovery.num_experts();
    log::info!("selected M = {m}");

    let admissions: Vec<_> = stable.patients.iter().map(|p| p.admission.clone()).collect();
    let regressor = fit_responsibility_regression(&admissions, &discovery.responsibilities)?;

    let beta_hat = det
        .patients
        .iter()
        .map(|p| regressor.predict_raw(&p.admission.features).map(|r| clip_normalize(&r)))
        .collect::<Result<Vec<_>>>()?;
    let partition = self_taught_partition(&beta_hat, m, derive_seed(cfg.seed, STAGE_PARTITION))?;
    let det_data = det
        .patients
        .iter()
        .map(|p| Ok((ObservationBlock::from_patient(p)?, p.stay_length_hours)))
        .collect::<Result<Vec<_>>>()?;
    let experts = train_deteriorating_experts(
        &det_data,
        &partition,
        &discovery.mixture,
        cfg.window,
        &cfg.discovery.em.optimizer,
    )?;

    let class_prior = cfg.class_prior.unwrap_or(n_det as f64 / cohort.len() as f64);
    let mut settings = BTreeMap::new();
    settings.insert("eps".into(), format!("{:?}", cfg.discovery.em.eps));
    settings.insert("max_iter".into(), cfg.discovery.em.max_iter.to_string());
    settings.insert("b_bar".into(), format!("{:?}", cfg.discovery.b_bar));
    settings.insert("m_max".into(), cfg.discovery.m_max.to_string());
    settings.insert("windows".into(), cfg.window.count.to_string());
    settings.insert("window_width_hours".into(), format!("{:?}", cfg.window.width_hours));
    if let Some(fm) = cfg.force_m {
        settings.insert("force_m".into(), fm.to_string());
    }

    let report = TrainReport {
        selected_m: m,
        em_reports: discovery.reports.clone(),
        bayes_factors: discovery.bayes_factors.clone(),
        regression_rss: regressor.rss.clone(),
        regression_ridge: regressor.ridge,
        partition_counts: partition.counts(),
        untrained_experts: experts.untrained.iter().enumerate().filter(|(_, u)| **u).map(|(i, _)| i).collect(),
        partition_seed: partition.seed,
    };
    let bundle = ModelBundle {
        stream_names: cohort.stream_names.clone(),
        stable: discovery.mixture,
        deteriorating: experts,
        regressor,
        normalization: stats,
        class_prior,
        window: cfg.window,
        metadata: BundleMetadata {
            seed: cfg.seed,
            cohort_fingerprint: cohort_fingerprint(cohort)?,
            num_stable: n_stable,
            num_deteriorating: n_det,
            log_bayes_factors: discovery.bayes_factors.iter().map(|b| b.log_value).collect(),
            settings,
        },
    };
    bundle.validate()?;
    Ok((bundle, report))
}
