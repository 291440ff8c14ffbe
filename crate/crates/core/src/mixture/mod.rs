//! Mixture of stationary experts on the stable domain: EM training and
//! Bayes-factor selection of the number of experts.

mod em;
mod kmeans;
mod selection;

pub use em::{
    e_step, em_lower_bound, expected_complete_log_likelihood, log_likelihood_matrix, m_step, observed_log_likelihood,
    run_em, EmConfig, EmFit, EmReport, MStepOutput, ResponsibilityMatrix, StableMixture, SIMPLEX_TOL,
};
pub use kmeans::{kmeans, summary_vector};
pub use selection::{
    bayes_factor, discover_experts, fit_fixed_size, model_complexity, BayesFactor, Discovery, DiscoveryConfig,
};
