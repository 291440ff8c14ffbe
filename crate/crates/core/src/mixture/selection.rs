use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::em::{run_em, EmConfig, EmFit, EmReport, ResponsibilityMatrix, StableMixture};
use crate::error::{Error, Result};
use crate::gp::ObservationBlock;

/// Free-parameter count `Ψ_M = M·(D(D+1)/2 + D + 2)` of `m` stationary experts.
pub fn model_complexity(m: usize, d: usize) -> usize {
    m * (d * (d + 1) / 2 + d + 2)
}

/// BIC approximation of the Bayes factor between adjacent mixture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    pub log_value: f64,
}

impl BayesFactor {
    /// `exp(log_value)`; may overflow to infinity or underflow to zero.
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

pub fn bayes_factor(q_m: f64, q_prev: f64, psi_m: usize, psi_prev: usize, n_o: usize) -> BayesFactor {
    let ln_n = (n_o as f64).ln();
    let log_value = (q_m - 0.5 * psi_m as f64 * ln_n) - (q_prev - 0.5 * psi_prev as f64 * ln_n);
    BayesFactor { log_value }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryConfig {
    pub em: EmConfig,
    /// Stop adding experts once the Bayes factor falls below this.
    pub b_bar: f64,
    pub m_max: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self { em: EmConfig::default(), b_bar: 3.0, m_max: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub mixture: StableMixture,
    pub responsibilities: ResponsibilityMatrix,
    /// One report per mixture size tried, starting at `M = 1`.
    pub reports: Vec<EmReport>,
    /// `bayes_factors[j]` compares `M = j + 2` against `M = j + 1`.
    pub bayes_factors: Vec<BayesFactor>,
}

impl Discovery {
    pub fn num_experts(&self) -> usize {
        self.mixture.len()
    }
}

/// Derived seed for the `attempt`-th run at mixture size `m`.
fn run_seed(seed: u64, m: usize, attempt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((m as u64) << 8) | attempt);
    rng.next_u64()
}

/// EM at a fixed size, retried once with a fresh seed when an expert starves.
pub fn fit_fixed_size(blocks: &[ObservationBlock], dim: usize, m: usize, em: &EmConfig, seed: u64) -> Result<EmFit> {
    let fit = run_em(blocks, dim, m, em, run_seed(seed, m, 0))?;
    if fit.report.starved.is_empty() {
        return Ok(fit);
    }
    log::warn!("M={m}: experts {:?} starved, retrying with a fresh seed", fit.report.starved);
    let retry = run_em(blocks, dim, m, em, run_seed(seed, m, 1))?;
    if !retry.report.starved.is_empty() {
        log::warn!("M={m}: experts {:?} starved again, accepting the fit", retry.report.starved);
    }
    Ok(retry)
}

/// Grow the mixture one expert at a time and keep the last size whose Bayes
/// factor against its predecessor reached `b_bar`.
pub fn discover_experts(
    blocks: &[ObservationBlock],
    dim: usize,
    cfg: &DiscoveryConfig,
    seed: u64,
) -> Result<Discovery> {
    if !(cfg.b_bar > 0.0) {
        return Err(Error::InvalidArgument("Bayes factor threshold must be positive".into()));
    }
    if cfg.m_max == 0 {
        return Err(Error::InvalidArgument("m_max must be at least 1".into()));
    }
    let n = blocks.len();
    let ln_bar = cfg.b_bar.ln();
    let mut best = fit_fixed_size(blocks, dim, 1, &cfg.em, seed)?;
    let mut reports = vec![best.report.clone()];
    let mut factors = Vec::new();
    log::info!("M=1: Q*={:.4}", best.report.q_star);

    for m in 2..=cfg.m_max.min(n) {
        let fit = fit_fixed_size(blocks, dim, m, &cfg.em, seed)?;
        let bf = bayes_factor(
            fit.report.q_star,
            best.report.q_star,
            model_complexity(m, dim),
            model_complexity(m - 1, dim),
            n,
        );
        log::info!("M={m}: Q*={:.4} log B={:.4}", fit.report.q_star, bf.log_value);
        reports.push(fit.report.clone());
        factors.push(bf);
        if bf.log_value < ln_bar {
            break;
        }
        best = fit;
    }
    Ok(Discovery { mixture: best.mixture, responsibilities: best.responsibilities, reports, bayes_factors: factors })
}
