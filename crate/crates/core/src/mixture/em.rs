use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, summary_vector};
use crate::error::{Error, Result};
use crate::gp::{
    fit_weighted_mle, initial_params, log_marginal_likelihood_value, ObservationBlock, OptimizerConfig,
    StationaryGpParams,
};
use crate::numeric::{log_sum_exp, stable_sum};

/// Tolerance used when checking that weights and rows lie on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Mixture of stationary experts fit on the stable domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableMixture {
    pub experts: Vec<StationaryGpParams>,
    /// Class weights π on the simplex.
    pub weights: Vec<f64>,
}

impl StableMixture {
    pub fn new(experts: Vec<StationaryGpParams>, weights: Vec<f64>) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::InvalidArgument("a mixture needs at least one expert".into()));
        }
        if experts.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!("{} experts but {} weights", experts.len(), weights.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument("mixture weights must lie on the simplex".into()));
        }
        let d = experts[0].dim();
        if experts.iter().any(|e| e.dim() != d) {
            return Err(Error::DimensionMismatch("experts disagree on stream count".into()));
        }
        Ok(Self { experts, weights })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.experts[0].dim()
    }
}

/// `N × M` posterior class memberships; each row is on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponsibilityMatrix {
    rows: Vec<Vec<f64>>,
}

impl ResponsibilityMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != m || m == 0 {
                return Err(Error::DimensionMismatch(format!("responsibility row {i} has length {}", r.len())));
            }
            if r.iter().any(|x| !(0.0..=1.0).contains(x)) || (r.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidArgument(format!("responsibility row {i} is not on the simplex")));
            }
        }
        Ok(Self { rows })
    }

    /// One-hot rows from hard labels.
    pub fn from_labels(labels: &[usize], m: usize) -> Self {
        Self { rows: labels.iter().map(|&l| (0..m).map(|j| if j == l { 1.0 } else { 0.0 }).collect()).collect() }
    }

    pub fn num_patients(&self) -> usize {
        self.rows.len()
    }

    pub fn num_experts(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn column(&self, m: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[m]).collect()
    }

    /// Row-wise argmax (first index on ties).
    pub fn hard_assignments(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (j, &x)| if x > a.1 { (j, x) } else { a }).0)
            .collect()
    }

    /// `(1/(N·M)) Σ |β − β'|`.
    pub fn mean_abs_change(&self, other: &Self) -> f64 {
        let n = (self.num_patients() * self.num_experts()).max(1) as f64;
        let total: f64 =
            self.rows.iter().zip(&other.rows).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).sum();
        total / n
    }
}

/// Log-likelihood of every block under every expert: `ll[i][m]`.
pub fn log_likelihood_matrix(blocks: &[ObservationBlock], mixture: &StableMixture) -> Result<Vec<Vec<f64>>> {
    blocks.iter().map(|b| mixture.experts.iter().map(|e| log_marginal_likelihood_value(b, e)).collect()).collect()
}

fn responsibilities_from(ll: &[Vec<f64>], weights: &[f64]) -> ResponsibilityMatrix {
    let log_pi: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let rows = ll
        .iter()
        .map(|row| {
            let joint: Vec<f64> = row.iter().zip(&log_pi).map(|(l, p)| l + p).collect();
            let lse = log_sum_exp(&joint);
            assert!(lse.is_finite(), "every component underflowed for a patient");
            let mut r: Vec<f64> = joint.iter().map(|j| (j - lse).exp()).collect();
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|x| *x /= s);
            r
        })
        .collect();
    ResponsibilityMatrix { rows }
}

/// Posterior class memberships `β_im ∝ π_m f_m(block_i)` computed in the log domain.
pub fn e_step(blocks: &[ObservationBlock], mixture: &StableMixture) -> Result<ResponsibilityMatrix> {
    let ll = log_likelihood_matrix(blocks, mixture)?;
    Ok(responsibilities_from(&ll, &mixture.weights))
}

fn joint_terms<'a>(
    ll: &'a [Vec<f64>],
    resp: &'a ResponsibilityMatrix,
    weights: &'a [f64],
) -> impl Iterator<Item = (f64, f64)> + 'a {
    ll.iter().zip(&resp.rows).flat_map(move |(lrow, brow)| {
        lrow.iter().zip(brow).zip(weights).filter(|((_, b), _)| **b > 0.0).map(|((l, b), w)| (*b, w.ln() + l))
    })
}

/// Expected complete-data log-likelihood `Σ_i Σ_m β_im (log π_m + log f_m(block_i))`.
pub fn expected_complete_log_likelihood(ll: &[Vec<f64>], resp: &ResponsibilityMatrix, weights: &[f64]) -> f64 {
    stable_sum(joint_terms(ll, resp, weights).map(|(b, j)| b * j))
}

/// Expected complete-data log-likelihood plus the responsibility entropy: the
/// EM lower bound, which equals the observed-data log-likelihood right after
/// an E-step and never decreases across EM steps.
pub fn em_lower_bound(ll: &[Vec<f64>], resp: &ResponsibilityMatrix, weights: &[f64]) -> f64 {
    stable_sum(joint_terms(ll, resp, weights).map(|(b, j)| b * j - b * b.ln()))
}

pub fn observed_log_likelihood(ll: &[Vec<f64>], weights: &[f64]) -> f64 {
    let log_pi: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    stable_sum(ll.iter().map(|row| {
        let joint: Vec<f64> = row.iter().zip(&log_pi).map(|(l, p)| l + p).collect();
        log_sum_exp(&joint)
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutput {
    pub mixture: StableMixture,
    /// Experts whose total responsibility fell below `M·1e-8`; their
    /// parameters were carried over unchanged.
    pub starved: Vec<usize>,
}

/// Closed-form class weights and a weighted MLE refit of every expert.
pub fn m_step(
    blocks: &[ObservationBlock],
    resp: &ResponsibilityMatrix,
    prev: &StableMixture,
    opt: &OptimizerConfig,
) -> Result<MStepOutput> {
    let m = prev.len();
    if resp.num_experts() != m || resp.num_patients() != blocks.len() {
        return Err(Error::DimensionMismatch(format!(
            "responsibilities are {}x{}, expected {}x{m}",
            resp.num_patients(),
            resp.num_experts(),
            blocks.len()
        )));
    }
    let n = blocks.len() as f64;
    let starve_at = m as f64 * 1e-8;
    let mut experts = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    let mut starved = Vec::new();
    for j in 0..m {
        let col = resp.column(j);
        let total = stable_sum(col.iter().copied());
        weights.push(total / n);
        if total < starve_at {
            starved.push(j);
            experts.push(prev.experts[j].clone());
        } else {
            experts.push(fit_weighted_mle(blocks, &col, &prev.experts[j], opt)?);
        }
    }
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    Ok(MStepOutput { mixture: StableMixture::new(experts, weights)?, starved })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Stop when the mean absolute responsibility change drops below this.
    pub eps: f64,
    pub max_iter: usize,
    pub optimizer: OptimizerConfig,
    pub kmeans_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { eps: 1e-3, max_iter: 50, optimizer: OptimizerConfig::default(), kmeans_restarts: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmReport {
    pub num_experts: usize,
    pub seed: u64,
    /// Expected complete-data log-likelihood at the final parameters and responsibilities.
    pub q_star: f64,
    pub observed_log_likelihood: f64,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub converged: bool,
    /// EM lower bound after every M-step.
    pub q_history: Vec<f64>,
    pub responsibility_delta_history: Vec<f64>,
    pub starved: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub mixture: StableMixture,
    pub responsibilities: ResponsibilityMatrix,
    pub report: EmReport,
}

/// EM for a mixture of `m` stationary experts on blocks with `dim` streams,
/// initialized from seeded k-means on per-patient summaries.
pub fn run_em(blocks: &[ObservationBlock], dim: usize, m: usize, cfg: &EmConfig, seed: u64) -> Result<EmFit> {
    if m == 0 {
        return Err(Error::InvalidArgument("number of experts must be at least 1".into()));
    }
    if !(cfg.eps > 0.0) {
        return Err(Error::InvalidArgument("EM tolerance must be positive".into()));
    }
    if blocks.len() < m {
        return Err(Error::InvalidArgument(format!("{} patients cannot support {m} experts", blocks.len())));
    }
    let summaries: Vec<Vec<f64>> = blocks.iter().map(|b| summary_vector(b, dim)).collect();
    let labels = kmeans(&summaries, m, cfg.kmeans_restarts, seed);
    let mut resp = ResponsibilityMatrix::from_labels(&labels, m);

    let mut inits = Vec::with_capacity(m);
    for j in 0..m {
        let w: Vec<f64> = labels.iter().map(|&l| if l == j { 1.0 } else { 0.0 }).collect();
        let w = if w.iter().any(|&x| x > 0.0) { w } else { vec![1.0; blocks.len()] };
        inits.push(initial_params(blocks, &w, dim)?);
    }
    let start = StableMixture::new(inits, vec![1.0 / m as f64; m])?;

    let mut step = m_step(blocks, &resp, &start, &cfg.optimizer)?;
    let mut starved = step.starved.clone();
    let mut mixture = step.mixture;
    let mut ll = log_likelihood_matrix(blocks, &mixture)?;
    let mut q_history = vec![em_lower_bound(&ll, &resp, &mixture.weights)];
    let mut deltas = Vec::new();
    let mut iterations = 1;
    let mut converged = false;

    loop {
        let next = responsibilities_from(&ll, &mixture.weights);
        let delta = next.mean_abs_change(&resp);
        deltas.push(delta);
        resp = next;
        log::debug!("EM M={m} iter={iterations} bound={:.6} delta={delta:.3e}", q_history.last().unwrap());
        if delta < cfg.eps {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        step = m_step(blocks, &resp, &mixture, &cfg.optimizer)?;
        for s in &step.starved {
            if !starved.contains(s) {
                starved.push(*s);
            }
        }
        mixture = step.mixture;
        ll = log_likelihood_matrix(blocks, &mixture)?;
        let bound = em_lower_bound(&ll, &resp, &mixture.weights);
        if !bound.is_finite() {
            return Err(Error::Divergence { iterations });
        }
        q_history.push(bound);
        iterations += 1;
    }

    let q_star = expected_complete_log_likelihood(&ll, &resp, &mixture.weights);
    let observed = observed_log_likelihood(&ll, &mixture.weights);
    if !q_star.is_finite() {
        return Err(Error::Divergence { iterations });
    }
    starved.sort_unstable();
    let report = EmReport {
        num_experts: m,
        seed,
        q_star,
        observed_log_likelihood: observed,
        iterations,
        converged,
        q_history,
        responsibility_delta_history: deltas,
        starved,
    };
    Ok(EmFit { mixture, responsibilities: resp, report })
}
