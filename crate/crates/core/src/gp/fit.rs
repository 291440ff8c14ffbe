//! Weighted maximum-likelihood fitting of a stationary expert.
//!
//! The mean has a closed-form generalized-least-squares solution for fixed
//! kernel parameters, so the optimizer works on the profile likelihood: every
//! trial point of the kernel coordinates re-solves the mean before the
//! objective is evaluated. Accepted iterates never decrease the objective.

use nalgebra::{DMatrix, DVector};

use super::block::ObservationBlock;
use super::likelihood::Factored;
use super::optim::{maximize, Evaluation, OptimizerConfig, OptimizerTrace};
use super::params::StationaryGpParams;
use crate::error::{Error, Result};
use crate::numeric::{median, stable_sum};

const INIT_NOISE_VAR: f64 = 0.1;
const INIT_SIGMA_RIDGE: f64 = 0.1;
/// Normalized weights below this are left out of the optimizer's objective.
/// The accept/reject check against the start still uses every block.
const NEGLIGIBLE_WEIGHT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Weighted objective `Σ w_i log f(block_i)` at the initial parameters.
    pub initial_objective: f64,
    pub final_objective: f64,
    pub trace: OptimizerTrace,
}

/// `Σ_i w_i · log f(block_i | params)`; blocks with zero weight are skipped.
pub fn weighted_log_likelihood(
    blocks: &[ObservationBlock],
    weights: &[f64],
    params: &StationaryGpParams,
) -> Result<f64> {
    check_weights(blocks, weights)?;
    let mut terms = Vec::with_capacity(blocks.len());
    for (b, &w) in blocks.iter().zip(weights) {
        if w > 0.0 {
            terms.push(w * Factored::new(b, params)?.value(b, params.mean()));
        }
    }
    Ok(stable_sum(terms))
}

fn check_weights(blocks: &[ObservationBlock], weights: &[f64]) -> Result<f64> {
    if blocks.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!("{} blocks but {} weights", blocks.len(), weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let total = stable_sum(weights.iter().copied());
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("at least one weight must be positive".into()));
    }
    Ok(total)
}

/// Data-driven starting point: weighted per-stream mean, `L` from the weighted
/// covariance of per-patient stream means plus `0.1·I`, `ℓ` the median
/// within-patient pairwise time gap, `σ_n² = 0.1`.
pub fn initial_params(blocks: &[ObservationBlock], weights: &[f64], dim: usize) -> Result<StationaryGpParams> {
    check_weights(blocks, weights)?;
    let active: Vec<(&ObservationBlock, f64)> =
        blocks.iter().zip(weights.iter().copied()).filter(|(_, w)| *w > 0.0).collect();

    let mut sum = vec![0.0; dim];
    let mut mass = vec![0.0; dim];
    let mut patient_means: Vec<(Vec<Option<f64>>, f64)> = Vec::with_capacity(active.len());
    for &(b, w) in &active {
        let mut s = vec![0.0; dim];
        let mut c = vec![0usize; dim];
        for (&(d, _), &v) in b.index.iter().zip(&b.values) {
            if d >= dim {
                return Err(Error::DimensionMismatch(format!("stream {d} out of range for D = {dim}")));
            }
            s[d] += v;
            c[d] += 1;
        }
        for d in 0..dim {
            sum[d] += w * s[d];
            mass[d] += w * c[d] as f64;
        }
        patient_means.push(((0..dim).map(|d| (c[d] > 0).then(|| s[d] / c[d] as f64)).collect(), w));
    }
    let mean: Vec<f64> = (0..dim).map(|d| if mass[d] > 0.0 { sum[d] / mass[d] } else { 0.0 }).collect();

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for d in 0..dim {
        for e in 0..=d {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (pm, w) in &patient_means {
                if let (Some(x), Some(y)) = (pm[d], pm[e]) {
                    acc += w * (x - mean[d]) * (y - mean[e]);
                    wsum += w;
                }
            }
            let c = if wsum > 0.0 { acc / wsum } else { 0.0 };
            cov[(d, e)] = c;
            cov[(e, d)] = c;
        }
        cov[(d, d)] += INIT_SIGMA_RIDGE;
    }
    let chol = match cov.clone().cholesky() {
        Some(ch) => ch.l(),
        None => DMatrix::from_diagonal(&cov.diagonal().map(f64::sqrt)),
    };

    let mut gaps = Vec::new();
    for &(b, _) in &active {
        let mut times: Vec<f64> = b.index.iter().map(|&(_, t)| t).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        for i in 0..times.len() {
            for j in (i + 1)..times.len() {
                gaps.push(times[j] - times[i]);
            }
        }
    }
    let lengthscale = median(&mut gaps).filter(|g| *g > 0.0).unwrap_or(1.0);

    StationaryGpParams::new(DVector::from_vec(mean), chol, lengthscale, INIT_NOISE_VAR)
}

/// Weighted maximum-likelihood estimate starting from `init`.
pub fn fit_weighted_mle(
    blocks: &[ObservationBlock],
    weights: &[f64],
    init: &StationaryGpParams,
    cfg: &OptimizerConfig,
) -> Result<StationaryGpParams> {
    fit_weighted_mle_report(blocks, weights, init, cfg).map(|(p, _)| p)
}

pub fn fit_weighted_mle_report(
    blocks: &[ObservationBlock],
    weights: &[f64],
    init: &StationaryGpParams,
    cfg: &OptimizerConfig,
) -> Result<(StationaryGpParams, FitReport)> {
    let total = check_weights(blocks, weights)?;
    let dim = init.dim();
    let active: Vec<(&ObservationBlock, f64)> = blocks
        .iter()
        .zip(weights.iter().copied())
        .filter(|(_, w)| *w > 0.0)
        .map(|(b, w)| (b, w / total))
        .filter(|(_, w)| *w >= NEGLIGIBLE_WEIGHT)
        .collect();

    let initial_objective = weighted_log_likelihood(blocks, weights, init)?;
    if !initial_objective.is_finite() {
        return Err(Error::Divergence { iterations: 0 });
    }

    let theta0 = init.to_unconstrained();
    let mean_ref = init.mean().clone();
    let kernel0 = theta0.rows(dim, theta0.len() - dim).into_owned();
    let objective = |k: &DVector<f64>| profile_objective(&active, &mean_ref, k);

    let (_, best, trace) = maximize(objective, kernel0, cfg)?;
    let fitted = best.state;
    let final_objective = weighted_log_likelihood(blocks, weights, &fitted)?;
    if final_objective < initial_objective {
        // rounding can leave the profile a hair below an already-optimal start
        let report = FitReport { initial_objective, final_objective: initial_objective, trace };
        return Ok((init.clone(), report));
    }
    Ok((fitted, FitReport { initial_objective, final_objective, trace }))
}

/// Normalized-weight profile likelihood at kernel coordinates `kernel`.
fn profile_objective(
    active: &[(&ObservationBlock, f64)],
    mean_ref: &DVector<f64>,
    kernel: &DVector<f64>,
) -> Option<Evaluation<StationaryGpParams>> {
    let dim = mean_ref.len();
    let mut theta = Vec::with_capacity(dim + kernel.len());
    theta.extend(mean_ref.iter());
    theta.extend(kernel.iter());
    let params = StationaryGpParams::from_unconstrained(dim, &theta).ok()?;

    let mut factored = Vec::with_capacity(active.len());
    let mut ata = DMatrix::<f64>::zeros(dim, dim);
    let mut atx = DVector::<f64>::zeros(dim);
    for &(b, w) in active {
        let f = Factored::new(b, &params).ok()?;
        let kinv = f.inverse();
        let (a, x) = Factored::gls_terms(b, dim, &kinv);
        ata += w * a;
        atx += w * x;
        factored.push((f, kinv));
    }
    let mean = gls_mean(&ata, &atx, mean_ref);
    let params = params.with_mean(mean);

    let mut values = Vec::with_capacity(active.len());
    let mut grad = DVector::<f64>::zeros(StationaryGpParams::free_parameter_count(dim));
    for (&(b, w), (f, kinv)) in active.iter().zip(&factored) {
        let (v, g) = f.value_and_gradient(b, &params, kinv);
        values.push(w * v);
        grad.axpy(w, &g, 1.0);
    }
    let value = stable_sum(values);
    if !value.is_finite() {
        return None;
    }
    let gradient = grad.rows(dim, grad.len() - dim).into_owned();
    Some(Evaluation { value, gradient, state: params })
}

/// Solve the GLS system on the streams that carry data; others keep `fallback`.
fn gls_mean(ata: &DMatrix<f64>, atx: &DVector<f64>, fallback: &DVector<f64>) -> DVector<f64> {
    let observed: Vec<usize> = (0..ata.nrows()).filter(|&d| ata[(d, d)] > 0.0).collect();
    let k = observed.len();
    if k == 0 {
        return fallback.clone();
    }
    let sub = DMatrix::from_fn(k, k, |i, j| ata[(observed[i], observed[j])]);
    let rhs = DVector::from_fn(k, |i, _| atx[observed[i]]);
    let sol = match sub.clone().cholesky() {
        Some(ch) => Some(ch.solve(&rhs)),
        None => sub.lu().solve(&rhs),
    };
    let mut mean = fallback.clone();
    if let Some(sol) = sol.filter(|s| s.iter().all(|x| x.is_finite())) {
        for (i, &d) in observed.iter().enumerate() {
            mean[d] = sol[i];
        }
    }
    mean
}
