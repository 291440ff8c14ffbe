//! Non-stationary expert: independent stationary GPs on time windows tiled
//! backward from an anchor time. Points in different windows are uncorrelated,
//! so the joint density factorizes over windows and so does training.

use super::block::ObservationBlock;
use super::fit::{fit_weighted_mle, initial_params};
use super::likelihood::log_marginal_likelihood_value;
use super::optim::OptimizerConfig;
use super::params::{StationaryGpParams, WindowConfig, WindowedGpParams};
use crate::error::{Error, Result};
use crate::numeric::stable_sum;

/// Split a block into per-window sub-blocks with times relative to `anchor`.
pub fn split_by_window(block: &ObservationBlock, cfg: WindowConfig, anchor: f64) -> Vec<Option<ObservationBlock>> {
    let shifted = block.shifted(anchor);
    (0..cfg.count).map(|w| shifted.select(|_, tau| cfg.window_of(tau) == w)).collect()
}

/// Joint log-density of a block under the windowed model anchored at `anchor`.
pub fn windowed_log_likelihood(block: &ObservationBlock, params: &WindowedGpParams, anchor: f64) -> Result<f64> {
    if block.is_empty() {
        return Err(Error::InvalidArgument("observation block is empty".into()));
    }
    let parts = split_by_window(block, params.config(), anchor);
    let mut terms = Vec::with_capacity(parts.len());
    for (w, part) in parts.iter().enumerate() {
        if let Some(sub) = part {
            terms.push(log_marginal_likelihood_value(sub, &params.windows[w])?);
        }
    }
    Ok(stable_sum(terms))
}

/// Per-window weighted MLE. Each window is fit only on the points that fall
/// inside it; windows without weighted data copy `fallback` and are flagged.
pub fn fit_windowed_mle(
    data: &[(ObservationBlock, f64)],
    weights: &[f64],
    cfg: WindowConfig,
    opt: &OptimizerConfig,
    fallback: &StationaryGpParams,
) -> Result<WindowedGpParams> {
    cfg.validate()?;
    if data.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!("{} patients but {} weights", data.len(), weights.len())));
    }
    let dim = fallback.dim();
    let split: Vec<Vec<Option<ObservationBlock>>> =
        data.iter().map(|(b, anchor)| split_by_window(b, cfg, *anchor)).collect();

    let mut windows = Vec::with_capacity(cfg.count);
    let mut inherited = Vec::with_capacity(cfg.count);
    for w in 0..cfg.count {
        let mut blocks = Vec::new();
        let mut ws = Vec::new();
        for (parts, &weight) in split.iter().zip(weights) {
            if let Some(sub) = &parts[w] {
                if weight > 0.0 {
                    blocks.push(sub.clone());
                    ws.push(weight);
                }
            }
        }
        if blocks.is_empty() {
            windows.push(fallback.clone());
            inherited.push(true);
            continue;
        }
        let init = initial_params(&blocks, &ws, dim)?;
        windows.push(fit_weighted_mle(&blocks, &ws, &init, opt)?);
        inherited.push(false);
    }
    if inherited.iter().all(|&x| x) {
        return Err(Error::EmptySubset("every window is empty".into()));
    }
    WindowedGpParams::with_flags(windows, cfg.width_hours, inherited)
}
