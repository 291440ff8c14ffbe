//! Monotone limited-memory quasi-Newton ascent with backtracking.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    /// Convergence when the gradient infinity-norm falls below this.
    pub grad_tol: f64,
    /// Number of curvature pairs retained.
    pub memory: usize,
    /// Largest infinity-norm of a single trial step.
    pub max_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-5, memory: 8, max_step: 2.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub iterations: usize,
    pub converged: bool,
    /// The line search could not improve the objective any further.
    pub stalled: bool,
    /// Objective at every accepted iterate, starting with the initial point.
    pub history: Vec<f64>,
}

pub(crate) struct Evaluation<S> {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub state: S,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;

/// Maximize `f` from `x0`. `f` returns `None` where the objective is
/// undefined (failed factorization, non-finite value); such trial points are
/// rejected by the line search. Accepted iterates never decrease `f`.
pub(crate) fn maximize<S, F>(
    mut f: F,
    x0: DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<(DVector<f64>, Evaluation<S>, OptimizerTrace)>
where
    F: FnMut(&DVector<f64>) -> Option<Evaluation<S>>,
{
    let mut x = x0;
    let mut cur = match f(&x) {
        Some(e) if e.value.is_finite() && e.gradient.iter().all(|g| g.is_finite()) => e,
        _ => return Err(Error::Divergence { iterations: 0 }),
    };
    let mut trace = OptimizerTrace { history: vec![cur.value], ..Default::default() };
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();

    while trace.iterations < cfg.max_iter {
        if cur.gradient.amax() < cfg.grad_tol {
            trace.converged = true;
            break;
        }
        let mut dir = ascent_direction(&cur.gradient, &pairs);
        let mut slope = dir.dot(&cur.gradient);
        if !(slope > 0.0) {
            pairs.clear();
            dir = cur.gradient.clone();
            slope = dir.dot(&dir);
        }
        let mut step = (cfg.max_step / dir.amax()).min(1.0);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial = &x + step * &dir;
            if let Some(e) = f(&trial) {
                if e.value.is_finite()
                    && e.gradient.iter().all(|g| g.is_finite())
                    && e.value >= cur.value + ARMIJO * step * slope
                {
                    accepted = Some((trial, e));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, next)) = accepted else {
            trace.stalled = true;
            break;
        };
        let s = &x_new - &x;
        // curvature of the negated objective
        let y = &cur.gradient - &next.gradient;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            pairs.push_back((s, y));
            if pairs.len() > cfg.memory {
                pairs.pop_front();
            }
        }
        x = x_new;
        cur = next;
        trace.iterations += 1;
        trace.history.push(cur.value);
    }
    if !trace.converged && cur.gradient.amax() < cfg.grad_tol {
        trace.converged = true;
    }
    Ok((x, cur, trace))
}

/// Two-loop recursion; returns `H·g` for the ascent problem.
fn ascent_direction(g: &DVector<f64>, pairs: &VecDeque<(DVector<f64>, DVector<f64>)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let rho = 1.0 / y.dot(s);
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push((a, rho));
    }
    if let Some((s, y)) = pairs.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y), (a, rho)) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    q
}
