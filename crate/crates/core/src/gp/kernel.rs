use nalgebra::{Cholesky, DMatrix, Dyn};

use super::block::ObservationBlock;
use super::params::StationaryGpParams;
use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Unit-amplitude squared-exponential kernel `exp(-(t-t')²/(2ℓ²))`.
pub fn se_kernel(t: f64, t_prime: f64, lengthscale: f64) -> Result<f64> {
    if !(lengthscale > 0.0) {
        return Err(Error::InvalidArgument(format!("lengthscale must be positive, got {lengthscale}")));
    }
    Ok(se(t, t_prime, lengthscale))
}

#[inline]
pub(crate) fn se(t: f64, t_prime: f64, lengthscale: f64) -> f64 {
    let r = (t - t_prime) / lengthscale;
    (-0.5 * r * r).exp()
}

/// Temporal kernel matrix of a block and the assembled joint covariance.
pub(crate) struct Assembled {
    pub temporal: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

pub(crate) fn assemble(block: &ObservationBlock, params: &StationaryGpParams) -> Assembled {
    let n = block.len();
    let sigma = params.sigma();
    let ell = params.lengthscale();
    let mut temporal = DMatrix::zeros(n, n);
    let mut covariance = DMatrix::zeros(n, n);
    for b in 0..n {
        let (db, tb) = block.index[b];
        for a in b..n {
            let (da, ta) = block.index[a];
            let k = if a == b { 1.0 } else { se(ta, tb, ell) };
            let c = sigma[(da, db)] * k;
            temporal[(a, b)] = k;
            temporal[(b, a)] = k;
            covariance[(a, b)] = c;
            covariance[(b, a)] = c;
        }
        covariance[(b, b)] += params.noise_var();
    }
    Assembled { temporal, covariance }
}

/// Joint covariance over `(stream, time)` pairs:
/// `Σ[d_a, d_b]·k(t_a, t_b) + σ_n²·[a = b]`.
pub fn assemble_covariance(block: &ObservationBlock, params: &StationaryGpParams) -> Result<DMatrix<f64>> {
    if block.is_empty() {
        return Err(Error::InvalidArgument("observation index is empty".into()));
    }
    if let Some(&(d, _)) = block.index.iter().find(|(d, _)| *d >= params.dim()) {
        return Err(Error::DimensionMismatch(format!("stream {d} out of range for D = {}", params.dim())));
    }
    let cov = assemble(block, params).covariance;
    let (_, jitter) = factorize(cov.clone())?;
    let mut cov = cov;
    if jitter > 0.0 {
        for i in 0..cov.nrows() {
            cov[(i, i)] += jitter;
        }
    }
    Ok(cov)
}

/// Cholesky factorization with diagonal jitter escalation.
///
/// Tries the plain matrix first, then adds `1e-10·mean(diag)` growing tenfold
/// up to `1e-4·mean(diag)`. Returns the factor and the jitter used.
pub(crate) fn factorize(matrix: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = matrix.nrows();
    if let Some(ch) = Cholesky::new(matrix.clone()) {
        return Ok((ch, 0.0));
    }
    let scale = (0..n).map(|i| matrix[(i, i)]).sum::<f64>() / n as f64;
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(m) {
            log::debug!("covariance needed jitter {jitter:e}");
            return Ok((ch, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::Factorization { size: n, jitter: JITTER_MAX * scale })
}
