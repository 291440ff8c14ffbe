use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyper-parameters of one stationary multi-task GP expert.
///
/// The cross-stream covariance is `Σ = L Lᵀ` with `L` lower triangular and a
/// positive diagonal. The temporal kernel is a unit-amplitude squared
/// exponential, so the only scalars are the lengthscale and the noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct StationaryGpParams {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    lengthscale: f64,
    noise_var: f64,
}

/// On-disk layout: `L` stored as its row-major lower triangle.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRepr {
    mean: Vec<f64>,
    chol_lower: Vec<f64>,
    lengthscale: f64,
    noise_var: f64,
}

impl From<StationaryGpParams> for ParamsRepr {
    fn from(p: StationaryGpParams) -> Self {
        let d = p.dim();
        let mut chol_lower = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in 0..=i {
                chol_lower.push(p.chol[(i, j)]);
            }
        }
        ParamsRepr { mean: p.mean.as_slice().to_vec(), chol_lower, lengthscale: p.lengthscale, noise_var: p.noise_var }
    }
}

impl TryFrom<ParamsRepr> for StationaryGpParams {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        let d = r.mean.len();
        if r.chol_lower.len() != d * (d + 1) / 2 {
            return Err(Error::DimensionMismatch(format!(
                "chol_lower has {} entries, expected {} for D = {d}",
                r.chol_lower.len(),
                d * (d + 1) / 2
            )));
        }
        let mut chol = DMatrix::zeros(d, d);
        let mut k = 0;
        for i in 0..d {
            for j in 0..=i {
                chol[(i, j)] = r.chol_lower[k];
                k += 1;
            }
        }
        StationaryGpParams::new(DVector::from_vec(r.mean), chol, r.lengthscale, r.noise_var)
    }
}

impl StationaryGpParams {
    pub fn new(mean: DVector<f64>, chol: DMatrix<f64>, lengthscale: f64, noise_var: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("GP parameters need at least one stream".into()));
        }
        if chol.nrows() != d || chol.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "Cholesky factor is {}x{}, mean has length {d}",
                chol.nrows(),
                chol.ncols()
            )));
        }
        for i in 0..d {
            if !(chol[(i, i)] > 0.0 && chol[(i, i)].is_finite()) {
                return Err(Error::InvalidArgument(format!("Cholesky diagonal entry {i} must be positive")));
            }
            for j in (i + 1)..d {
                if chol[(i, j)] != 0.0 {
                    return Err(Error::InvalidArgument("Cholesky factor must be lower triangular".into()));
                }
            }
        }
        if chol.iter().chain(mean.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite GP parameter".into()));
        }
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidArgument(format!("lengthscale must be positive, got {lengthscale}")));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise variance must be positive, got {noise_var}")));
        }
        Ok(Self { mean, chol, lengthscale, noise_var })
    }

    /// Identity cross-stream factor, zero mean.
    pub fn isotropic(dim: usize, lengthscale: f64, noise_var: f64) -> Result<Self> {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim), lengthscale, noise_var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Cross-stream covariance `Σ = L Lᵀ`.
    pub fn sigma(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    pub fn with_mean(&self, mean: DVector<f64>) -> Self {
        assert_eq!(mean.len(), self.dim());
        Self { mean, ..self.clone() }
    }

    /// `D(D+1)/2 + D + 2`.
    pub fn free_parameter_count(dim: usize) -> usize {
        dim * (dim + 1) / 2 + dim + 2
    }

    /// Unconstrained coordinates: `[mean (D), L row-major lower triangle with
    /// log-diagonal, log ℓ, log σ_n]`.
    pub fn to_unconstrained(&self) -> DVector<f64> {
        let d = self.dim();
        let mut v = Vec::with_capacity(Self::free_parameter_count(d));
        v.extend(self.mean.iter());
        for i in 0..d {
            for j in 0..=i {
                let x = self.chol[(i, j)];
                v.push(if i == j { x.ln() } else { x });
            }
        }
        v.push(self.lengthscale.ln());
        v.push(0.5 * self.noise_var.ln());
        DVector::from_vec(v)
    }

    pub fn from_unconstrained(dim: usize, theta: &[f64]) -> Result<Self> {
        if theta.len() != Self::free_parameter_count(dim) {
            return Err(Error::DimensionMismatch(format!(
                "unconstrained vector has length {}, expected {}",
                theta.len(),
                Self::free_parameter_count(dim)
            )));
        }
        let mean = DVector::from_column_slice(&theta[..dim]);
        let mut chol = DMatrix::zeros(dim, dim);
        let mut k = dim;
        for i in 0..dim {
            for j in 0..=i {
                chol[(i, j)] = if i == j { theta[k].exp() } else { theta[k] };
                k += 1;
            }
        }
        let lengthscale = theta[k].exp();
        let noise_var = (2.0 * theta[k + 1]).exp();
        Self::new(mean, chol, lengthscale, noise_var)
    }

    /// Position of `L[i][j]` (i ≥ j) in the unconstrained vector.
    pub(crate) fn chol_offset(dim: usize, i: usize, j: usize) -> usize {
        dim + i * (i + 1) / 2 + j
    }
}

/// Window layout of the non-stationary (deteriorating-domain) model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub count: usize,
    pub width_hours: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { count: 4, width_hours: 12.0 }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("window count must be at least 1".into()));
        }
        if !(self.width_hours > 0.0 && self.width_hours.is_finite()) {
            return Err(Error::InvalidArgument("window width must be positive".into()));
        }
        Ok(())
    }

    /// Window index of a time offset `tau = t - anchor`.
    ///
    /// Window `w` covers `-(W-w)·width < tau <= -(W-w-1)·width`; earlier
    /// offsets fall in window 0 and offsets after the anchor in window `W-1`.
    pub fn window_of(&self, tau: f64) -> usize {
        let back = (-tau / self.width_hours).floor();
        if back <= 0.0 {
            return self.count - 1;
        }
        let back = back as usize;
        if back >= self.count {
            0
        } else {
            self.count - 1 - back
        }
    }
}

/// Piecewise-stationary GP: one parameter set per backward-tiled window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedGpParams {
    pub windows: Vec<StationaryGpParams>,
    pub window_width_hours: f64,
    /// `true` for windows that had no training data and copy a fallback.
    #[serde(default)]
    pub inherited: Vec<bool>,
}

impl WindowedGpParams {
    pub fn new(windows: Vec<StationaryGpParams>, window_width_hours: f64) -> Result<Self> {
        let inherited = vec![false; windows.len()];
        Self::with_flags(windows, window_width_hours, inherited)
    }

    pub fn with_flags(windows: Vec<StationaryGpParams>, window_width_hours: f64, inherited: Vec<bool>) -> Result<Self> {
        let cfg = WindowConfig { count: windows.len(), width_hours: window_width_hours };
        cfg.validate()?;
        let d = windows[0].dim();
        if windows.iter().any(|w| w.dim() != d) {
            return Err(Error::DimensionMismatch("windows disagree on stream count".into()));
        }
        if inherited.len() != windows.len() {
            return Err(Error::DimensionMismatch("inherited flags do not match window count".into()));
        }
        Ok(Self { windows, window_width_hours, inherited })
    }

    /// Every window set to `params`, all flagged as inherited.
    pub fn replicate(params: &StationaryGpParams, cfg: WindowConfig) -> Result<Self> {
        Self::with_flags(vec![params.clone(); cfg.count], cfg.width_hours, vec![true; cfg.count])
    }

    pub fn config(&self) -> WindowConfig {
        WindowConfig { count: self.windows.len(), width_hours: self.window_width_hours }
    }

    pub fn dim(&self) -> usize {
        self.windows[0].dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> StationaryGpParams {
        let chol = DMatrix::from_row_slice(3, 3, &[1.5, 0.0, 0.0, -0.3, 0.7, 0.0, 0.2, 0.1, 2.0]);
        StationaryGpParams::new(DVector::from_vec(vec![0.1, -1.0, 3.0]), chol, 6.0, 0.04).unwrap()
    }

    #[test]
    fn free_parameter_count_matches_layout() {
        for d in 1..6 {
            let p = StationaryGpParams::isotropic(d, 1.0, 0.1).unwrap();
            assert_eq!(p.to_unconstrained().len(), StationaryGpParams::free_parameter_count(d));
        }
        assert_eq!(StationaryGpParams::free_parameter_count(5), 22);
    }

    #[test]
    fn unconstrained_round_trip() {
        let p = sample();
        let q = StationaryGpParams::from_unconstrained(3, p.to_unconstrained().as_slice()).unwrap();
        assert!((p.chol() - q.chol()).abs().max() < 1e-14);
        assert!((p.lengthscale() - q.lengthscale()).abs() < 1e-12);
        assert!((p.noise_var() - q.noise_var()).abs() < 1e-15);
    }

    #[test]
    fn serde_uses_row_major_lower_triangle() {
        let p = sample();
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(json["chol_lower"], serde_json::json!([1.5, -0.3, 0.7, 0.2, 0.1, 2.0]));
        let back: StationaryGpParams = serde_json::from_value(json).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(StationaryGpParams::new(DVector::zeros(2), bad, 1.0, 0.1).is_err());
        assert!(StationaryGpParams::isotropic(2, 0.0, 0.1).is_err());
        assert!(StationaryGpParams::isotropic(2, 1.0, -0.1).is_err());
    }

    #[test]
    fn windows_tile_backward_from_anchor() {
        let cfg = WindowConfig { count: 4, width_hours: 12.0 };
        assert_eq!(cfg.window_of(0.0), 3);
        assert_eq!(cfg.window_of(-11.9), 3);
        assert_eq!(cfg.window_of(-12.0), 2);
        assert_eq!(cfg.window_of(-12.1), 2);
        assert_eq!(cfg.window_of(-35.0), 1);
        assert_eq!(cfg.window_of(-36.0), 0);
        assert_eq!(cfg.window_of(-500.0), 0);
        assert_eq!(cfg.window_of(3.0), 3);
        let one = WindowConfig { count: 1, width_hours: 12.0 };
        assert_eq!(one.window_of(-100.0), 0);
    }
}
