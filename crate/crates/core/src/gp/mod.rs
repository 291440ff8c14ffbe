//! Multi-task Gaussian-process density machinery with a separable kernel
//! `K((d,t),(d',t')) = Σ[d,d']·k(t,t')`.

mod block;
mod fit;
pub(crate) mod kernel;
mod likelihood;
mod optim;
mod params;
mod windowed;

pub use block::ObservationBlock;
pub use fit::{fit_weighted_mle, fit_weighted_mle_report, initial_params, weighted_log_likelihood, FitReport};
pub use kernel::{assemble_covariance, se_kernel};
pub use likelihood::{log_marginal_likelihood, log_marginal_likelihood_value};
pub use optim::{OptimizerConfig, OptimizerTrace};
pub use params::{StationaryGpParams, WindowConfig, WindowedGpParams};
pub use windowed::{fit_windowed_mle, split_by_window, windowed_log_likelihood};
