//! Shared numerical building blocks.

pub mod optim;
pub mod quad;
pub mod regression;
pub mod special;
pub mod stats;

pub use optim::{find_root, minimize, minimize_scalar, Minimum, OptimizerConfig};
pub use quad::{adaptive_quad, integrate_between, integrate_line, Quadrature, DEFAULT_QUAD_TOL};
pub use regression::ols_fit;
pub use special::{bessel_k, log_bessel_k, log_bessel_k_scaled, log_gamma, normal_cdf};
pub use stats::{chi_square_uniform, ks_pvalue, ks_uniform_statistic};
