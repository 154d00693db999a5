//! Numerical kernel: root solving, quadrature, kernels, bandwidths, dense
//! symmetric solves, and seeded randomness.

mod kernel;
mod linalg;
mod quadrature;
mod rng;
mod root;

pub use kernel::{
    gaussian_kernel, gaussian_kernel_scalar, log_gaussian_kernel, silverman_bandwidth, Bandwidth,
};
pub use linalg::{sample_cov, solve_psd, solve_psd_vec, solve_spd_strict, LinalgError, PsdSolution};
pub use quadrature::{gauss_hermite, QuadratureRule};
pub use rng::{seeded_rng, StudyRng};
pub use root::{solve_root, solve_root_robust, RootConfig, RootError, RootMethod};
