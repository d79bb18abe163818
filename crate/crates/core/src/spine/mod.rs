//! The spine chain `(Y_n)`: edge local times along a size-biased ray.

pub mod appendix;
pub mod chain;
pub mod gh;
pub mod kernel;
pub mod many_to_one;
pub mod pi;

pub use appendix::{
    f_gamma, hypergeometric_identity_check, supermartingale_check, SeriesCheck, SupermartingalePoint,
    SupermartingaleReport,
};
pub use chain::{
    bpre_max, bpre_max_tail, bpre_maxima, excursion_max_tail, bpre_step, simulate_y_bpre, simulate_y_kernel, y_excursions, y_path_kernel, YExcursion,
    YSampler,
};
pub use kernel::{Integration, KernelOpts, Row, YKernel};
pub use many_to_one::{many_to_one_check, ManyToOne};
pub use pi::{invariant_pi, invariant_pi_from, perpetuities, pi_tail_slope, stationarity_residuals, PiOpts, Residual, StationaryEstimate};
