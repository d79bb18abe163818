//! Tail exponents, two-sample tests and the `f(eps)` functional.

pub mod ccdf;
pub mod feps;
pub mod ks;
pub mod lln;
pub mod tail;

pub use ccdf::Ccdf;
pub use feps::{f_epsilon_curve, f_epsilon_slope, log_grid, mean_with_se, second_moment, FEpsFit, FEpsPoint};
pub use ks::{ks_rule, ks_two_sample, ks_two_sample_counts, KsResult, KsRule, DEFAULT_PERMUTATIONS};
pub use lln::{tree_series, z_l_lln, LlnPoint, LlnReport, TreeSeries};
pub use tail::{fit_tail_exponent, loglog_slope, ls_slope, tail_exponent, tail_exponent_counts, TailMethod, TailOpts, TailReport};
