//! Random environment: laws, the marked tree and its explorers.

pub mod explore;
pub mod law;
pub mod tree;

pub use explore::{
    additive_martingale_w, estimate_k_eps, estimate_m, sample_additive_martingale, ExploreOpts,
    KEpsEstimate, MinimaEstimate,
};
pub use law::{
    perpetuity_from, sample_perpetuity, solve_kappa, solve_kappa_mc, EnvironmentLaw, Outcome,
    PerpetuityRule, Preset, S1Law,
};
pub use tree::{MarkedTree, NodeId, ROOT, SENTINEL};
