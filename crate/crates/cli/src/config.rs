//! Experiment configuration files (TOML).
//!
//! ```toml
//! seed = 42
//! workers = 4
//!
//! [law]
//! preset = "log_normal_binary"
//! kappa = 1.5
//!
//! [experiment]
//! kind = "excursion_tails"
//! n = 1000000
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use favsite_core::env::{EnvironmentLaw, Preset};
use favsite_core::spine::KernelOpts;
use favsite_core::stats::TailOpts;
use favsite_core::walk::{BranchingOpts, TrajectoryOpts, DEFAULT_STEP_BUDGET};
use serde::{Deserialize, Serialize};

fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Overrides every per-replica budget of the experiment.
    #[serde(default)]
    pub budget_steps: Option<u64>,
    pub law: Preset,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    ExcursionTails(ExcursionTails),
    FavoriteTrajectory(FavoriteTrajectory),
    SpineChecks(SpineChecks),
    OracleSuite(OracleSuite),
    PiEstimate(PiEstimate),
    AppendixChecks(AppendixChecks),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::ExcursionTails(_) => "excursion_tails",
            Experiment::FavoriteTrajectory(_) => "favorite_trajectory",
            Experiment::SpineChecks(_) => "spine_checks",
            Experiment::OracleSuite(_) => "oracle_suite",
            Experiment::PiEstimate(_) => "pi_estimate",
            Experiment::AppendixChecks(_) => "appendix_checks",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Branching,
    Walk,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Batches for the standard error of the slope.
    pub batches: usize,
}

impl Default for EpsGrid {
    fn default() -> Self {
        EpsGrid {
            lo: 1e-3,
            hi: 1e-2,
            points: 10,
            batches: 100,
        }
    }
}

/// Direct samples of `max L_bar` at `T_k` against the composition of the
/// part above the optional line with independent copies at `T_1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityInLaw {
    pub k: u64,
    pub n: u64,
    pub reps: u64,
    /// Independent `T_1` maxima the copies are drawn from.
    pub pool: u64,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
}

fn default_permutations() -> usize {
    favsite_core::stats::DEFAULT_PERMUTATIONS
}

fn default_k() -> u64 {
    1
}

fn default_vertex_budget() -> u64 {
    BranchingOpts::default().vertex_budget
}

fn default_chunk() -> u64 {
    100_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcursionTails {
    /// Excursions in the main batch; zero skips it.
    #[serde(default)]
    pub n: u64,
    #[serde(default = "default_k")]
    pub k: u64,
    #[serde(default = "engine_default")]
    pub engine: EngineKind,
    /// Vertex budget (branching engine) or step budget (walk engine).
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub tail: TailOpts,
    #[serde(default)]
    pub eps: EpsGrid,
    /// Records are simulated and appended to the CSV in chunks of this size.
    #[serde(default = "default_chunk")]
    pub chunk: u64,
    #[serde(default)]
    pub identity_in_law: Option<IdentityInLaw>,
}

fn engine_default() -> EngineKind {
    EngineKind::Branching
}

impl ExcursionTails {
    pub fn budget(&self) -> u64 {
        self.budget.unwrap_or(match self.engine {
            EngineKind::Branching => default_vertex_budget(),
            EngineKind::Walk => DEFAULT_STEP_BUDGET,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FavoriteTrajectory {
    pub replicas: u64,
    pub n_max: u64,
    /// Log-spaced checkpoints between `first_checkpoint` and `n_max`.
    pub checkpoints: usize,
    #[serde(default = "default_first_checkpoint")]
    pub first_checkpoint: u64,
    /// Checkpoints before this time are not scored.
    pub burn_in: u64,
    #[serde(default)]
    pub opts: TrajectoryOpts,
}

fn default_first_checkpoint() -> u64 {
    1000
}

impl FavoriteTrajectory {
    pub fn checkpoint_times(&self) -> Vec<u64> {
        let (lo, hi) = (self.first_checkpoint.max(1) as f64, self.n_max as f64);
        let c = self.checkpoints.max(2);
        let mut v: Vec<u64> = (0..c)
            .map(|i| (lo * (hi / lo).powf(i as f64 / (c - 1) as f64)).round() as u64)
            .map(|t| t.clamp(1, self.n_max))
            .collect();
        v.dedup();
        v
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowsCheck {
    pub i_max: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossCheck {
    pub n: u64,
    pub reps: u64,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_y_budget")]
    pub budget: u64,
}

fn default_y_budget() -> u64 {
    100_000_000
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YSamplerKind {
    Kernel,
    Bpre,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YMaxCheck {
    pub n: u64,
    #[serde(default = "default_y_sampler")]
    pub sampler: YSamplerKind,
    #[serde(default = "default_y_budget")]
    pub budget: u64,
    /// Also fit the maximum of the BPRE without immigration.
    #[serde(default)]
    pub bpre_max: bool,
    #[serde(default)]
    pub tail: TailOpts,
}

fn default_y_sampler() -> YSamplerKind {
    YSamplerKind::Bpre
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpineChecks {
    #[serde(default)]
    pub kernel: KernelOpts,
    #[serde(default)]
    pub rows: Option<RowsCheck>,
    #[serde(default)]
    pub cross_construction: Option<CrossCheck>,
    #[serde(default)]
    pub y_max: Option<YMaxCheck>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HittingCheck {
    pub paths: u64,
    pub max_depth: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SumBoundCheck {
    pub points: u64,
    pub draws: u64,
    #[serde(default = "default_sum_bound_n_max")]
    pub n_max: u64,
}

fn default_sum_bound_n_max() -> u64 {
    20
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchedMeansCheck {
    pub vertices: u64,
    pub excursions: u64,
    pub max_depth: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleCheck {
    pub depth: u32,
    pub replicas: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSuite {
    #[serde(default)]
    pub hitting: Option<HittingCheck>,
    #[serde(default)]
    pub sum_bound: Option<SumBoundCheck>,
    #[serde(default)]
    pub quenched_means: Option<QuenchedMeansCheck>,
    #[serde(default)]
    pub martingale: Option<MartingaleCheck>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiEstimate {
    pub n: u64,
    #[serde(default)]
    pub opts: favsite_core::spine::PiOpts,
    #[serde(default = "default_j_max")]
    pub j_max: u64,
    #[serde(default = "default_slope_window")]
    pub slope_window: (usize, usize),
    #[serde(default)]
    pub kernel: KernelOpts,
    /// Fit for the tail of the perpetuity itself.
    #[serde(default)]
    pub tail: TailOpts,
}

fn default_j_max() -> u64 {
    20
}

fn default_slope_window() -> (usize, usize) {
    (10, 100)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupermartingaleCase {
    pub gamma: f64,
    pub i_max: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypergeometricCheck {
    pub cases: u64,
    #[serde(default = "default_hyper_i")]
    pub i_max: u64,
}

fn default_hyper_i() -> u64 {
    6
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixChecks {
    #[serde(default)]
    pub kernel: KernelOpts,
    #[serde(default)]
    pub supermartingale: Vec<SupermartingaleCase>,
    #[serde(default)]
    pub hypergeometric: Option<HypergeometricCheck>,
}

/// Command-line or environment overrides, applied after parsing.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub budget_steps: Option<u64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(b) = o.budget_steps {
            self.budget_steps = Some(b);
        }
    }

    pub fn law(&self) -> anyhow::Result<EnvironmentLaw> {
        EnvironmentLaw::new(self.law.clone()).context("field `law`")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.workers == 0 {
            bail!("field `workers`: must be at least 1");
        }
        self.law()?;
        match &self.experiment {
            Experiment::ExcursionTails(e) => {
                if e.k == 0 {
                    bail!("field `experiment.k`: must be at least 1");
                }
                if e.chunk == 0 {
                    bail!("field `experiment.chunk`: must be at least 1");
                }
                if !(e.eps.lo > 0.0 && e.eps.lo < e.eps.hi && e.eps.hi < 1.0 && e.eps.points >= 2) {
                    bail!("field `experiment.eps`: need 0 < lo < hi < 1 and at least 2 points");
                }
                check_window(&e.tail, "experiment.tail")?;
                if let Some(id) = &e.identity_in_law {
                    if id.k == 0 || id.n == 0 || id.reps == 0 || id.pool == 0 {
                        bail!("field `experiment.identity_in_law`: k, n, reps and pool must be positive");
                    }
                }
            }
            Experiment::FavoriteTrajectory(f) => {
                if f.replicas == 0 || f.n_max == 0 {
                    bail!("field `experiment`: replicas and n_max must be positive");
                }
                if f.first_checkpoint > f.n_max {
                    bail!("field `experiment.first_checkpoint`: exceeds n_max");
                }
            }
            Experiment::SpineChecks(s) => {
                if let Some(y) = &s.y_max {
                    check_window(&y.tail, "experiment.y_max.tail")?;
                }
            }
            Experiment::PiEstimate(p) => {
                if p.n < 1000 {
                    bail!("field `experiment.n`: at least 1000 perpetuities are needed");
                }
                let (lo, hi) = p.slope_window;
                if !(1 <= lo && lo < hi && hi <= p.opts.i_max) {
                    bail!("field `experiment.slope_window`: need 1 <= lo < hi <= opts.i_max");
                }
                check_window(&p.tail, "experiment.tail")?;
            }
            Experiment::AppendixChecks(a) => {
                for c in &a.supermartingale {
                    if !(c.gamma > 0.0) {
                        bail!("field `experiment.supermartingale.gamma`: must be positive");
                    }
                }
            }
            Experiment::OracleSuite(_) => {}
        }
        Ok(())
    }
}

fn check_window(t: &TailOpts, field: &str) -> anyhow::Result<()> {
    let (lo, hi) = t.window;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        bail!("field `{field}.window`: need 0 < lo < hi < 1");
    }
    Ok(())
}
