//! Execution of one experiment configuration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use favsite_core::env::{additive_martingale_w, EnvironmentLaw, MarkedTree, ROOT};
use favsite_core::error::Error;
use favsite_core::oracle::{
    hitting_linear_solve_escape, hitting_params_escape, local_time_at_tn_sampler, path_site_lt_sampler,
    sum_iid_tail_bound, PathBiases,
};
use favsite_core::rng::{derive_seed, stream};
use favsite_core::spine::{
    bpre_max_tail, excursion_max_tail, hypergeometric_identity_check, invariant_pi_from, perpetuities, pi_tail_slope,
    stationarity_residuals, supermartingale_check, y_excursions, Residual, SeriesCheck, SupermartingaleReport,
    YExcursion, YKernel, YSampler,
};
use favsite_core::stats::{
    f_epsilon_slope, fit_tail_exponent, ks_rule, ks_two_sample_counts, log_grid, mean_with_se, second_moment, Ccdf,
    FEpsFit, KsRule, TailOpts, TailReport,
};
use favsite_core::walk::{
    annealed_excursion, favorite_trajectory, simulate_returns, BranchingOpts, Engine, ExcursionRecord, Scope,
    TrajectoryPoint,
};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::*;
use crate::output::{config_hash, f17, write_summary, MaybeCsv, RunSummary, Versions, SCHEMA_VERSION};

/// Corrupt one cached kernel row before the row checks run.
#[derive(Clone, Copy, Debug)]
pub struct KernelFault {
    pub i: u64,
    pub scale: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub fault: Option<KernelFault>,
}

/// Tail fit or the reason it could not be made.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fit {
    Ok(TailReport),
    Error(String),
}

impl Fit {
    pub fn of(r: favsite_core::Result<TailReport>) -> Self {
        match r {
            Ok(t) => Fit::Ok(t),
            Err(e) => Fit::Error(e.to_string()),
        }
    }

    pub fn report(&self) -> Option<&TailReport> {
        match self {
            Fit::Ok(t) => Some(t),
            Fit::Error(_) => None,
        }
    }
}

fn fit_counts(xs: &[u64], opts: &TailOpts) -> Fit {
    Fit::of(fit_tail_exponent(&Ccdf::from_counts(xs), opts))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentityResult {
    pub k: u64,
    pub n: u64,
    pub pool: u64,
    pub statistics: Vec<f64>,
    pub rule: KsRule,
    pub truncated_direct: u64,
    pub truncated_pool: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExcursionTailsResult {
    pub n: u64,
    pub k: u64,
    pub truncated: u64,
    pub max_edge_lt: Option<Fit>,
    pub max_site_lt: Option<Fit>,
    pub z1: Option<Fit>,
    pub max_below_z1: Option<Fit>,
    pub z1_mean: f64,
    pub z1_se: f64,
    pub z1_second_moment: f64,
    /// Second moment over the first tenth of the records.
    pub z1_second_moment_head: f64,
    pub f_eps: Option<FEpsFit>,
    pub identity_in_law: Option<IdentityResult>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicaScore {
    pub replica: u64,
    pub scored: usize,
    /// Scored checkpoints with every favorite in the estimated minimum set.
    pub in_minima: usize,
    /// Scored checkpoints with at most three favorites.
    pub at_most_three: usize,
    pub both: usize,
    /// `max` over checkpoints of `inf |x|` over favorites.
    pub max_min_depth: u32,
    /// `min` over checkpoints of `sup |x|` over favorites.
    pub min_max_depth: u32,
    pub minima_depths: Vec<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub checkpoints: Vec<u64>,
    pub replicas: Vec<ReplicaScore>,
    /// Pooled fraction of scored checkpoints with both properties.
    pub fraction_both: f64,
    pub fraction_in_minima: f64,
    pub fraction_at_most_three: f64,
    /// Fraction of replicas whose favorites reach beyond depth 10 at some checkpoint.
    pub fraction_far: f64,
    /// Fraction of replicas whose favorites all lie within depth 5 at some checkpoint.
    pub fraction_near: f64,
    /// The escape statistics restricted to checkpoints up to each horizon.
    pub growth: Vec<Horizon>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Horizon {
    pub n_max: u64,
    pub median_max_min_depth: f64,
    pub fraction_far: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowsResult {
    pub i_max: u64,
    pub max_abs_defect: f64,
    pub worst_row: u64,
    pub row_sums: Vec<f64>,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossResult {
    pub n: u64,
    pub max_rule: KsRule,
    pub len_rule: KsRule,
    pub truncated: u64,
    pub max_state: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct YMaxResult {
    pub n: u64,
    pub sampler: YSamplerKind,
    pub truncated: u64,
    pub excursion_max: Fit,
    pub bpre_max: Option<Fit>,
    /// Fraction of BPRE runs still alive after 50 generations.
    pub bpre_survival_50: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SpineResult {
    pub rows: Option<RowsResult>,
    pub cross_construction: Option<CrossResult>,
    pub y_max: Option<YMaxResult>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HittingResult {
    pub paths: u64,
    pub max_rel_err: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundPoint {
    pub a: f64,
    pub p: f64,
    pub n: u64,
    pub k: u64,
    pub empirical: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundResult {
    pub draws: u64,
    pub points: Vec<BoundPoint>,
    pub violations: usize,
    pub max_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuenchedPoint {
    pub depth: u32,
    pub target: f64,
    pub mean: f64,
    /// Standard error of the mean from the exact quenched variance.
    pub se: f64,
    /// Sample standard error; zero when every draw is the same.
    pub se_sample: f64,
    pub z: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuenchedResult {
    pub points: Vec<QuenchedPoint>,
    pub max_abs_z: f64,
    pub outside_3se: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MartingaleResult {
    pub depth: u32,
    pub replicas: u64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct OracleResult {
    pub hitting: Option<HittingResult>,
    pub sum_bound: Option<BoundResult>,
    pub quenched_means: Option<QuenchedResult>,
    pub martingale: Option<MartingaleResult>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PiResult {
    pub n: u64,
    pub i_max: usize,
    pub total: f64,
    pub total_se: f64,
    pub tail_mass: f64,
    pub residuals: Vec<Residual>,
    pub slope: f64,
    pub slope_se: f64,
    pub slope_window: (usize, usize),
    pub perpetuity: Fit,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AppendixCase {
    pub gamma: f64,
    pub report: Result<SupermartingaleReport, String>,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypergeometricResult {
    pub checks: Vec<Result<SeriesCheck, String>>,
    pub max_rel_err: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AppendixResult {
    pub supermartingale: Vec<AppendixCase>,
    pub hypergeometric: Option<HypergeometricResult>,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Results {
    ExcursionTails(ExcursionTailsResult),
    FavoriteTrajectory(TrajectoryResult),
    SpineChecks(SpineResult),
    OracleSuite(OracleResult),
    PiEstimate(Box<PiResult>),
    AppendixChecks(AppendixResult),
}

pub struct RunOutput {
    pub summary: RunSummary,
    pub results: Results,
    pub dir: Option<PathBuf>,
}

/// Run `cfg` on a pool of `cfg.workers` threads. Artifacts go to `cfg.out`
/// when set.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> anyhow::Result<RunOutput> {
    cfg.validate()?;
    let law = cfg.law()?;
    let dir = cfg.out.clone();
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    let start = Instant::now();
    let results = pool.install(|| dispatch(cfg, &law, dir.as_deref(), opts))?;
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone().unwrap_or_else(|| cfg.experiment.kind().to_string()),
        kind: cfg.experiment.kind().to_string(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        workers: cfg.workers,
        versions: Versions::current(),
        wall_time_s: start.elapsed().as_secs_f64(),
        config: serde_json::to_value(cfg)?,
        results: serde_json::to_value(&results)?,
    };
    if let Some(d) = &dir {
        write_summary(d, &summary)?;
    }
    Ok(RunOutput { summary, results, dir })
}

fn dispatch(cfg: &ExperimentConfig, law: &EnvironmentLaw, dir: Option<&Path>, opts: &RunOptions) -> anyhow::Result<Results> {
    let seed = cfg.seed;
    Ok(match &cfg.experiment {
        Experiment::ExcursionTails(e) => Results::ExcursionTails(excursion_tails(law, e, seed, cfg.budget_steps, dir)?),
        Experiment::FavoriteTrajectory(f) => Results::FavoriteTrajectory(trajectories(law, f, seed, dir)?),
        Experiment::SpineChecks(s) => Results::SpineChecks(spine_checks(law, s, seed, cfg.budget_steps, opts, dir)?),
        Experiment::OracleSuite(o) => Results::OracleSuite(oracle_suite(law, o, seed)?),
        Experiment::PiEstimate(p) => Results::PiEstimate(Box::new(pi_estimate(law, p, seed, dir)?)),
        Experiment::AppendixChecks(a) => Results::AppendixChecks(appendix_checks(law, a)?),
    })
}

fn engine(kind: EngineKind, budget: u64) -> Engine {
    match kind {
        EngineKind::Branching => Engine::Branching { vertex_budget: budget },
        EngineKind::Walk => Engine::Walk { step_budget: budget },
    }
}

/// Record of replica `i`; budget overruns keep their flagged partial record.
fn record(law: &EnvironmentLaw, k: u64, eng: Engine, seed: u64, i: u64) -> anyhow::Result<ExcursionRecord> {
    match simulate_returns(law, k, eng, &mut stream(seed, i)) {
        Ok(r) => Ok(r),
        Err(Error::StepBudgetExceeded { partial: Some(p), .. }) => Ok(*p),
        Err(e) => Err(e).with_context(|| format!("replica {i}")),
    }
}

fn excursion_row(i: u64, r: &ExcursionRecord) -> Vec<String> {
    vec![
        i.to_string(),
        r.k.to_string(),
        r.max_edge_lt.to_string(),
        r.max_site_lt.to_string(),
        r.z1_size.to_string(),
        r.z1_min_depth.to_string(),
        r.z1_max_depth.to_string(),
        r.range_depth.to_string(),
        r.duration.to_string(),
        r.max_edge_lt_below_z1.to_string(),
        u8::from(r.truncated).to_string(),
    ]
}

fn excursion_tails(
    law: &EnvironmentLaw,
    e: &ExcursionTails,
    seed: u64,
    budget_override: Option<u64>,
    dir: Option<&Path>,
) -> anyhow::Result<ExcursionTailsResult> {
    let budget = budget_override.unwrap_or_else(|| e.budget());
    let eng = engine(e.engine, budget);
    let s = derive_seed(seed, "excursions");
    let mut csv = MaybeCsv::new(dir, "excursions.csv", &format!("replica,{}", ExcursionRecord::CSV_HEADER))?;
    let mut recs: Vec<ExcursionRecord> = Vec::with_capacity(e.n as usize);
    let mut start = 0;
    while start < e.n {
        let end = (start + e.chunk).min(e.n);
        let chunk: Vec<ExcursionRecord> = (start..end)
            .into_par_iter()
            .map(|i| record(law, e.k, eng, s, i))
            .collect::<anyhow::Result<_>>()?;
        for (j, r) in chunk.iter().enumerate() {
            csv.row(&excursion_row(start + j as u64, r))?;
        }
        csv.checkpoint()?;
        recs.extend(chunk);
        start = end;
    }
    let col = |f: fn(&ExcursionRecord) -> u64| recs.iter().map(f).collect::<Vec<u64>>();
    let z = col(|r| r.z1_size);
    let fits = e.n > 0;
    let (z1_mean, z1_se) = if z.len() >= 2 { mean_with_se(&z) } else { (f64::NAN, f64::NAN) };
    let head = (z.len() / 10).max(1).min(z.len());
    let identity_in_law = match &e.identity_in_law {
        Some(id) => Some(identity_in_law(law, id, seed, budget)?),
        None => None,
    };
    Ok(ExcursionTailsResult {
        n: e.n,
        k: e.k,
        truncated: recs.iter().filter(|r| r.truncated).count() as u64,
        max_edge_lt: fits.then(|| fit_counts(&col(|r| r.max_edge_lt), &e.tail)),
        max_site_lt: fits.then(|| fit_counts(&col(|r| r.max_site_lt), &e.tail)),
        z1: fits.then(|| fit_counts(&z, &e.tail)),
        max_below_z1: fits.then(|| fit_counts(&col(|r| r.max_edge_lt_below_z1), &e.tail)),
        z1_mean,
        z1_se,
        z1_second_moment: if z.is_empty() { f64::NAN } else { second_moment(&z) },
        z1_second_moment_head: if z.is_empty() { f64::NAN } else { second_moment(&z[..head]) },
        f_eps: (z.len() >= 4).then(|| f_epsilon_slope(&z, &log_grid(e.eps.lo, e.eps.hi, e.eps.points), e.eps.batches)),
        identity_in_law,
    })
}

fn identity_in_law(law: &EnvironmentLaw, id: &IdentityInLaw, seed: u64, budget: u64) -> anyhow::Result<IdentityResult> {
    let full = BranchingOpts {
        vertex_budget: budget,
        scope: Scope::Full,
    };
    let line = BranchingOpts {
        vertex_budget: budget,
        scope: Scope::Line,
    };
    let (s_pool, s_direct, s_line, s_comp, s_ks) = (
        derive_seed(seed, "identity/pool"),
        derive_seed(seed, "identity/direct"),
        derive_seed(seed, "identity/line"),
        derive_seed(seed, "identity/compose"),
        derive_seed(seed, "identity/ks"),
    );
    let pool: Vec<ExcursionRecord> = (0..id.pool)
        .into_par_iter()
        .map(|i| annealed_excursion(law, 1, full, &mut stream(s_pool, i)))
        .collect();
    let truncated_pool = pool.iter().filter(|r| r.truncated).count() as u64;
    let pool: Vec<u64> = pool.iter().map(|r| r.max_edge_lt).collect();
    let mut statistics = Vec::new();
    let mut p_values = Vec::new();
    let mut truncated_direct = 0;
    for rep in 0..id.reps {
        let base = rep * id.n;
        let direct: Vec<ExcursionRecord> = (base..base + id.n)
            .into_par_iter()
            .map(|i| annealed_excursion(law, id.k, full, &mut stream(s_direct, i)))
            .collect();
        truncated_direct += direct.iter().filter(|r| r.truncated).count() as u64;
        let direct: Vec<u64> = direct.iter().map(|r| r.max_edge_lt).collect();
        let composed: Vec<u64> = (base..base + id.n)
            .into_par_iter()
            .map(|i| {
                let l = annealed_excursion(law, id.k, line, &mut stream(s_line, i)).line();
                let mut rng = stream(s_comp, i);
                (0..l.size).fold(l.max_edge_lt_below, |m, _| m.max(pool[rng.random_range(0..pool.len())]))
            })
            .collect();
        let r = ks_two_sample_counts(&direct, &composed, id.permutations, s_ks.wrapping_add(rep));
        statistics.push(r.statistic);
        p_values.push(r.p_value);
    }
    Ok(IdentityResult {
        k: id.k,
        n: id.n,
        pool: id.pool,
        statistics,
        rule: ks_rule(p_values),
        truncated_direct,
        truncated_pool,
    })
}

fn trajectories(law: &EnvironmentLaw, f: &FavoriteTrajectory, seed: u64, dir: Option<&Path>) -> anyhow::Result<TrajectoryResult> {
    let cps = f.checkpoint_times();
    let s = derive_seed(seed, "trajectory");
    let runs: Vec<(u64, Vec<TrajectoryPoint>, Vec<u32>)> = (0..f.replicas)
        .into_par_iter()
        .map(|r| {
            favorite_trajectory(law, f.n_max, &cps, f.opts, &mut stream(s, r))
                .map(|t| (r, t.points, t.minima_depths))
                .with_context(|| format!("replica {r}"))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut csv = MaybeCsv::new(
        dir,
        "trajectory.csv",
        "replica,n,n_favorites,min_depth,max_depth,in_minima,range_depth,parent_lt",
    )?;
    let mut replicas = Vec::new();
    let horizons: Vec<u64> = [100_000, 1_000_000, 10_000_000, f.n_max]
        .into_iter()
        .filter(|&h| h <= f.n_max)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut by_horizon = vec![Vec::new(); horizons.len()];
    for (r, pts, minima_depths) in &runs {
        for (h, v) in horizons.iter().zip(&mut by_horizon) {
            v.push(pts.iter().filter(|p| p.n <= *h).map(|p| p.min_depth).max().unwrap_or(0));
        }
        for p in pts {
            csv.row(&[
                r.to_string(),
                p.n.to_string(),
                p.n_favorites.to_string(),
                p.min_depth.to_string(),
                p.max_depth.to_string(),
                u8::from(p.in_minima).to_string(),
                p.range_depth.to_string(),
                p.parent_lt.to_string(),
            ])?;
        }
        let scored: Vec<&TrajectoryPoint> = pts.iter().filter(|p| p.n >= f.burn_in).collect();
        replicas.push(ReplicaScore {
            replica: *r,
            scored: scored.len(),
            in_minima: scored.iter().filter(|p| p.in_minima).count(),
            at_most_three: scored.iter().filter(|p| p.n_favorites <= 3).count(),
            both: scored.iter().filter(|p| p.in_minima && p.n_favorites <= 3).count(),
            max_min_depth: pts.iter().map(|p| p.min_depth).max().unwrap_or(0),
            min_max_depth: pts.iter().map(|p| p.max_depth).min().unwrap_or(0),
            minima_depths: minima_depths.clone(),
        });
    }
    csv.checkpoint()?;
    let total: usize = replicas.iter().map(|r| r.scored).sum();
    let frac = |g: fn(&ReplicaScore) -> usize| replicas.iter().map(g).sum::<usize>() as f64 / total.max(1) as f64;
    let nr = replicas.len().max(1) as f64;
    Ok(TrajectoryResult {
        checkpoints: cps,
        fraction_both: frac(|r| r.both),
        fraction_in_minima: frac(|r| r.in_minima),
        fraction_at_most_three: frac(|r| r.at_most_three),
        fraction_far: replicas.iter().filter(|r| r.max_min_depth > 10).count() as f64 / nr,
        fraction_near: replicas.iter().filter(|r| r.min_max_depth <= 5).count() as f64 / nr,
        growth: horizons
            .iter()
            .zip(by_horizon)
            .map(|(&n_max, mut v)| {
                v.sort_unstable();
                let m = v.len();
                Horizon {
                    n_max,
                    median_max_min_depth: if m == 0 { 0.0 } else { (v[(m - 1) / 2] + v[m / 2]) as f64 / 2.0 },
                    fraction_far: v.iter().filter(|&&d| d > 10).count() as f64 / nr,
                }
            })
            .collect(),
        replicas,
    })
}

fn spine_checks(
    law: &EnvironmentLaw,
    s: &SpineChecks,
    seed: u64,
    budget_override: Option<u64>,
    opts: &RunOptions,
    dir: Option<&Path>,
) -> anyhow::Result<SpineResult> {
    let kernel = YKernel::new(law, s.kernel);
    let mut out = SpineResult::default();
    if let Some(rc) = &s.rows {
        let t = Instant::now();
        if let Some(fault) = opts.fault {
            let row = kernel.row(fault.i)?;
            kernel.insert_row(fault.i, row.pmf.iter().map(|p| p * fault.scale).collect());
        }
        let row_sums: Vec<f64> = (1..=rc.i_max)
            .into_par_iter()
            .map(|i| kernel.row_sum(i))
            .collect::<favsite_core::Result<_>>()?;
        let (worst, defect) = row_sums
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u64 + 1, (s - 1.0).abs()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let mut csv = MaybeCsv::new(dir, "kernel_rows.csv", "i,row_sum")?;
        for (i, s) in row_sums.iter().enumerate() {
            csv.row(&[(i + 1).to_string(), f17(*s)])?;
        }
        csv.checkpoint()?;
        out.rows = Some(RowsResult {
            i_max: rc.i_max,
            max_abs_defect: defect,
            worst_row: worst,
            row_sums,
            elapsed_s: t.elapsed().as_secs_f64(),
        });
    }
    if let Some(c) = &s.cross_construction {
        let budget = budget_override.unwrap_or(c.budget);
        let (sk, sb, sks) = (
            derive_seed(seed, "cross/kernel"),
            derive_seed(seed, "cross/bpre"),
            derive_seed(seed, "cross/ks"),
        );
        let (mut pm, mut pl) = (Vec::new(), Vec::new());
        let mut truncated = 0;
        let mut max_state = 0;
        for rep in 0..c.reps {
            let a = y_excursions(law, Some(&kernel), YSampler::Kernel, c.n, budget, sk.wrapping_add(rep))?;
            let b = y_excursions(law, None, YSampler::Bpre, c.n, budget, sb.wrapping_add(rep))?;
            truncated += a.iter().chain(&b).filter(|x| x.truncated).count() as u64;
            max_state = a.iter().chain(&b).map(|x| x.max).fold(max_state, u64::max);
            let col = |xs: &[YExcursion], f: fn(&YExcursion) -> u64| xs.iter().map(f).collect::<Vec<_>>();
            pm.push(ks_two_sample_counts(&col(&a, |x| x.max), &col(&b, |x| x.max), c.permutations, sks.wrapping_add(2 * rep)).p_value);
            pl.push(ks_two_sample_counts(&col(&a, |x| x.len), &col(&b, |x| x.len), c.permutations, sks.wrapping_add(2 * rep + 1)).p_value);
        }
        out.cross_construction = Some(CrossResult {
            n: c.n,
            max_rule: ks_rule(pm),
            len_rule: ks_rule(pl),
            truncated,
            max_state,
        });
    }
    if let Some(y) = &s.y_max {
        let budget = budget_override.unwrap_or(y.budget);
        let sampler = match y.sampler {
            YSamplerKind::Kernel => YSampler::Kernel,
            YSamplerKind::Bpre => YSampler::Bpre,
        };
        let sy = derive_seed(seed, "y_max");
        let (excursion_max, truncated) = match excursion_max_tail(law, Some(&kernel), sampler, y.n, budget, sy, &y.tail) {
            Ok((t, xs)) => (Fit::Ok(t), xs.iter().filter(|x| x.truncated).count() as u64),
            Err(e) => (Fit::Error(e.to_string()), 0),
        };
        let (bpre_max, bpre_survival_50) = if y.bpre_max {
            match bpre_max_tail(law, y.n, budget, derive_seed(seed, "bpre_max"), &y.tail) {
                Ok((t, xs)) => (
                    Some(Fit::Ok(t)),
                    Some(xs.iter().filter(|x| x.len > 50).count() as f64 / xs.len() as f64),
                ),
                Err(e) => (Some(Fit::Error(e.to_string())), None),
            }
        } else {
            (None, None)
        };
        out.y_max = Some(YMaxResult {
            n: y.n,
            sampler: y.sampler,
            truncated,
            excursion_max,
            bpre_max,
            bpre_survival_50,
        });
    }
    Ok(out)
}

fn random_path<R: Rng + ?Sized>(rng: &mut R, max_depth: usize) -> PathBiases {
    let d = rng.random_range(1..=max_depth);
    let mut g = || {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        (1.5 * z).exp()
    };
    PathBiases {
        a: (0..d).map(|_| g()).collect(),
        tip_child_mass: g(),
    }
}

fn rel_err(x: f64, y: f64) -> f64 {
    if x == y {
        0.0
    } else {
        (x - y).abs() / x.abs().max(y.abs())
    }
}

fn oracle_suite(law: &EnvironmentLaw, o: &OracleSuite, seed: u64) -> anyhow::Result<OracleResult> {
    let mut out = OracleResult::default();
    if let Some(h) = &o.hitting {
        let t = Instant::now();
        let s = derive_seed(seed, "hitting");
        let errs: Vec<f64> = (0..h.paths)
            .into_par_iter()
            .map(|i| -> anyhow::Result<f64> {
                let b = random_path(&mut stream(s, i), h.max_depth);
                let (a1, e1) = hitting_params_escape(&b.geometry())?;
                let (a2, e2) = hitting_linear_solve_escape(&b)?;
                Ok(rel_err(a1, a2).max(rel_err(e1, e2)))
            })
            .collect::<anyhow::Result<_>>()?;
        out.hitting = Some(HittingResult {
            paths: h.paths,
            max_rel_err: errs.iter().copied().fold(0.0, f64::max),
            elapsed_s: t.elapsed().as_secs_f64(),
        });
    }
    if let Some(l) = &o.sum_bound {
        let s = derive_seed(seed, "sum_bound");
        let points: Vec<BoundPoint> = (0..l.points)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(s, i);
                let n = rng.random_range(2..=l.n_max);
                let k = rng.random_range(2..=400u64);
                let p = rng.random_range(0.05..0.95);
                let a_max = (0.999 * (1.0 - p) * k as f64 / (8.0 * n as f64)).min(1.0);
                let a = rng.random_range(0.0..1.0) * a_max;
                let bound = sum_iid_tail_bound(a, p, n, k).expect("parameters satisfy the precondition");
                let hits = (0..l.draws).filter(|_| local_time_at_tn_sampler(a, p, n, &mut rng) >= k).count();
                BoundPoint {
                    a,
                    p,
                    n,
                    k,
                    empirical: hits as f64 / l.draws as f64,
                    bound,
                }
            })
            .collect();
        out.sum_bound = Some(BoundResult {
            draws: l.draws,
            violations: points.iter().filter(|p| p.empirical > p.bound).count(),
            max_ratio: points.iter().map(|p| p.empirical / p.bound).fold(0.0, f64::max),
            points,
        });
    }
    if let Some(q) = &o.quenched_means {
        let s = derive_seed(seed, "quenched_means");
        let points: Vec<QuenchedPoint> = (0..q.vertices)
            .into_par_iter()
            .map(|v| -> anyhow::Result<QuenchedPoint> {
                let mut rng = stream(s, v);
                let mut tree = MarkedTree::new(law, rng.random());
                let target_depth = rng.random_range(1..=q.max_depth);
                let mut x = ROOT;
                while tree.depth(x) < target_depth {
                    let kids = tree.materialize_children(x);
                    if kids.is_empty() {
                        break;
                    }
                    x = rng.random_range(kids);
                }
                let b = PathBiases::from_tree(&mut tree, x);
                let target = (-tree.u(x)).exp();
                let (mut s1, mut s2) = (0.0, 0.0);
                for _ in 0..q.excursions {
                    let l = path_site_lt_sampler(&b, &mut rng) as f64;
                    s1 += l;
                    s2 += l * l;
                }
                let n = q.excursions as f64;
                let mean = s1 / n;
                // L is 0 with probability 1 - a, else geometric on {1, 2, ...} with success e
                let (a, e) = hitting_params_escape(&b.geometry()).with_context(|| format!("vertex {v}"))?;
                let var = a * (2.0 - e) / (e * e) - (a / e).powi(2);
                let se = (var.max(0.0) / n).sqrt();
                Ok(QuenchedPoint {
                    depth: tree.depth(x),
                    target,
                    mean,
                    se,
                    se_sample: ((s2 / n - mean * mean).max(0.0) / (n - 1.0)).sqrt(),
                    z: (mean - target) / se,
                })
            })
            .collect::<anyhow::Result<_>>()?;
        out.quenched_means = Some(QuenchedResult {
            max_abs_z: points.iter().map(|p| p.z.abs()).fold(0.0, f64::max),
            outside_3se: points.iter().filter(|p| !(p.z.abs() <= 3.0)).count(),
            points,
        });
    }
    if let Some(m) = &o.martingale {
        let s = derive_seed(seed, "martingale");
        let w: Vec<f64> = (0..m.replicas)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(s, i);
                additive_martingale_w(&mut MarkedTree::new(law, rng.random()), m.depth)
            })
            .collect();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        out.martingale = Some(MartingaleResult {
            depth: m.depth,
            replicas: m.replicas,
            mean,
            se: (var / n).sqrt(),
        });
    }
    Ok(out)
}

fn pi_estimate(law: &EnvironmentLaw, p: &PiEstimate, seed: u64, dir: Option<&Path>) -> anyhow::Result<PiResult> {
    let r = perpetuities(law, p.n as usize, p.opts.rule(), derive_seed(seed, "perpetuities"))?;
    let est = invariant_pi_from(&r, &p.opts);
    let kernel = YKernel::new(law, p.kernel);
    let residuals = stationarity_residuals(&est, &kernel, p.j_max)?;
    let (slope, slope_se) = pi_tail_slope(&est, p.slope_window.0, p.slope_window.1);
    let perpetuity = Fit::of(fit_tail_exponent(&Ccdf::new(r.iter().map(|x| x + 1.0).collect()), &p.tail));
    let mut csv = MaybeCsv::new(dir, "pi.csv", "i,pi,se")?;
    for (i, (x, s)) in est.pi.iter().zip(&est.se).enumerate() {
        csv.row(&[(i + 1).to_string(), f17(*x), f17(*s)])?;
    }
    csv.checkpoint()?;
    let mut csv = MaybeCsv::new(dir, "residuals.csv", "j,residual,se,trunc_bound")?;
    for r in &residuals {
        csv.row(&[r.j.to_string(), f17(r.residual), f17(r.se), f17(r.trunc_bound)])?;
    }
    csv.checkpoint()?;
    Ok(PiResult {
        n: p.n,
        i_max: p.opts.i_max,
        total: est.total(),
        total_se: est.total_se(),
        tail_mass: est.tail_mass,
        residuals,
        slope,
        slope_se,
        slope_window: p.slope_window,
        perpetuity,
    })
}

fn appendix_checks(law: &EnvironmentLaw, a: &AppendixChecks) -> anyhow::Result<AppendixResult> {
    let t0 = Instant::now();
    let kernel = YKernel::new(law, a.kernel);
    let supermartingale = a
        .supermartingale
        .iter()
        .map(|c| {
            let t = Instant::now();
            AppendixCase {
                gamma: c.gamma,
                report: supermartingale_check(&kernel, c.gamma, c.i_max).map_err(|e| e.to_string()),
                elapsed_s: t.elapsed().as_secs_f64(),
            }
        })
        .collect();
    let hypergeometric = a.hypergeometric.as_ref().map(|h| {
        let mut rng = stream(0x4879, 0);
        let mut checks = Vec::new();
        for i in 0..=h.i_max {
            for _ in 0..h.cases {
                let gamma = rng.random_range(0.05..2.0);
                let x = rng.random_range(0.01..0.8);
                checks.push(hypergeometric_identity_check(i, gamma, x).map_err(|e| e.to_string()));
            }
        }
        let max_rel_err = checks
            .iter()
            .filter_map(|c| c.as_ref().ok())
            .map(|c| c.rel_err)
            .fold(0.0, f64::max);
        let failures = checks
            .iter()
            .filter(|c| c.as_ref().map_or(true, |c| !(c.rel_err < 1e-8)))
            .count();
        HypergeometricResult {
            checks,
            max_rel_err,
            failures,
        }
    });
    Ok(AppendixResult {
        supermartingale,
        hypergeometric,
        elapsed_s: t0.elapsed().as_secs_f64(),
    })
}
