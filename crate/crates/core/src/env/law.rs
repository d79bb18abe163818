//! Laws of the environment vector `(A_1, ..., A_nu)`.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating `E[sum A] = 1` for exact presets.
const MASS_TOL: f64 = 1e-9;

/// One atom of a finite-support custom law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub prob: f64,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum Preset {
    /// `nu = 2`, `A = exp(-G)` with `G ~ Normal(ln 2 + s2/2, s2)` and `s2 = 2 ln 2 / kappa`.
    LogNormalBinary { kappa: f64 },
    /// `nu = 2`, `A ~ Uniform(0, 1)` i.i.d.; kappa is infinite.
    UniformBinary,
    /// `nu = d`, each `A` independently `a` with probability `q`, else `b`.
    TwoPointRegular { d: u32, a: f64, b: f64, q: f64 },
    /// Finite mixture of weight vectors; `nu` may be random, including zero.
    Custom { outcomes: Vec<Outcome> },
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::LogNormalBinary { .. } => "log_normal_binary",
            Preset::UniformBinary => "uniform_binary",
            Preset::TwoPointRegular { .. } => "two_point_regular",
            Preset::Custom { .. } => "custom",
        }
    }
}

/// Law of the increment `S_1` of the many-to-one walk.
#[derive(Clone, Debug, PartialEq)]
pub enum S1Law {
    Gaussian { mean: f64, sd: f64 },
    Exponential { rate: f64 },
    Discrete { atoms: Vec<(f64, f64)> },
    /// Only reachable through rejection sampling from the custom law.
    Rejection,
}

#[derive(Clone, Debug)]
pub struct EnvironmentLaw {
    preset: Preset,
    kappa: f64,
    s1: S1Law,
    lognormal: Option<(f64, f64)>,
    max_mass: f64,
}

impl EnvironmentLaw {
    pub fn new(preset: Preset) -> Result<Self> {
        let mut lognormal = None;
        let mut max_mass = 0.0;
        let s1 = match &preset {
            Preset::LogNormalBinary { kappa } => {
                if !(kappa.is_finite() && *kappa > 1.0) {
                    return Err(Error::InvalidLaw(format!(
                        "log_normal_binary needs 1 < kappa < inf, got {kappa}"
                    )));
                }
                let s2 = 2.0 * LN_2 / kappa;
                lognormal = Some((LN_2 + s2 / 2.0, s2.sqrt()));
                S1Law::Gaussian {
                    mean: LN_2 - s2 / 2.0,
                    sd: s2.sqrt(),
                }
            }
            Preset::UniformBinary => {
                max_mass = 2.0;
                S1Law::Exponential { rate: 2.0 }
            }
            Preset::TwoPointRegular { d, a, b, q } => {
                if *d < 2 || !(*a > 0.0 && *b > 0.0) || !(0.0..=1.0).contains(q) {
                    return Err(Error::InvalidLaw(
                        "two_point_regular needs d >= 2, a, b > 0 and q in [0, 1]".into(),
                    ));
                }
                let d = f64::from(*d);
                max_mass = d * a.max(*b);
                S1Law::Discrete {
                    atoms: vec![(-a.ln(), d * q * a), (-b.ln(), d * (1.0 - q) * b)],
                }
            }
            Preset::Custom { outcomes } => {
                if outcomes.is_empty() {
                    return Err(Error::InvalidLaw("custom law has no outcomes".into()));
                }
                let total: f64 = outcomes.iter().map(|o| o.prob).sum();
                if (total - 1.0).abs() > MASS_TOL || outcomes.iter().any(|o| o.prob < 0.0) {
                    return Err(Error::InvalidLaw(format!(
                        "custom outcome probabilities must be nonnegative and sum to 1, got {total}"
                    )));
                }
                if outcomes.iter().flat_map(|o| &o.weights).any(|w| !(*w > 0.0 && w.is_finite())) {
                    return Err(Error::InvalidLaw("custom weights must be positive and finite".into()));
                }
                max_mass = outcomes
                    .iter()
                    .map(|o| o.weights.iter().sum::<f64>())
                    .fold(0.0, f64::max);
                S1Law::Rejection
            }
        };
        let mut law = EnvironmentLaw {
            preset,
            kappa: f64::NAN,
            s1,
            lognormal,
            max_mass,
        };
        let mass = law.moment(1.0);
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidLaw(format!("E[sum A] = {mass}, expected 1")));
        }
        if law.mean_a_log_a() >= 0.0 {
            return Err(Error::InvalidLaw("E[sum A log A] must be negative".into()));
        }
        law.kappa = match &law.preset {
            Preset::LogNormalBinary { kappa } => *kappa,
            Preset::UniformBinary => f64::INFINITY,
            _ => solve_kappa(|t| law.moment(t), 1e-12, DEFAULT_T_MAX)?,
        };
        Ok(law)
    }

    pub fn log_normal_binary(kappa: f64) -> Result<Self> {
        Self::new(Preset::LogNormalBinary { kappa })
    }

    pub fn preset(&self) -> &Preset {
        &self.preset
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn s1_law(&self) -> &S1Law {
        &self.s1
    }

    /// Can a vertex have no children?
    pub fn extinction_possible(&self) -> bool {
        match &self.preset {
            Preset::Custom { outcomes } => outcomes.iter().any(|o| o.prob > 0.0 && o.weights.is_empty()),
            _ => false,
        }
    }

    /// `E[sum_i A_i^t]`, exact for every preset.
    pub fn moment(&self, t: f64) -> f64 {
        match &self.preset {
            Preset::LogNormalBinary { .. } => {
                let (mu, sd) = self.lognormal.expect("log-normal parameters");
                2.0 * (-t * mu + 0.5 * t * t * sd * sd).exp()
            }
            Preset::UniformBinary => 2.0 / (t + 1.0),
            Preset::TwoPointRegular { d, a, b, q } => {
                f64::from(*d) * (q * a.powf(t) + (1.0 - q) * b.powf(t))
            }
            Preset::Custom { outcomes } => outcomes
                .iter()
                .map(|o| o.prob * o.weights.iter().map(|w| w.powf(t)).sum::<f64>())
                .sum(),
        }
    }

    /// `E[sum_i A_i log A_i]`.
    pub fn mean_a_log_a(&self) -> f64 {
        match &self.preset {
            Preset::LogNormalBinary { .. } => {
                let (mu, sd) = self.lognormal.expect("log-normal parameters");
                // d/dt of 2 exp(-t mu + t^2 s2 / 2) at t = 1
                2.0 * (-mu + sd * sd) * (-mu + 0.5 * sd * sd).exp()
            }
            Preset::UniformBinary => -0.5,
            Preset::TwoPointRegular { d, a, b, q } => {
                f64::from(*d) * (q * a * a.ln() + (1.0 - q) * b * b.ln())
            }
            Preset::Custom { outcomes } => outcomes
                .iter()
                .map(|o| o.prob * o.weights.iter().map(|w| w * w.ln()).sum::<f64>())
                .sum(),
        }
    }

    /// Exact mean of `S_1`, equal to `-E[sum A log A]`.
    pub fn s1_mean(&self) -> f64 {
        -self.mean_a_log_a()
    }

    /// Draw the weights `(A_1, ..., A_nu)` of one vertex into `out`.
    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        match &self.preset {
            Preset::LogNormalBinary { .. } => {
                let (mu, sd) = self.lognormal.expect("log-normal parameters");
                for _ in 0..2 {
                    let g: f64 = rng.sample(StandardNormal);
                    out.push((-(mu + sd * g)).exp());
                }
            }
            Preset::UniformBinary => {
                for _ in 0..2 {
                    // (0, 1]: A must be positive
                    out.push(1.0 - rng.random::<f64>());
                }
            }
            Preset::TwoPointRegular { d, a, b, q } => {
                for _ in 0..*d {
                    out.push(if rng.random::<f64>() < *q { *a } else { *b });
                }
            }
            Preset::Custom { outcomes } => {
                let mut u = rng.random::<f64>();
                let mut chosen = &outcomes[outcomes.len() - 1];
                for o in outcomes {
                    if u < o.prob {
                        chosen = o;
                        break;
                    }
                    u -= o.prob;
                }
                out.extend_from_slice(&chosen.weights);
            }
        }
    }

    /// One draw of the many-to-one increment `S_1`.
    pub fn sample_s1<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.s1 {
            S1Law::Gaussian { mean, sd } => {
                let g: f64 = rng.sample(StandardNormal);
                mean + sd * g
            }
            S1Law::Exponential { rate } => Exp::new(*rate).expect("positive rate").sample(rng),
            S1Law::Discrete { atoms } => {
                let mut u = rng.random::<f64>();
                for (value, p) in atoms {
                    if u < *p {
                        return *value;
                    }
                    u -= p;
                }
                atoms[atoms.len() - 1].0
            }
            S1Law::Rejection => {
                let mut w = Vec::new();
                loop {
                    self.sample_weights(rng, &mut w);
                    let mass: f64 = w.iter().sum();
                    if mass <= 0.0 || rng.random::<f64>() * self.max_mass >= mass {
                        continue;
                    }
                    let mut u = rng.random::<f64>() * mass;
                    for &a in &w {
                        if u < a {
                            return -a.ln();
                        }
                        u -= a;
                    }
                    return -w[w.len() - 1].ln();
                }
            }
        }
    }

    /// Gaussian parameters of `S_1` when the preset has them.
    pub fn s1_gaussian(&self) -> Option<(f64, f64)> {
        match self.s1 {
            S1Law::Gaussian { mean, sd } => Some((mean, sd)),
            _ => None,
        }
    }

    /// `E[exp(-t S_1)] = E[sum A^(1+t)]`.
    pub fn s1_laplace(&self, t: f64) -> f64 {
        self.moment(1.0 + t)
    }
}

pub const DEFAULT_T_MAX: f64 = 64.0;

/// Root of `m(t) = 1` on `t > 1`, or infinity if `m` stays below one.
///
/// `m` is the map `t -> E[sum A^t]`; it is convex with `m(1) = 1`, so the
/// root above one exists iff `m` eventually climbs back over one.
pub fn solve_kappa<F: Fn(f64) -> f64>(m: F, tol: f64, t_max: f64) -> Result<f64> {
    const H: f64 = 1e-6;
    let slope = (m(1.0 + H) - m(1.0 - H)) / (2.0 * H);
    if slope >= 0.0 {
        return Err(Error::NoRootAbove1);
    }
    // geometric grid above 1
    let mut lo = 1.0 + 1e-3;
    if m(lo) >= 1.0 {
        return Err(Error::NoRootAbove1);
    }
    let mut hi = lo;
    loop {
        let next = 1.0 + (hi - 1.0) * 1.25 + 1e-3;
        if next > t_max {
            return Ok(f64::INFINITY);
        }
        if m(next) >= 1.0 {
            hi = next;
            break;
        }
        lo = next;
        hi = next;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = m(mid) - 1.0;
        if v.abs() < tol || hi - lo < 1e-14 {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Monte Carlo variant of [`solve_kappa`]: estimates `m(t)` from `n` fresh
/// vertices with common random numbers across `t`.
pub fn solve_kappa_mc<R: Rng + ?Sized>(
    law: &EnvironmentLaw,
    n: usize,
    tol: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut all = Vec::new();
    let mut w = Vec::new();
    let mut counts = Vec::with_capacity(n);
    for _ in 0..n {
        law.sample_weights(rng, &mut w);
        counts.push(w.len());
        all.extend(w.iter().map(|a| a.ln()));
    }
    let m = |t: f64| all.iter().map(|la| (t * la).exp()).sum::<f64>() / n as f64;
    // standard error of m(1) from per-vertex masses
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut off = 0;
    for &c in &counts {
        let s: f64 = all[off..off + c].iter().map(|la| la.exp()).sum();
        off += c;
        sum += s;
        sum2 += s * s;
    }
    let mean = sum / n as f64;
    let se = ((sum2 / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
    if (mean - 1.0).abs() > 4.0 * se + 1e-12 {
        return Err(Error::NonMonotoneEstimate(format!(
            "estimated E[sum A] = {mean} is not within noise of 1 (se {se})"
        )));
    }
    // the estimated map need not pass through 1 at t = 1; re-anchor on its minimum
    let min_t = golden_min(&m, 1.0, DEFAULT_T_MAX);
    if m(min_t) >= 1.0 {
        return Err(Error::NonMonotoneEstimate(
            "estimated map never drops below 1".into(),
        ));
    }
    if m(DEFAULT_T_MAX) < 1.0 {
        return Ok(f64::INFINITY);
    }
    let (mut lo, mut hi) = (min_t, DEFAULT_T_MAX);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = m(mid) - 1.0;
        if v.abs() < tol || hi - lo < 1e-12 {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn golden_min<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while (b - a).abs() > 1e-9 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

/// Stopping rule for the perpetuity `sum_{j>=0} exp(-S_j)`.
#[derive(Clone, Copy, Debug)]
pub struct PerpetuityRule {
    /// Stop once `exp(-S_j)` falls below this.
    pub trunc_tol: f64,
    /// ... and `S_j` is within this distance of its running maximum.
    pub window: f64,
    pub max_steps: usize,
}

impl Default for PerpetuityRule {
    fn default() -> Self {
        PerpetuityRule {
            trunc_tol: 1e-20,
            window: 5.0,
            max_steps: 1_000_000,
        }
    }
}

/// Truncated perpetuity driven by an arbitrary increment source.
///
/// The neglected remainder equals `exp(-S_J) R'` with `R'` an independent
/// copy of the full perpetuity, so `P(remainder > d) = P(R' > d / exp(-S_J))`
/// which is of order `(trunc_tol / d)^(kappa - 1)` under a Kesten tail.
pub fn perpetuity_from<F: FnMut() -> f64>(mut increment: F, rule: PerpetuityRule) -> Result<f64> {
    let log_tol = rule.trunc_tol.ln();
    let mut s = 0.0_f64;
    let mut running_max = 0.0_f64;
    let mut total = 1.0;
    for _ in 0..rule.max_steps {
        s += increment();
        running_max = running_max.max(s);
        total += (-s).exp();
        if -s < log_tol && s >= running_max - rule.window {
            return Ok(total);
        }
    }
    Err(Error::MaxStepsExceeded {
        cap: rule.max_steps,
    })
}

/// `sum_{j=0}^J exp(-S_j)` for the many-to-one walk of `law`.
pub fn sample_perpetuity<R: Rng + ?Sized>(
    law: &EnvironmentLaw,
    rule: PerpetuityRule,
    rng: &mut R,
) -> Result<f64> {
    perpetuity_from(|| law.sample_s1(rng), rule)
}

/// Gaussian increments without going through the generic path.
pub fn gaussian_increments(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("finite parameters")
}
