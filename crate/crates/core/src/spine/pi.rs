//! Invariant law of the spine chain from perpetuity samples.
//!
//! With `R = sum_{n >= 1} e^{-S_n}` and `q = R / (1 + R)`,
//! `pi_i = E[i q^(i-1) (1 - q)^2]`: a mixture of shifted geometric laws.
//! Summing the mixture weights beyond `i_max` in closed form,
//! `sum_{i > I} i q^(i-1) (1-q)^2 = q^I (1 + I (1 - q))`, keeps the
//! estimate exactly normalized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::YKernel;
use crate::env::{sample_perpetuity, EnvironmentLaw, PerpetuityRule};
use crate::error::Result;
use crate::rng::stream;
use crate::stats::loglog_slope;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PiOpts {
    pub i_max: usize,
    /// Batches for the batch-means standard errors of derived quantities.
    pub batches: usize,
    pub trunc_tol: f64,
    pub window: f64,
    pub max_steps: usize,
}

impl Default for PiOpts {
    fn default() -> Self {
        let r = PerpetuityRule::default();
        PiOpts {
            i_max: 2000,
            batches: 200,
            trunc_tol: r.trunc_tol,
            window: r.window,
            max_steps: r.max_steps,
        }
    }
}

impl PiOpts {
    pub fn rule(&self) -> PerpetuityRule {
        PerpetuityRule {
            trunc_tol: self.trunc_tol,
            window: self.window,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationaryEstimate {
    /// `pi[i - 1]` estimates `pi_i` for `i <= i_max`.
    pub pi: Vec<f64>,
    pub se: Vec<f64>,
    /// Estimated `sum_{i > i_max} pi_i`.
    pub tail_mass: f64,
    pub tail_se: f64,
    pub n_samples: usize,
    pub trunc_tol: f64,
    /// Per-batch estimates of `pi`, used for standard errors of functionals.
    #[serde(skip)]
    pub batch_pi: Vec<Vec<f64>>,
    #[serde(skip)]
    pub batch_tail: Vec<f64>,
}

impl StationaryEstimate {
    /// `sum_{i <= i_max} pi_i + tail_mass`; equal to one up to rounding.
    pub fn total(&self) -> f64 {
        self.pi.iter().sum::<f64>() + self.tail_mass
    }

    /// Standard error of the total. The estimator is normalized sample by
    /// sample, so only rounding is left.
    pub fn total_se(&self) -> f64 {
        let b = self.batch_pi.len() as f64;
        let totals: Vec<f64> = self
            .batch_pi
            .iter()
            .zip(&self.batch_tail)
            .map(|(p, t)| p.iter().sum::<f64>() + t)
            .collect();
        let m = totals.iter().sum::<f64>() / b;
        (totals.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (b - 1.0) / b).sqrt()
    }
}

/// `N` perpetuities `R = sum_{n >= 1} e^{-S_n}`; replica `i` uses stream `(seed, i)`.
pub fn perpetuities(law: &EnvironmentLaw, n: usize, rule: PerpetuityRule, seed: u64) -> Result<Vec<f64>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| sample_perpetuity(law, rule, &mut stream(seed, i)).map(|r| r - 1.0))
        .collect()
}

/// Add `i q^(i-1) (1-q)^2` for `i <= acc.len()` into `acc`, and the tail
/// beyond into the return value.
fn accumulate(r: f64, acc: &mut [f64], acc2: Option<&mut [f64]>) -> f64 {
    let i_max = acc.len();
    let q = r / (1.0 + r);
    let omq = 1.0 / (1.0 + r);
    let mut g = omq * omq;
    let peak = if q > 0.0 { -1.0 / q.ln() } else { 0.0 };
    let mut last = i_max;
    let mut acc2 = acc2;
    for i in 1..=i_max {
        acc[i - 1] += g;
        if let Some(a2) = acc2.as_deref_mut() {
            a2[i - 1] += g * g;
        }
        if (i as f64) > peak && g < 1e-300 {
            last = i;
            break;
        }
        g *= q * (i + 1) as f64 / i as f64;
    }
    if last < i_max {
        return 0.0;
    }
    let im = i_max as f64;
    (im * q.ln()).exp() * (1.0 + im * omq)
}

/// Estimate `pi_1, ..., pi_{i_max}` from perpetuity samples `R`.
pub fn invariant_pi_from(samples: &[f64], opts: &PiOpts) -> StationaryEstimate {
    let n = samples.len();
    let i_max = opts.i_max;
    let b = opts.batches.clamp(2, n.max(2));
    let chunk = n.div_ceil(b);
    let parts: Vec<(Vec<f64>, Vec<f64>, f64, f64, usize)> = samples
        .par_chunks(chunk)
        .map(|c| {
            let mut s1 = vec![0.0; i_max];
            let mut s2 = vec![0.0; i_max];
            let (mut t1, mut t2) = (0.0, 0.0);
            for &r in c {
                let t = accumulate(r, &mut s1, Some(&mut s2));
                t1 += t;
                t2 += t * t;
            }
            (s1, s2, t1, t2, c.len())
        })
        .collect();
    let mut s1 = vec![0.0; i_max];
    let mut s2 = vec![0.0; i_max];
    let (mut t1, mut t2) = (0.0, 0.0);
    let mut batch_pi = Vec::with_capacity(parts.len());
    let mut batch_tail = Vec::with_capacity(parts.len());
    for (a1, a2, b1, b2, len) in &parts {
        for i in 0..i_max {
            s1[i] += a1[i];
            s2[i] += a2[i];
        }
        t1 += b1;
        t2 += b2;
        batch_pi.push(a1.iter().map(|x| x / *len as f64).collect());
        batch_tail.push(b1 / *len as f64);
    }
    let nf = n as f64;
    let se_of = |m1: f64, m2: f64| ((m2 / nf - (m1 / nf).powi(2)).max(0.0) / (nf - 1.0)).sqrt();
    StationaryEstimate {
        pi: s1.iter().map(|x| x / nf).collect(),
        se: s1.iter().zip(&s2).map(|(&a, &b)| se_of(a, b)).collect(),
        tail_mass: t1 / nf,
        tail_se: se_of(t1, t2),
        n_samples: n,
        trunc_tol: opts.trunc_tol,
        batch_pi,
        batch_tail,
    }
}

pub fn invariant_pi(law: &EnvironmentLaw, n: usize, opts: &PiOpts, seed: u64) -> Result<StationaryEstimate> {
    let r = perpetuities(law, n, opts.rule(), seed)?;
    Ok(invariant_pi_from(&r, opts))
}

/// Slope of `log pi_i` on `log i` over `lo <= i <= hi`, with a
/// batch-means standard error.
pub fn pi_tail_slope(est: &StationaryEstimate, lo: usize, hi: usize) -> (f64, f64) {
    assert!(1 <= lo && lo < hi && hi <= est.pi.len());
    let fit = |pi: &[f64]| loglog_slope(&(lo..=hi).map(|i| (i as f64, pi[i - 1])).collect::<Vec<_>>());
    let slope = fit(&est.pi);
    let per: Vec<f64> = est.batch_pi.iter().map(|p| fit(p)).collect();
    let b = per.len() as f64;
    let m = per.iter().sum::<f64>() / b;
    let sd = (per.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (b - 1.0)).sqrt();
    (slope, sd / b.sqrt())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Residual {
    pub j: u64,
    /// `sum_{i <= i_max} pi_i P(i, j) - pi_j`.
    pub residual: f64,
    /// Batch-means standard error; accounts for the shared samples.
    pub se: f64,
    /// Bound on the neglected `sum_{i > i_max} pi_i P(i, j)`, using that
    /// `P(i, j)` decreases in `i` once `i` is far beyond `j`.
    pub trunc_bound: f64,
}

/// Stationarity defects `(pi P - pi)_j` for `j <= j_max`.
pub fn stationarity_residuals(est: &StationaryEstimate, k: &YKernel, j_max: u64) -> Result<Vec<Residual>> {
    let i_max = est.pi.len() as u64;
    // column j of P restricted to i <= i_max
    let cols: Vec<Vec<f64>> = (1..=j_max)
        .into_par_iter()
        .map(|j| (1..=i_max).map(|i| k.kernel_p(i, j)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let b = est.batch_pi.len() as f64;
    Ok(cols
        .iter()
        .enumerate()
        .map(|(jj, col)| {
            let defect = |pi: &[f64]| pi.iter().zip(col).map(|(p, q)| p * q).sum::<f64>() - pi[jj];
            let per: Vec<f64> = est.batch_pi.iter().map(|p| defect(p)).collect();
            let m = per.iter().sum::<f64>() / b;
            let sd = (per.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1.0)).sqrt();
            Residual {
                j: jj as u64 + 1,
                residual: defect(&est.pi),
                se: sd / b.sqrt(),
                trunc_bound: est.tail_mass * col[col.len() - 1],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spine::kernel::KernelOpts;

    #[test]
    fn geometric_mixture_is_normalized() {
        for r in [0.0, 0.3, 5.0, 250.0, 1e4] {
            let mut acc = vec![0.0; 300];
            let tail = accumulate(r, &mut acc, None);
            let total = acc.iter().sum::<f64>() + tail;
            assert!((total - 1.0).abs() < 1e-12, "R = {r}: {total}");
        }
    }

    #[test]
    fn deterministic_perpetuity_gives_a_geometric_law() {
        // R = 1 gives q = 1/2: pi_i = i 2^-(i+1)
        let est = invariant_pi_from(&[1.0; 10], &PiOpts {
            i_max: 40,
            batches: 2,
            ..PiOpts::default()
        });
        for (i, p) in est.pi.iter().enumerate() {
            let i = i as f64 + 1.0;
            assert!((p - i * 0.5f64.powf(i + 1.0)).abs() < 1e-15);
        }
        assert!((est.total() - 1.0).abs() < 1e-12);
        assert!(est.se.iter().all(|&s| s < 1e-9));
    }

    #[test]
    fn small_sample_is_stationary() {
        let law = EnvironmentLaw::log_normal_binary(3.0).unwrap();
        let opts = PiOpts {
            i_max: 400,
            batches: 50,
            ..PiOpts::default()
        };
        let est = invariant_pi(&law, 50_000, &opts, 1).unwrap();
        assert!((est.total() - 1.0).abs() < 1e-9);
        let k = YKernel::new(&law, KernelOpts::default());
        for r in stationarity_residuals(&est, &k, 8).unwrap() {
            assert!(r.residual.abs() <= 4.0 * r.se, "{r:?}");
            assert!(r.trunc_bound < r.se);
        }
    }
}
