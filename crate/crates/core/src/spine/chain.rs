//! Two independent samplers of the spine chain and its relatives.
//!
//! The kernel sampler inverts cached rows of `P`. The branching sampler
//! never touches `P`: it draws the environment increments `S_n - S_{n-1}`
//! and runs a branching process with two immigrants per generation,
//! `Y_n - 1 = sum_{k <= Y_{n-1} + 1} xi_k` with geometric `xi` of parameter
//! `a_n = e^{-dS} / (1 + e^{-dS})`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::YKernel;
use crate::env::EnvironmentLaw;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::stats::{fit_tail_exponent, Ccdf, TailOpts, TailReport};
use crate::walk::branching::neg_binomial;

/// One BPRE generation: `Y_n` given `Y_{n-1} = y`.
pub fn bpre_step<R: Rng + ?Sized>(law: &EnvironmentLaw, y: u64, rng: &mut R) -> u64 {
    let m = (-law.sample_s1(rng)).exp();
    // y - 1 + 2 = y + 1 geometric families
    neg_binomial(y + 1, m, rng).saturating_add(1)
}

fn excursion<F: FnMut(u64) -> Result<u64>>(start: u64, budget: u64, mut step: F, mut out: impl FnMut(u64)) -> Result<()> {
    assert!(start >= 1);
    out(start);
    let mut y = start;
    for _ in 0..budget {
        y = step(y)?;
        out(y);
        if y == 1 {
            return Ok(());
        }
    }
    Err(Error::ExcursionBudgetExceeded { budget })
}

/// Path `Y_0 = start, ..., Y_{sigma} = 1` with `sigma` the first time
/// `n >= 1` at which `Y_n = 1`.
pub fn simulate_y_kernel<R: Rng + ?Sized>(k: &YKernel, start: u64, budget: u64, rng: &mut R) -> Result<Vec<u64>> {
    let mut path = Vec::new();
    excursion(start, budget, |y| k.sample_next(y, rng), |y| path.push(y))?;
    Ok(path)
}

/// Same path law as [`simulate_y_kernel`], built from the BPRE.
pub fn simulate_y_bpre<R: Rng + ?Sized>(law: &EnvironmentLaw, start: u64, budget: u64, rng: &mut R) -> Result<Vec<u64>> {
    let mut path = Vec::new();
    excursion(start, budget, |y| Ok(bpre_step(law, y, rng)), |y| path.push(y))?;
    Ok(path)
}

/// Length and maximum of one excursion, without storing the path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct YExcursion {
    /// `sigma_1^+`.
    pub len: u64,
    /// `max_{1 <= n <= sigma} Y_n`.
    pub max: u64,
    /// The budget ran out; `len` and `max` are lower bounds.
    pub truncated: bool,
}

fn summarize<F: FnMut(u64) -> Result<u64>>(start: u64, budget: u64, step: F) -> Result<YExcursion> {
    let mut s = YExcursion::default();
    let mut first = true;
    let r = excursion(start, budget, step, |y| {
        if first {
            first = false;
        } else {
            s.len += 1;
            s.max = s.max.max(y);
        }
    });
    match r {
        Ok(()) => Ok(s),
        Err(Error::ExcursionBudgetExceeded { .. }) => {
            s.truncated = true;
            Ok(s)
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YSampler {
    Kernel,
    Bpre,
}

/// `n` excursions from 1; replica `i` uses stream `(seed, i)`.
pub fn y_excursions(
    law: &EnvironmentLaw,
    kernel: Option<&YKernel>,
    sampler: YSampler,
    n: u64,
    budget: u64,
    seed: u64,
) -> Result<Vec<YExcursion>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            match sampler {
                YSampler::Kernel => {
                    let k = kernel.expect("kernel sampler needs a kernel");
                    summarize(1, budget, |y| k.sample_next(y, &mut rng))
                }
                YSampler::Bpre => summarize(1, budget, |y| Ok(bpre_step(law, y, &mut rng))),
            }
        })
        .collect()
}

/// `max_n Z_n` for the BPRE without immigration started at `Z_0 = 1`,
/// run until extinction. Also returns the extinction time.
pub fn bpre_max<R: Rng + ?Sized>(law: &EnvironmentLaw, budget: u64, rng: &mut R) -> YExcursion {
    let mut z = 1u64;
    let mut s = YExcursion {
        len: 0,
        max: 1,
        truncated: false,
    };
    while z > 0 {
        if s.len == budget {
            s.truncated = true;
            break;
        }
        let m = (-law.sample_s1(rng)).exp();
        z = neg_binomial(z, m, rng);
        s.len += 1;
        s.max = s.max.max(z);
    }
    s
}

pub fn bpre_maxima(law: &EnvironmentLaw, n: u64, budget: u64, seed: u64) -> Vec<YExcursion> {
    (0..n)
        .into_par_iter()
        .map(|i| bpre_max(law, budget, &mut stream(seed, i)))
        .collect()
}

/// Tail of `max_{1 <= n <= sigma} Y_n` over `n` excursions from 1.
///
/// Truncated excursions enter with their running maximum, a lower bound.
pub fn excursion_max_tail(
    law: &EnvironmentLaw,
    kernel: Option<&YKernel>,
    sampler: YSampler,
    n: u64,
    budget: u64,
    seed: u64,
    opts: &TailOpts,
) -> Result<(TailReport, Vec<YExcursion>)> {
    let xs = y_excursions(law, kernel, sampler, n, budget, seed)?;
    let maxima: Vec<u64> = xs.iter().map(|x| x.max).collect();
    Ok((fit_tail_exponent(&Ccdf::from_counts(&maxima), opts)?, xs))
}

/// Tail of `max_n Z_n` for the BPRE without immigration.
pub fn bpre_max_tail(law: &EnvironmentLaw, n: u64, budget: u64, seed: u64, opts: &TailOpts) -> Result<(TailReport, Vec<YExcursion>)> {
    let xs = bpre_maxima(law, n, budget, seed);
    let maxima: Vec<u64> = xs.iter().map(|x| x.max).collect();
    Ok((fit_tail_exponent(&Ccdf::from_counts(&maxima), opts)?, xs))
}

/// Run the chain `n` steps from `start`, no stopping.
pub fn y_path_kernel<R: Rng + ?Sized>(k: &YKernel, start: u64, n: usize, rng: &mut R) -> Result<Vec<u64>> {
    let mut path = Vec::with_capacity(n + 1);
    path.push(start);
    let mut y = start;
    for _ in 0..n {
        y = k.sample_next(y, rng)?;
        path.push(y);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spine::kernel::KernelOpts;

    #[test]
    fn paths_stop_at_first_return() {
        let law = EnvironmentLaw::log_normal_binary(3.0).unwrap();
        let k = YKernel::new(&law, KernelOpts::default());
        let mut rng = stream(5, 0);
        for start in [1u64, 3] {
            for _ in 0..200 {
                for p in [
                    simulate_y_kernel(&k, start, 1_000_000, &mut rng).unwrap(),
                    simulate_y_bpre(&law, start, 1_000_000, &mut rng).unwrap(),
                ] {
                    assert_eq!(p[0], start);
                    assert_eq!(*p.last().unwrap(), 1);
                    assert!(p.len() >= 2);
                    assert!(p[1..p.len() - 1].iter().all(|&y| y > 1));
                    assert!(p.iter().all(|&y| y >= 1));
                }
            }
        }
    }

    #[test]
    fn budget_is_reported() {
        let law = EnvironmentLaw::log_normal_binary(2.0).unwrap();
        let mut rng = stream(6, 0);
        // from a large state the chain cannot come back to 1 in two steps
        let e = simulate_y_bpre(&law, 1_000_000, 2, &mut rng).unwrap_err();
        assert!(matches!(e, Error::ExcursionBudgetExceeded { budget: 2 }));
    }

    #[test]
    fn bpre_one_step_law_matches_kernel_row() {
        let law = EnvironmentLaw::log_normal_binary(1.5).unwrap();
        let k = YKernel::new(&law, KernelOpts::default());
        let mut rng = stream(7, 0);
        let n = 1_000_000u64;
        let jmax = 30usize;
        let mut counts = vec![0u64; jmax + 1];
        for _ in 0..n {
            let j = bpre_step(&law, 1, &mut rng) as usize;
            counts[j.min(jmax + 1) - 1] += 1;
        }
        // chi-square over j = 1..30 plus the pooled tail
        let mut chi2 = 0.0;
        let mut acc = 0.0;
        for (j, &c) in counts.iter().enumerate().take(jmax) {
            let p = k.kernel_p(1, j as u64 + 1).unwrap();
            acc += p;
            let e = p * n as f64;
            chi2 += (c as f64 - e).powi(2) / e;
        }
        let e = (1.0 - acc) * n as f64;
        chi2 += (counts[jmax] as f64 - e).powi(2) / e;
        // 30 degrees of freedom; 0.999 quantile is about 59.7
        assert!(chi2 < 59.7, "chi2 = {chi2}");
    }

    #[test]
    fn bpre_conditional_means() {
        let law = EnvironmentLaw::log_normal_binary(3.0).unwrap();
        let k = YKernel::new(&law, KernelOpts::default());
        let mut rng = stream(8, 0);
        for i in [1u64, 2, 5] {
            let row = k.row(i).unwrap();
            let exact: f64 = row.pmf.iter().enumerate().map(|(j, p)| (j + 1) as f64 * p).sum();
            let n = 400_000;
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let y = bpre_step(&law, i, &mut rng) as f64;
                s1 += y;
                s2 += y * y;
            }
            let mean = s1 / n as f64;
            let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - exact).abs() < 3.0 * se, "i = {i}: {mean} vs {exact}");
        }
    }

    #[test]
    fn bpre_without_immigration_starts_at_one() {
        let law = EnvironmentLaw::log_normal_binary(1.5).unwrap();
        let xs = bpre_maxima(&law, 1000, 1_000_000, 9);
        assert!(xs.iter().all(|x| x.max >= 1 && !x.truncated && x.len >= 1));
    }
}
