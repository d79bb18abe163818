//! Numerical checks of the Lyapunov function `f(i) = Gamma(i + gamma) / Gamma(i)`
//! for the spine chain and of the series identity behind it.

use serde::{Deserialize, Serialize};

use super::gh;
use super::kernel::{ln_choose, softplus, Integration, YKernel};
use crate::error::{Error, Result};

/// `Gamma(i + gamma) / Gamma(i)`.
pub fn f_gamma(i: u64, gamma: f64) -> f64 {
    ln_f_gamma(i as f64, gamma).exp()
}

fn ln_f_gamma(i: f64, gamma: f64) -> f64 {
    libm::lgamma(i + gamma) - libm::lgamma(i)
}

/// Relative tolerance on every neglected piece of `Pf(i)`.
const TAIL_TOL: f64 = 1e-11;
/// Cap on the terms of one inner sum.
const MAX_TERMS: u64 = 200_000_000;
/// Outer Gauss-Hermite sizes, compared against each other.
const OUTER: [usize; 2] = [100, 200];

/// `E[f(1 + G)]` for `G` negative binomial with `i + 1` trials and
/// `P(G >= n) = a^n` per trial, i.e. `E[f(Y_1) | Y_0 = i, S_1 = s]`.
///
/// Returns the sum and a bound on the neglected terms.
fn inner(i: u64, gamma: f64, s: f64) -> Result<(f64, f64)> {
    // log a and log(1 - a) for a = 1 / (1 + e^s)
    let la = -softplus(s);
    let l1a = -softplus(-s);
    let a = la.exp();
    let r = (i + 1) as f64;
    let log_term = |m: u64| {
        let mf = m as f64;
        ln_choose(m + i, m) + mf * la + r * l1a + ln_f_gamma(mf + 1.0, gamma)
    };
    // ratio T(m+1) / T(m); decreasing in m
    let ratio = |m: u64| {
        let mf = m as f64;
        a * (mf + r) / (mf + 1.0) * (mf + 1.0 + gamma) / (mf + 1.0)
    };
    // start at the argmax of the terms
    let mean = r * (s.exp().recip());
    let mut m0 = mean.floor() as u64;
    while m0 > 0 && ratio(m0 - 1) < 1.0 {
        m0 -= 1;
    }
    while ratio(m0) > 1.0 {
        m0 += 1;
    }
    let l0 = log_term(m0);
    let t0 = 1.0;
    let mut sum = t0;
    let mut terms = 1u64;
    // upward
    let mut t = t0;
    let mut m = m0;
    let up_bound;
    loop {
        t *= ratio(m);
        m += 1;
        sum += t;
        terms += 1;
        let q = ratio(m);
        if q < 1.0 {
            let b = t * q / (1.0 - q);
            if b < TAIL_TOL * 1e-3 * sum {
                up_bound = b;
                break;
            }
        }
        if terms > MAX_TERMS {
            return Err(Error::TruncationTailTooHeavy {
                bound: f64::INFINITY,
                tol: TAIL_TOL,
            });
        }
    }
    // downward; terms increase up to the peak, so those left out are
    // bounded by their number times the smallest kept one
    let mut t = t0;
    let mut m = m0;
    let mut down_bound = 0.0;
    while m > 0 {
        t /= ratio(m - 1);
        m -= 1;
        sum += t;
        down_bound = m as f64 * t;
        if down_bound < TAIL_TOL * 1e-3 * sum {
            break;
        }
    }
    let scale = l0.exp();
    Ok((sum * scale, (up_bound + down_bound) * scale))
}

/// Upper bound of `E[f(1 + G)]` used for discarded quadrature nodes:
/// `f(j) <= (j + gamma)^gamma` and Jensen.
fn inner_upper(i: u64, gamma: f64, s: f64) -> f64 {
    let e = (-s).exp();
    let mean = (i + 1) as f64 * e;
    let var = mean * (1.0 + e);
    let c = 1.0 + gamma;
    if gamma <= 1.0 {
        (c + mean).powf(gamma)
    } else {
        ((c + mean).powi(2) + var).powf(gamma / 2.0)
    }
}

fn pf_gauss(i: u64, gamma: f64, mean: f64, sd: f64, n: usize) -> Result<(f64, f64)> {
    let g = gh::rule(n);
    let norm = std::f64::consts::PI.sqrt();
    let mut total = 0.0;
    let mut bound = 0.0;
    let mut dropped = 0.0;
    // largest node weight first so the running total is meaningful
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g.log_weights[b].total_cmp(&g.log_weights[a]));
    for k in order {
        let s = mean + std::f64::consts::SQRT_2 * sd * g.nodes[k];
        let w = g.log_weights[k].exp() / norm;
        let up = w * inner_upper(i, gamma, s);
        if total > 0.0 && up < 1e-16 * total {
            dropped += up;
            continue;
        }
        let (v, b) = inner(i, gamma, s)?;
        total += w * v;
        bound += w * b;
    }
    Ok((total, bound + dropped))
}

/// `Pf(i) = sum_j P(i, j) f(j)` and a bound on its truncation error.
pub fn pf(kernel: &YKernel, i: u64, gamma: f64) -> Result<(f64, f64)> {
    match kernel.scheme() {
        Integration::Quadrature { mean, sd } => {
            let (base, _) = pf_gauss(i, gamma, *mean, *sd, OUTER[0])?;
            let (v, b) = pf_gauss(i, gamma, *mean, *sd, OUTER[1])?;
            if (v - base).abs() > 1e-10 * v {
                return Err(Error::QuadratureNotConverged {
                    i,
                    j: 0,
                    base,
                    doubled: v,
                });
            }
            Ok((v, b))
        }
        Integration::Atoms(atoms) => {
            let mut v = 0.0;
            let mut b = 0.0;
            for &(s, p) in atoms {
                let (x, y) = inner(i, gamma, s)?;
                v += p * x;
                b += p * y;
            }
            Ok((v, b))
        }
        Integration::MonteCarlo(samples) => {
            let mut v = 0.0;
            let mut b = 0.0;
            for &s in samples.iter() {
                let (x, y) = inner(i, gamma, s)?;
                v += x;
                b += y;
            }
            let n = samples.len() as f64;
            Ok((v / n, b / n))
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupermartingalePoint {
    pub i: u64,
    pub f: f64,
    pub pf: f64,
    pub tail_bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupermartingaleReport {
    pub gamma: f64,
    /// Smallest tested `i` from which `Pf <= f (1 + 1e-8)` at every tested
    /// point; `None` when the largest tested point violates it.
    pub i0: Option<u64>,
    /// Largest `Pf(i) / f(i) - 1` over tested `i >= i0`.
    pub max_excess_above_i0: f64,
    pub points: Vec<SupermartingalePoint>,
}

/// Tested states: every `i <= 200`, then every tenth up to `i_max`.
pub fn test_grid(i_max: u64) -> Vec<u64> {
    (1..=i_max.min(200)).chain((210..=i_max).step_by(10)).collect()
}

/// Check `Pf(i) <= f(i)` on [`test_grid`] for `f(i) = Gamma(i+gamma)/Gamma(i)`.
pub fn supermartingale_check(kernel: &YKernel, gamma: f64, i_max: u64) -> Result<SupermartingaleReport> {
    use rayon::prelude::*;
    let kappa = kernel.law().kappa();
    if !(gamma > 0.0 && gamma < kappa - 1.0) {
        return Err(Error::PreconditionViolated(format!(
            "need 0 < gamma < kappa - 1, got gamma = {gamma}, kappa = {kappa}"
        )));
    }
    if gamma > 2.0 {
        return Err(Error::PreconditionViolated("tail bounds need gamma <= 2".into()));
    }
    let points: Vec<SupermartingalePoint> = test_grid(i_max)
        .into_par_iter()
        .map(|i| {
            let (v, b) = pf(kernel, i, gamma)?;
            let f = f_gamma(i, gamma);
            if b > TAIL_TOL * v {
                return Err(Error::TruncationTailTooHeavy {
                    bound: b / v,
                    tol: TAIL_TOL,
                });
            }
            Ok(SupermartingalePoint {
                i,
                f,
                pf: v,
                tail_bound: b,
            })
        })
        .collect::<Result<_>>()?;
    let ok = |p: &SupermartingalePoint| p.pf <= p.f * (1.0 + 1e-8);
    let first_good = points.iter().rposition(|p| !ok(p)).map_or(0, |k| k + 1);
    let above = &points[first_good..];
    Ok(SupermartingaleReport {
        gamma,
        i0: above.first().map(|p| p.i),
        max_excess_above_i0: above.iter().map(|p| p.pf / p.f - 1.0).fold(f64::NEG_INFINITY, f64::max),
        points,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SeriesCheck {
    pub i: u64,
    pub gamma: f64,
    pub x: f64,
    /// Power series, summed with a remainder bound.
    pub lhs: f64,
    /// Closed-form finite sum.
    pub rhs: f64,
    pub rel_err: f64,
}

/// `sum_n C(i+n, i) Gamma(n+gamma+1)/Gamma(n+1) x^n`.
pub fn series_lhs(i: u64, gamma: f64, x: f64) -> Result<f64> {
    assert!(gamma > -1.0 && (0.0..1.0).contains(&x));
    let mut t = libm::tgamma(gamma + 1.0);
    let mut sum = t;
    if x == 0.0 {
        return Ok(sum);
    }
    let ratio = |n: f64| x * (i as f64 + n + 1.0) / (n + 1.0) * ((n + gamma + 1.0) / (n + 1.0)).max(1.0);
    let mut n = 0.0;
    while n < 1e8 {
        t *= x * (i as f64 + n + 1.0) / (n + 1.0) * (n + gamma + 1.0) / (n + 1.0);
        n += 1.0;
        sum += t;
        let q = ratio(n);
        if q < 1.0 && t * q / (1.0 - q) < 1e-17 * sum {
            return Ok(sum);
        }
    }
    Err(Error::SeriesNotConverged { x })
}

/// `(1-x)^(-i-1-gamma) sum_{k<=i} f(i-k+1) binom(gamma, k) (x-1)^k`: the
/// `i`-th derivative of `x^i (1-x)^(-1-gamma)` scaled by `Gamma(1+gamma)/i!`.
pub fn series_rhs(i: u64, gamma: f64, x: f64) -> f64 {
    let y = 1.0 - x;
    finite_sum(i, gamma, y) * y.powf(-(i as f64) - 1.0 - gamma)
}

/// `sum_{k<=i} f(i-k+1) binom(gamma, k) (-y)^k`.
fn finite_sum(i: u64, gamma: f64, y: f64) -> f64 {
    let mut binom = 1.0;
    let mut s = 0.0;
    for k in 0..=i {
        if k > 0 {
            binom *= (gamma - (k - 1) as f64) / k as f64;
        }
        s += f_gamma(i - k + 1, gamma) * binom * (-y).powi(k as i32);
    }
    s
}

pub fn hypergeometric_identity_check(i: u64, gamma: f64, x: f64) -> Result<SeriesCheck> {
    let lhs = series_lhs(i, gamma, x)?;
    let rhs = series_rhs(i, gamma, x);
    Ok(SeriesCheck {
        i,
        gamma,
        x,
        lhs,
        rhs,
        rel_err: ((lhs - rhs) / lhs).abs(),
    })
}

/// Closed-form `E[f(Y_1) | Y_0 = i, S_1 = s]`: the series at `x = a`
/// times `(1 - a)^(i+1)`.
pub fn inner_closed_form(i: u64, gamma: f64, s: f64) -> f64 {
    let y = 1.0 / (1.0 + (-s).exp());
    finite_sum(i, gamma, y) * y.powf(-gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvironmentLaw;
    use crate::spine::kernel::KernelOpts;

    #[test]
    fn f_at_one_and_growth() {
        for g in [0.25, 0.5, 1.0, 1.7] {
            assert!((f_gamma(1, g) - libm::tgamma(1.0 + g)).abs() < 1e-14);
        }
        assert!((f_gamma(100, 0.25) / 100f64.powf(0.25) - 1.0).abs() < 0.05);
        assert!((f_gamma(37, 1.0) - 37.0).abs() < 1e-10);
    }

    #[test]
    fn inner_sum_matches_closed_form() {
        for (i, g, s) in [(1u64, 0.25, 0.3), (7, 1.0, -2.0), (40, 0.6, 1.5), (300, 0.25, -4.0), (5, 1.8, 0.0)] {
            let (v, b) = inner(i, g, s).unwrap();
            let c = inner_closed_form(i, g, s);
            assert!(b <= TAIL_TOL * v);
            assert!((v / c - 1.0).abs() < 1e-9, "{i} {g} {s}: {v} vs {c}");
        }
    }

    #[test]
    fn linear_f_has_an_exact_drift() {
        // gamma = 1: f(j) = j and Pf(i) = 1 + (i + 1) E[e^-S]
        let law = EnvironmentLaw::log_normal_binary(3.0).unwrap();
        let k = YKernel::new(&law, KernelOpts::default());
        let m = law.s1_laplace(1.0);
        for i in [1u64, 9, 120, 1000] {
            let (v, _) = pf(&k, i, 1.0).unwrap();
            let exact = 1.0 + (i + 1) as f64 * m;
            assert!((v / exact - 1.0).abs() < 1e-10, "{i}: {v} vs {exact}");
        }
        let r = supermartingale_check(&k, 1.0, 300).unwrap();
        // (1 + (i + 1) m) <= i  iff  i >= (1 + m) / (1 - m)
        let expected = ((1.0 + m) / (1.0 - m)).ceil() as u64;
        assert_eq!(r.i0, Some(expected));
    }

    #[test]
    fn gamma_must_be_below_kappa_minus_one() {
        let law = EnvironmentLaw::log_normal_binary(1.5).unwrap();
        let k = YKernel::new(&law, KernelOpts::default());
        assert!(matches!(
            supermartingale_check(&k, 0.5, 10),
            Err(Error::PreconditionViolated(_))
        ));
    }

    #[test]
    fn series_identity() {
        let c = hypergeometric_identity_check(0, 0.7, 0.0).unwrap();
        assert!((c.lhs - libm::tgamma(1.7)).abs() < 1e-14 && (c.rhs - c.lhs).abs() < 1e-14);
        for (i, g, x) in [(1u64, 0.5, 0.3), (3, 1.2, 0.5), (6, 0.25, 0.9), (2, 2.5, 0.01)] {
            let c = hypergeometric_identity_check(i, g, x).unwrap();
            assert!(c.rel_err < 1e-8, "{c:?}");
        }
        assert!(matches!(
            series_lhs(2, 0.5, 1.0 - 1e-9),
            Err(Error::SeriesNotConverged { .. })
        ));
    }
}
