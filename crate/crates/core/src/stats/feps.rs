//! `f(eps) = eps - 1 + E[(1 - eps)^Z]` for the size `Z` of the optional line.

use serde::{Deserialize, Serialize};

use super::tail::ls_slope;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FEpsPoint {
    pub eps: f64,
    /// Mean of `(1 - eps)^Z - 1 + eps Z`. Equal to `f(eps)` when `E Z = 1`,
    /// and every term is nonnegative.
    pub f: f64,
    pub se: f64,
    /// `eps - 1 + mean((1 - eps)^Z)`, the plain plug-in value.
    pub f_raw: f64,
    pub se_raw: f64,
}

/// `(1 - eps)^z - 1 + eps z` without cancellation for small `eps z`.
fn term(eps: f64, z: u64) -> f64 {
    let z = z as f64;
    let lp = z * (-eps).ln_1p();
    // (1 - eps)^z - 1 = expm1(z log(1 - eps))
    lp.exp_m1() + eps * z
}

fn mean_se(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        s += x;
        s2 += x * x;
    }
    let m = s / n;
    (m, ((s2 / n - m * m).max(0.0) / (n - 1.0)).sqrt())
}

pub fn f_epsilon_curve(z: &[u64], eps: &[f64]) -> Vec<FEpsPoint> {
    assert!(z.len() >= 2);
    eps.iter()
        .map(|&e| {
            assert!(e > 0.0 && e < 1.0, "eps must lie in (0, 1)");
            let (f, se) = mean_se(z.iter().map(|&k| term(e, k)));
            let (g, se_raw) = mean_se(z.iter().map(|&k| (k as f64 * (-e).ln_1p()).exp()));
            FEpsPoint {
                eps: e,
                f,
                se,
                f_raw: e - 1.0 + g,
                se_raw,
            }
        })
        .collect()
}

/// `n` log-spaced points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FEpsFit {
    /// Slope of `log f` on `log eps`.
    pub slope: f64,
    /// Spread of the slope over disjoint batches of the sample.
    pub stderr: f64,
    pub points: Vec<FEpsPoint>,
}

/// Slope of `log f(eps)` on `log eps`, with a batch-means standard error.
pub fn f_epsilon_slope(z: &[u64], eps: &[f64], batches: usize) -> FEpsFit {
    let points = f_epsilon_curve(z, eps);
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let fit = |pts: &[FEpsPoint]| {
        let ys: Vec<f64> = pts.iter().map(|p| p.f.max(f64::MIN_POSITIVE).ln()).collect();
        ls_slope(&xs, &ys)
    };
    let slope = fit(&points);
    let b = batches.clamp(2, z.len() / 2);
    let per: Vec<f64> = z.chunks(z.len().div_ceil(b)).filter(|c| c.len() >= 2).map(|c| fit(&f_epsilon_curve(c, eps))).collect();
    let nb = per.len() as f64;
    let m = per.iter().sum::<f64>() / nb;
    let sd = (per.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (nb - 1.0)).sqrt();
    FEpsFit {
        slope,
        stderr: sd / nb.sqrt(),
        points,
    }
}

/// Mean with standard error.
pub fn mean_with_se(z: &[u64]) -> (f64, f64) {
    mean_se(z.iter().map(|&k| k as f64))
}

/// Mean of `Z^2`.
pub fn second_moment(z: &[u64]) -> f64 {
    z.iter().map(|&k| (k as f64).powi(2)).sum::<f64>() / z.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `f(eps)` by the defining formula for a finite law of `Z`.
    fn f_exact(pmf: &[f64], eps: f64) -> f64 {
        eps - 1.0 + pmf.iter().enumerate().map(|(k, p)| p * (1.0 - eps).powi(k as i32)).sum::<f64>()
    }

    #[test]
    fn binary_law_has_quadratic_f() {
        // Z in {0, 2} with equal weight: f(eps) = eps^2 / 2
        let z: Vec<u64> = (0..1000).map(|i| 2 * (i % 2)).collect();
        for p in f_epsilon_curve(&z, &[0.01, 0.1, 0.5]) {
            assert!((p.f - p.eps * p.eps / 2.0).abs() < 1e-15);
            assert!((p.f_raw - p.f).abs() < 1e-12);
        }
        let fit = f_epsilon_slope(&z, &log_grid(1e-3, 1e-2, 8), 10);
        assert!((fit.slope - 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_law_has_zero_f() {
        let p = &f_epsilon_curve(&[1; 10], &[0.3])[0];
        assert!(p.f.abs() < 1e-16);
        assert!(p.se.abs() < 1e-16);
    }

    #[test]
    fn grid_endpoints() {
        let g = log_grid(1e-3, 1e-2, 5);
        assert!((g[0] - 1e-3).abs() < 1e-18 && (g[4] - 1e-2).abs() < 1e-17);
    }

    proptest! {
        // small mean-one laws on {0, ..., 5}, enumerated exactly
        #[test]
        fn f_is_nonnegative_for_mean_one_laws(w in proptest::collection::vec(0.01f64..1.0, 6), eps in 0.001f64..0.999) {
            let total: f64 = w.iter().sum();
            let pmf: Vec<f64> = w.iter().map(|x| x / total).collect();
            let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
            prop_assume!(mean >= 1.0);
            // mixing with a point mass at zero brings the mean down to one
            let lam = 1.0 / mean;
            let mut mixed: Vec<f64> = pmf.iter().map(|p| lam * p).collect();
            mixed[0] += 1.0 - lam;
            let m: f64 = mixed.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
            prop_assert!((m - 1.0).abs() < 1e-12);
            prop_assert!(f_exact(&mixed, eps) >= -1e-15);
        }
    }
}
