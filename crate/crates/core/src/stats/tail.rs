//! Power-law tail exponents of empirical distributions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ccdf::Ccdf;
use crate::error::{Error, Result};
use crate::rng::{mix2, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    /// Least squares of `log P(X >= r)` on `log r` inside the window.
    LoglogLs,
    /// Hill estimator on the samples above the lower window bound.
    Hill,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TailOpts {
    /// Quantile levels bounding the fit window.
    pub window: (f64, f64),
    pub method: TailMethod,
    /// Log-spaced evaluation points of the least-squares fit.
    pub grid_points: usize,
    pub bootstrap: usize,
    /// Blocks resampled by the bootstrap.
    pub blocks: usize,
    pub min_window: usize,
    pub seed: u64,
}

impl Default for TailOpts {
    fn default() -> Self {
        TailOpts {
            window: (0.90, 0.999),
            method: TailMethod::LoglogLs,
            grid_points: 40,
            bootstrap: 200,
            blocks: 100,
            min_window: 200,
            seed: 0x7a11,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailReport {
    /// Slope of `log P(X >= r)`; negative for a decaying tail.
    pub exponent: f64,
    pub stderr: f64,
    /// Sample values at the window quantiles.
    pub window: (f64, f64),
    pub quantiles: (f64, f64),
    pub method: TailMethod,
    pub n_samples: usize,
    /// Samples in `(r_lo, r_hi]` (least squares) or above `r_lo` (Hill).
    pub n_window: usize,
}

impl TailReport {
    /// `|exponent - target| <= tol`.
    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.exponent - target).abs() <= tol
    }
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Slope of `log y` on `log x` over the pairs with positive entries.
pub fn loglog_slope(pairs: &[(f64, f64)]) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    ls_slope(&xs, &ys)
}

/// Per-block sufficient statistics; a bootstrap replicate sums a
/// resampled set of blocks instead of re-sorting the sample.
struct Blocks {
    n: Vec<f64>,
    /// `counts[b][g]`: samples of block `b` that are `>= grid[g]`.
    counts: Vec<Vec<f64>>,
    /// Hill: samples above the threshold and their summed log excess.
    k: Vec<f64>,
    s: Vec<f64>,
}

fn block_stats(v: &[f64], grid: &[f64], u: f64, nb: usize, key: u64) -> Blocks {
    let g = grid.len();
    let mut n = vec![0.0; nb];
    let mut top = vec![vec![0.0; g + 1]; nb];
    let mut k = vec![0.0; nb];
    let mut s = vec![0.0; nb];
    let mut level = 0;
    for (i, &x) in v.iter().enumerate() {
        // sorted sample, so each index lands in one uniformly chosen block
        let b = (mix2(key, i as u64) % nb as u64) as usize;
        n[b] += 1.0;
        while level < g && grid[level] <= x {
            level += 1;
        }
        top[b][level] += 1.0;
        if x > u {
            k[b] += 1.0;
            s[b] += (x / u).ln();
        }
    }
    let counts = top
        .into_iter()
        .map(|h| {
            // samples >= grid[j] are those whose level exceeds j
            let mut c = vec![0.0; g];
            let mut acc = 0.0;
            for j in (0..g).rev() {
                acc += h[j + 1];
                c[j] = acc;
            }
            c
        })
        .collect();
    Blocks { n, counts, k, s }
}

fn ls_fit(grid_ln: &[f64], counts: &[f64], n: f64) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = grid_ln
        .iter()
        .zip(counts)
        .filter(|(_, &c)| c > 0.0)
        .map(|(&x, &c)| (x, (c / n).ln()))
        .unzip();
    if xs.len() < 2 {
        return f64::NAN;
    }
    ls_slope(&xs, &ys)
}

/// Fit the tail exponent of `ccdf` on a quantile window.
///
/// The standard error is a bootstrap over random blocks of the sample, with
/// the evaluation grid (or the Hill threshold) held fixed.
pub fn fit_tail_exponent(ccdf: &Ccdf, opts: &TailOpts) -> Result<TailReport> {
    let (q_lo, q_hi) = opts.window;
    assert!(0.0 < q_lo && q_lo < q_hi && q_hi < 1.0, "invalid quantile window");
    let v = ccdf.values();
    if v.is_empty() {
        return Err(Error::WindowTooSparse {
            found: 0,
            needed: opts.min_window,
        });
    }
    let (r_lo, r_hi) = (ccdf.quantile(q_lo), ccdf.quantile(q_hi));
    let n_window = match opts.method {
        TailMethod::LoglogLs => v.partition_point(|&x| x <= r_hi) - v.partition_point(|&x| x <= r_lo),
        TailMethod::Hill => v.len() - v.partition_point(|&x| x <= r_lo),
    };
    if n_window < opts.min_window || r_hi <= r_lo {
        return Err(Error::WindowTooSparse {
            found: if r_hi <= r_lo { 0 } else { n_window },
            needed: opts.min_window,
        });
    }
    if r_lo <= 0.0 {
        return Err(Error::PreconditionViolated("tail fit needs positive samples in the window".into()));
    }
    // grid points snapped up to sample values, so every point is a step of the CCDF
    let gp = opts.grid_points.max(3);
    let mut grid: Vec<f64> = (0..gp)
        .map(|t| {
            let g = match t {
                0 => r_lo,
                t if t == gp - 1 => r_hi,
                t => r_lo * (r_hi / r_lo).powf(t as f64 / (gp - 1) as f64),
            };
            v[v.partition_point(|&x| x < g).min(v.len() - 1)]
        })
        .filter(|&r| r <= r_hi)
        .collect();
    grid.dedup();
    if opts.method == TailMethod::LoglogLs && grid.len() < 3 {
        return Err(Error::WindowTooSparse {
            found: grid.len(),
            needed: 3,
        });
    }
    let grid_ln: Vec<f64> = grid.iter().map(|r| r.ln()).collect();
    let nb = opts.blocks.clamp(2, v.len());
    let blocks = block_stats(v, &grid, r_lo, nb, opts.seed);
    let estimate = |w: &dyn Fn(usize) -> f64| -> f64 {
        match opts.method {
            TailMethod::LoglogLs => {
                let mut c = vec![0.0; grid.len()];
                let mut n = 0.0;
                for b in 0..nb {
                    let m = w(b);
                    if m == 0.0 {
                        continue;
                    }
                    n += m * blocks.n[b];
                    for (ci, bc) in c.iter_mut().zip(&blocks.counts[b]) {
                        *ci += m * bc;
                    }
                }
                ls_fit(&grid_ln, &c, n)
            }
            TailMethod::Hill => {
                let (mut k, mut s) = (0.0, 0.0);
                for b in 0..nb {
                    k += w(b) * blocks.k[b];
                    s += w(b) * blocks.s[b];
                }
                -k / s
            }
        }
    };
    let exponent = estimate(&|_| 1.0);
    let mut rng = stream(opts.seed, v.len() as u64);
    let mut reps = Vec::with_capacity(opts.bootstrap);
    let mut w = vec![0.0; nb];
    for _ in 0..opts.bootstrap {
        w.iter_mut().for_each(|x| *x = 0.0);
        for _ in 0..nb {
            w[rng.random_range(0..nb)] += 1.0;
        }
        let e = estimate(&|b| w[b]);
        if e.is_finite() {
            reps.push(e);
        }
    }
    let m = reps.iter().sum::<f64>() / reps.len() as f64;
    let sd = (reps.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (reps.len() as f64 - 1.0)).sqrt();
    Ok(TailReport {
        exponent,
        stderr: if sd.is_finite() { sd.max(f64::MIN_POSITIVE) } else { f64::INFINITY },
        window: (r_lo, r_hi),
        quantiles: opts.window,
        method: opts.method,
        n_samples: v.len(),
        n_window,
    })
}

/// Fit with default options.
pub fn tail_exponent(samples: &[f64]) -> Result<TailReport> {
    fit_tail_exponent(&Ccdf::new(samples.to_vec()), &TailOpts::default())
}

pub fn tail_exponent_counts(samples: &[u64]) -> Result<TailReport> {
    fit_tail_exponent(&Ccdf::from_counts(samples), &TailOpts::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn pareto(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, 0);
        (0..n).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / alpha)).collect()
    }

    #[test]
    fn pareto_exponent_is_recovered() {
        let c = Ccdf::new(pareto(1.5, 1_000_000, 1));
        let r = fit_tail_exponent(&c, &TailOpts::default()).unwrap();
        assert!(r.within(-1.5, 0.05), "{r:?}");
        assert!(r.stderr > 0.0 && r.stderr < 0.05);
        assert!(r.window.0 < r.window.1);
        let h = fit_tail_exponent(&c, &TailOpts {
            method: TailMethod::Hill,
            ..TailOpts::default()
        })
        .unwrap();
        assert!(h.within(-1.5, 0.05), "{h:?}");
    }

    #[test]
    fn bootstrap_error_matches_replication_spread() {
        let fits: Vec<TailReport> = (0..20)
            .map(|s| fit_tail_exponent(&Ccdf::new(pareto(2.0, 20_000, 100 + s)), &TailOpts::default()).unwrap())
            .collect();
        let m = fits.iter().map(|f| f.exponent).sum::<f64>() / 20.0;
        let sd = (fits.iter().map(|f| (f.exponent - m).powi(2)).sum::<f64>() / 19.0).sqrt();
        let se = fits.iter().map(|f| f.stderr).sum::<f64>() / 20.0;
        assert!(se > 0.5 * sd && se < 2.0 * sd, "bootstrap {se} vs spread {sd}");
    }

    #[test]
    fn constant_sample_is_rejected() {
        let e = tail_exponent(&[4.0; 10_000]).unwrap_err();
        assert!(matches!(e, Error::WindowTooSparse { found: 0, .. }));
        assert!(matches!(tail_exponent(&[]), Err(Error::WindowTooSparse { .. })));
    }

    #[test]
    fn small_sample_is_too_sparse() {
        let e = tail_exponent(&pareto(1.5, 1000, 2)).unwrap_err();
        assert!(matches!(e, Error::WindowTooSparse { .. }));
    }

    #[test]
    fn integer_tail_is_recovered() {
        // P(X >= r) = 1/r on the integers
        let mut rng = stream(3, 0);
        let xs: Vec<u64> = (0..1_000_000).map(|_| (1.0 / (1.0 - rng.random::<f64>())).floor() as u64).collect();
        let r = tail_exponent_counts(&xs).unwrap();
        assert!(r.within(-1.0, 0.05), "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn exponent_is_scale_invariant(c in 1e-3f64..1e3, seed in 0u64..1000) {
            let xs = pareto(1.2, 5_000, seed);
            let opts = TailOpts { bootstrap: 20, ..TailOpts::default() };
            let a = fit_tail_exponent(&Ccdf::new(xs.clone()), &opts).unwrap();
            let b = fit_tail_exponent(&Ccdf::new(xs.iter().map(|x| x * c).collect()), &opts).unwrap();
            prop_assert!((a.exponent - b.exponent).abs() < 1e-9);
        }

        #[test]
        fn ccdf_is_monotone(xs in proptest::collection::vec(0u64..50, 1..200), r in 0.0f64..60.0, d in 0.0f64..10.0) {
            let c = Ccdf::from_counts(&xs);
            prop_assert!(c.eval(r) >= c.eval(r + d));
            let min = *xs.iter().min().unwrap() as f64;
            prop_assert_eq!(c.eval(min), 1.0);
        }
    }
}
