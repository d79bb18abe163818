//! Gauss-Hermite rules for `int exp(-x^2) g(x) dx`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

/// Nodes in decreasing order with natural-log weights.
///
/// Weights of the outer nodes of large rules are far below the smallest
/// positive double, hence the log representation.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let m = n.div_ceil(2);
        let mut x = vec![0.0; n];
        let mut lw = vec![0.0; n];
        let bound = (2.0 * n as f64 + 1.0).sqrt();
        for i in 0..m {
            // i-th largest eigenvalue of the Jacobi matrix, by Sturm bisection
            let rank = n - 1 - i;
            let (mut lo, mut hi) = (0.0, bound);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if below(n, mid) > rank {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let mut z = 0.5 * (lo + hi);
            let (p, mut dp) = hermite(n, z);
            // one Newton polish, kept only if it stays in the bracket
            let polished = z - p / dp;
            if polished > lo && polished < hi {
                z = polished;
                dp = hermite(n, z).1;
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            lw[i] = std::f64::consts::LN_2 - 2.0 * dp.abs().ln();
            lw[n - 1 - i] = lw[i];
        }
        if n % 2 == 1 {
            x[m - 1] = 0.0;
        }
        GaussHermite {
            nodes: x,
            log_weights: lw,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Number of eigenvalues of the Jacobi matrix below `x`.
fn below(n: usize, x: f64) -> usize {
    let mut count = 0;
    let mut q = -x;
    for k in 0..n {
        if k > 0 {
            q = -x - (k as f64 / 2.0) / q;
        }
        if q == 0.0 {
            q = -1e-300;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Normalized Hermite function `h_n(z)` and its derivative, up to the
/// common Gaussian factor.
fn hermite(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

/// Shared rule of size `n`, built once per process.
pub fn rule(n: usize) -> Arc<GaussHermite> {
    static RULES: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
    let rules = RULES.get_or_init(|| Mutex::new(HashMap::new()));
    let mut g = rules.lock().expect("rule cache poisoned");
    g.entry(n).or_insert_with(|| Arc::new(GaussHermite::new(n))).clone()
}
