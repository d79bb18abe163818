//! Exact formulas on a single ray `[root, x]` and their brute-force
//! counterparts.
//!
//! Restricted to the ray, the walk is a birth-death chain: from `z_i` it
//! steps down with weight 1 and up with weight `A(z_{i+1})`; excursions
//! into side branches always come back and only delay the chain.

use rand::Rng;

use crate::env::{MarkedTree, NodeId};
use crate::error::{Error, Result};
use crate::walk::branching::neg_binomial;

/// Bias weights along a ray: `a[i] = A(z_{i+1})` and the total weight of
/// the children of the tip.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBiases {
    pub a: Vec<f64>,
    pub tip_child_mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathGeometry {
    /// `V(z_0), ..., V(z_d)` with `V(z_0) = 0`.
    pub v: Vec<f64>,
    pub u_tip: f64,
}

impl PathBiases {
    pub fn depth(&self) -> usize {
        self.a.len()
    }

    pub fn geometry(&self) -> PathGeometry {
        let mut v = Vec::with_capacity(self.a.len() + 1);
        v.push(0.0);
        for a in &self.a {
            v.push(v[v.len() - 1] - a.ln());
        }
        let u_tip = v[v.len() - 1] - self.tip_child_mass.ln_1p();
        PathGeometry { v, u_tip }
    }

    /// Ray from the root to a vertex whose children are materialized.
    pub fn from_tree(tree: &mut MarkedTree<'_>, x: NodeId) -> Self {
        tree.materialize_children(x);
        let path = tree.path_to(x);
        PathBiases {
            a: path[1..].iter().map(|&z| tree.a(z)).collect(),
            tip_child_mass: tree.child_mass(x),
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `(a, p)` with `a = P_root(T_x < T_1)` and `1 - p = P_x(T_1 < T_x^+)`.
pub fn hitting_params(path: &PathGeometry) -> Result<(f64, f64)> {
    if path.v.len() < 2 {
        return Err(Error::PreconditionViolated("path must have depth at least 1".into()));
    }
    let lse = log_sum_exp(&path.v);
    if !lse.is_finite() || !path.u_tip.is_finite() {
        return Err(Error::OverflowGuard);
    }
    let a = (-lse).exp();
    let q = (path.u_tip - lse).exp();
    Ok((a, 1.0 - q))
}

/// Same as [`hitting_params`] but returns `1 - p` directly, which keeps
/// full relative precision when `p` is close to one.
pub fn hitting_params_escape(path: &PathGeometry) -> Result<(f64, f64)> {
    let (a, _) = hitting_params(path)?;
    let lse = log_sum_exp(&path.v);
    Ok((a, (path.u_tip - lse).exp()))
}

/// Thomas algorithm for `-lo_i h_{i-1} + diag_i h_i - up_i h_{i+1} = rhs_i`.
fn tridiagonal(lo: &[f64], diag: &[f64], up: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let denom = diag[i] - if i > 0 { lo[i] * c[i - 1] } else { 0.0 };
        if denom.abs() < f64::MIN_POSITIVE || !denom.is_finite() {
            return Err(Error::SingularSystem);
        }
        c[i] = up[i] / denom;
        d[i] = (rhs[i] + if i > 0 { lo[i] * d[i - 1] } else { 0.0 }) / denom;
    }
    let mut h = vec![0.0; n];
    for i in (0..n).rev() {
        h[i] = d[i] + if i + 1 < n { c[i] * h[i + 1] } else { 0.0 };
    }
    Ok(h)
}

/// `(a, 1 - p)` from the absorbing birth-death chain on the ray.
///
/// Two systems are solved: `h_i = P_{z_i}(hit x before the root's parent)`
/// and its complement `g_i`, so that neither probability is obtained by
/// subtraction.
pub fn hitting_linear_solve_escape(b: &PathBiases) -> Result<(f64, f64)> {
    let d = b.depth();
    if d == 0 {
        return Err(Error::PreconditionViolated("path must have depth at least 1".into()));
    }
    if b.a.iter().any(|&a| a.is_nan() || a < 0.0) {
        return Err(Error::SingularSystem);
    }
    // unknowns z_0 .. z_{d-1}; from z_i: down weight 1, up weight a[i]
    let diag: Vec<f64> = b.a.iter().map(|a| 1.0 + a).collect();
    let lo = vec![1.0; d];
    let up = b.a.clone();
    // h: boundary 0 below, 1 at x; g: boundary 1 below, 0 at x
    let mut rh = vec![0.0; d];
    rh[d - 1] = b.a[d - 1];
    let mut rg = vec![0.0; d];
    rg[0] = 1.0;
    let h = tridiagonal(&lo, &diag, &up, &rh)?;
    let g = tridiagonal(&lo, &diag, &up, &rg)?;
    let escape = g[d - 1] / (1.0 + b.tip_child_mass);
    Ok((h[0], escape))
}

/// `(a, p)` from the absorbing birth-death chain on the ray.
pub fn hitting_linear_solve(b: &PathBiases) -> Result<(f64, f64)> {
    let (a, q) = hitting_linear_solve_escape(b)?;
    Ok((a, 1.0 - q))
}

/// One draw of `xi_1 + ... + xi_n` with `P(xi = 0) = 1 - a` and
/// `P(xi >= k) = a p^(k-1)`: the local time at `x` at the `n`-th return.
pub fn local_time_at_tn_sampler<R: Rng + ?Sized>(a: f64, p: f64, n: u64, rng: &mut R) -> u64 {
    debug_assert!((0.0..=1.0).contains(&a) && (0.0..1.0).contains(&p));
    let visits = if a >= 1.0 {
        n
    } else {
        (0..n).filter(|_| rng.random::<f64>() < a).count() as u64
    };
    visits + neg_binomial(visits, p / (1.0 - p), rng)
}

/// `6 n a exp(-(1 - p) k / 8)`, valid when `a / (1 - p) < k / (8 n)`.
pub fn sum_iid_tail_bound(a: f64, p: f64, n: u64, k: u64) -> Result<f64> {
    if n < 2 || k < 2 {
        return Err(Error::PreconditionViolated("n and k must be at least 2".into()));
    }
    if a / (1.0 - p) >= k as f64 / (8.0 * n as f64) {
        return Err(Error::PreconditionViolated(format!(
            "a/(1-p) = {} is not below k/(8n) = {}",
            a / (1.0 - p),
            k as f64 / (8.0 * n as f64)
        )));
    }
    Ok(6.0 * n as f64 * a * (-(1.0 - p) * k as f64 / 8.0).exp())
}

/// Sum of `k` geometric variables with `P(eta >= n) = (m / (1 + m))^n`:
/// the visits to the children of a vertex entered `k` times.
pub fn theta_sampler<R: Rng + ?Sized>(k: u64, a_sum: f64, rng: &mut R) -> u64 {
    neg_binomial(k, a_sum, rng)
}

/// Generating function `s -> (1 + (1 - s) m)^(-k)` of [`theta_sampler`].
pub fn theta_pgf(k: u64, a_sum: f64, s: f64) -> f64 {
    (1.0 + (1.0 - s) * a_sum).powf(-(k as f64))
}

/// `L_{T_1}(x)` sampled along the ray only: edge local times propagate as
/// `L_bar(z_{i+1}) ~ NB(L_bar(z_i), A(z_{i+1}))` and the tip adds the
/// visits coming back from its children.
pub fn path_site_lt_sampler<R: Rng + ?Sized>(b: &PathBiases, rng: &mut R) -> u64 {
    let mut l = 1u64;
    for &a in &b.a {
        l = neg_binomial(l, a, rng);
        if l == 0 {
            return 0;
        }
    }
    l + neg_binomial(l, b.tip_child_mass, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn flat(d: usize) -> PathBiases {
        PathBiases { a: vec![1.0; d], tip_child_mass: 0.0 }
    }

    #[test]
    fn simple_walk_gamblers_ruin() {
        for d in 1..10 {
            let (a, p) = hitting_params(&flat(d).geometry()).unwrap();
            let e = 1.0 / (d as f64 + 1.0);
            assert!((a - e).abs() < 1e-15);
            assert!((1.0 - p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn depth_one_with_ln2() {
        let g = PathGeometry { v: vec![0.0, 2f64.ln()], u_tip: 2f64.ln() };
        let (a, p) = hitting_params(&g).unwrap();
        assert!((a - 1.0 / 3.0).abs() < 1e-15);
        assert!((1.0 - p - 2.0 / 3.0).abs() < 1e-15);
        // A(z_1) = 1/2 and tip mass chosen so that U(x) = ln 2: 1 + m = 1
        let b = PathBiases { a: vec![0.5], tip_child_mass: 0.0 };
        let (a2, p2) = hitting_linear_solve(&b).unwrap();
        assert!((a2 - 1.0 / 3.0).abs() < 1e-15);
        assert!((1.0 - p2 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_depth_one() {
        let (a, _) = hitting_linear_solve(&flat(1)).unwrap();
        assert!((a - 0.5).abs() < 1e-15);
    }

    #[test]
    fn vanishing_edge_kills_hitting() {
        let mut last = 1.0;
        for e in [1e-1, 1e-2, 1e-4, 1e-8, 1e-12] {
            let b = PathBiases { a: vec![1.0, e, 1.0], tip_child_mass: 1.0 };
            let (a, _) = hitting_linear_solve(&b).unwrap();
            assert!(a < last);
            last = a;
        }
        assert!(last < 1e-11);
    }

    #[test]
    fn overflow_is_guarded() {
        let g = PathGeometry { v: vec![0.0, f64::INFINITY], u_tip: 0.0 };
        assert!(matches!(hitting_params(&g), Err(Error::OverflowGuard)));
    }

    #[test]
    fn sum_bound_examples() {
        let b = sum_iid_tail_bound(0.1, 0.5, 10, 80).unwrap();
        assert!((b - 6.0 * (-5f64).exp()).abs() < 1e-15);
        assert!((b - 0.04043).abs() < 1e-5);
        assert!(matches!(sum_iid_tail_bound(0.1, 0.5, 10, 10), Err(Error::PreconditionViolated(_))));
    }

    #[test]
    fn local_time_mean_and_degenerate_case() {
        let mut rng = stream(1, 0);
        let (a, p, n) = (0.3, 0.6, 5);
        let m = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..m {
            let x = local_time_at_tn_sampler(a, p, n, &mut rng) as f64;
            s += x;
            s2 += x * x;
        }
        let mean = s / m as f64;
        let se = ((s2 / m as f64 - mean * mean) / m as f64).sqrt();
        assert!((mean - n as f64 * a / (1.0 - p)).abs() < 3.0 * se, "{mean}");
        for _ in 0..100 {
            assert_eq!(local_time_at_tn_sampler(1.0, 0.0, 7, &mut rng), 7);
        }
    }

    #[test]
    fn theta_pgf_normalization_and_monte_carlo() {
        assert_eq!(theta_pgf(3, 1.7, 1.0), 1.0);
        let mut rng = stream(2, 0);
        let (k, m) = (2, 1.3);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = 0.5f64.powf(theta_sampler(k, m, &mut rng) as f64);
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - theta_pgf(k, m, 0.5)).abs() < 3.0 * se);
    }

    proptest! {
        #[test]
        fn closed_form_matches_linear_solve(
            a in prop::collection::vec(0.05f64..5.0, 1..30),
            m in 0.0f64..4.0,
        ) {
            let b = PathBiases { a, tip_child_mass: m };
            let (a1, q1) = hitting_params_escape(&b.geometry()).unwrap();
            let (a2, q2) = hitting_linear_solve_escape(&b).unwrap();
            prop_assert!((a1 - a2).abs() <= 1e-10 * a1);
            prop_assert!((q1 - q2).abs() <= 1e-10 * q1);
        }
    }
}
