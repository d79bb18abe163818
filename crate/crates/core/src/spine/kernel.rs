//! Transition kernel of the spine chain.
//!
//! `P(i, j) = C(i+j-1, j-1) E[a^(j-1) (1-a)^(i+1)]` with `a = 1 / (1 + e^S)`
//! and `S` distributed as `S_1`. Given `S`, `Y_1 - 1` is negative binomial
//! with `i + 1` trials, so every row sums to one.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::{Arc, OnceLock, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gh;
use crate::env::{EnvironmentLaw, S1Law};
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelOpts {
    /// A row stops once its cumulative mass reaches `1 - tail_tol`.
    pub tail_tol: f64,
    /// Hard cap on the number of columns of a row.
    pub max_columns: usize,
    /// Sample size for laws without quadrature.
    pub mc_samples: usize,
    pub mc_seed: u64,
    /// Largest change allowed between the last two quadrature refinements.
    pub quad_tol: f64,
}

impl Default for KernelOpts {
    fn default() -> Self {
        KernelOpts {
            tail_tol: 1e-9,
            max_columns: 10_000_000,
            mc_samples: 20_000,
            mc_seed: 0x5eed,
            quad_tol: 1e-9,
        }
    }
}

/// How `E[.]` over `S_1` is evaluated.
#[derive(Clone, Debug)]
pub enum Integration {
    /// Gauss-Hermite centered at the mode of each integrand.
    Quadrature { mean: f64, sd: f64 },
    /// Finite support: exact sum.
    Atoms(Vec<(f64, f64)>),
    /// Fixed sample of `S_1` shared by all entries.
    MonteCarlo(Arc<Vec<f64>>),
}

impl Integration {
    pub fn for_law(law: &EnvironmentLaw, opts: &KernelOpts) -> Self {
        match law.s1_law() {
            S1Law::Gaussian { mean, sd } => Integration::Quadrature { mean: *mean, sd: *sd },
            S1Law::Discrete { atoms } => Integration::Atoms(atoms.iter().filter(|a| a.1 > 0.0).copied().collect()),
            _ => {
                let mut rng = stream(opts.mc_seed, 0);
                let s = (0..opts.mc_samples).map(|_| law.sample_s1(&mut rng)).collect();
                Integration::MonteCarlo(Arc::new(s))
            }
        }
    }
}

/// Refinement sequence of the quadrature; the last two are compared.
pub const QUAD_POINTS: [usize; 5] = [25, 50, 100, 200, 400];

pub(crate) fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

pub(crate) fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// `log(a^(j-1) (1-a)^(i+1))` at `a = 1 / (1 + e^s)`.
#[inline]
fn log_nb_core(i: u64, j: u64, s: f64) -> f64 {
    (i + 1) as f64 * s - (i + j) as f64 * softplus(s)
}

/// Mode of the log-concave integrand `log phi(s) + log_nb_core(i, j, s)`.
fn mode(i: u64, j: u64, mean: f64, var: f64) -> f64 {
    let (ip, ij) = ((i + 1) as f64, (i + j) as f64);
    let grad = |s: f64| -(s - mean) / var + ip - ij * logistic(s);
    let mut lo = mean + var * (1.0 - j as f64) - 1.0;
    let mut hi = mean + var * ip + 1.0;
    let mut s = if j > 1 {
        (ip / (j - 1) as f64).ln().clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    };
    for _ in 0..200 {
        let g = grad(s);
        if g > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let l = logistic(s);
        let h = -1.0 / var - ij * l * (1.0 - l);
        let mut next = s - g / h;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= 1e-13 * (1.0 + s.abs()) || hi - lo <= 1e-13 * (1.0 + s.abs()) {
            return next;
        }
        s = next;
    }
    s
}

fn quad_rules() -> &'static [Arc<gh::GaussHermite>] {
    static RULES: OnceLock<Vec<Arc<gh::GaussHermite>>> = OnceLock::new();
    RULES.get_or_init(|| QUAD_POINTS.iter().map(|&n| gh::rule(n)).collect())
}

/// `log P(i, j)` for Gaussian `S_1`.
fn log_entry_quadrature(i: u64, j: u64, mean: f64, sd: f64, quad_tol: f64) -> Result<f64> {
    let var = sd * sd;
    let s_hat = mode(i, j, mean, var);
    let l = logistic(s_hat);
    let tau = 1.0 / (1.0 / var + (i + j) as f64 * l * (1.0 - l)).sqrt();
    let scale = std::f64::consts::SQRT_2 * tau;
    let log_norm = -(sd * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let integrand = |s: f64| log_norm - 0.5 * (s - mean) * (s - mean) / var + log_nb_core(i, j, s);
    let lc = ln_choose(i + j - 1, j - 1);
    let rules = quad_rules();
    let mut buf = Vec::with_capacity(QUAD_POINTS[QUAD_POINTS.len() - 1]);
    let mut eval = |g: &gh::GaussHermite| {
        buf.clear();
        let mut m = f64::NEG_INFINITY;
        for (&x, &lw) in g.nodes.iter().zip(&g.log_weights) {
            let t = lw + x * x + integrand(s_hat + scale * x);
            m = m.max(t);
            buf.push(t);
        }
        if !m.is_finite() {
            return m;
        }
        lc + scale.ln() + m + buf.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    };
    let mut prev = eval(&rules[0]);
    for (k, g) in rules.iter().enumerate().skip(1) {
        let cur = eval(g);
        let diff = (cur.exp() - prev.exp()).abs();
        if (cur - prev).abs() < 1e-12 || diff < 1e-17 {
            return Ok(cur);
        }
        if k == QUAD_POINTS.len() - 1 && diff > quad_tol {
            return Err(Error::QuadratureNotConverged {
                i,
                j,
                base: prev.exp(),
                doubled: cur.exp(),
            });
        }
        prev = cur;
    }
    Ok(prev)
}

/// One row of the kernel, possibly only a prefix of it.
#[derive(Clone, Debug, Default)]
pub struct Row {
    pub pmf: Vec<f64>,
    pub cdf: Vec<f64>,
    /// The row reached `1 - tail_tol` or the column cap; mass beyond the
    /// last column is sampled as the last column.
    pub complete: bool,
}

impl Row {
    pub fn mass(&self) -> f64 {
        self.cdf.last().copied().unwrap_or(0.0)
    }
}

/// Kernel `P(i, j)` with lazily built, cached rows.
pub struct YKernel {
    law: EnvironmentLaw,
    scheme: Integration,
    opts: KernelOpts,
    rows: RwLock<HashMap<u64, Arc<Row>>>,
}

impl YKernel {
    pub fn new(law: &EnvironmentLaw, opts: KernelOpts) -> Self {
        YKernel {
            law: law.clone(),
            scheme: Integration::for_law(law, &opts),
            opts,
            rows: RwLock::new(HashMap::new()),
        }
    }

    pub fn law(&self) -> &EnvironmentLaw {
        &self.law
    }

    pub fn scheme(&self) -> &Integration {
        &self.scheme
    }

    pub fn opts(&self) -> &KernelOpts {
        &self.opts
    }

    /// `P(i, j)` computed from scratch, bypassing the row cache.
    pub fn compute(&self, i: u64, j: u64) -> Result<f64> {
        assert!(i >= 1 && j >= 1);
        let lp = match &self.scheme {
            Integration::Quadrature { mean, sd } => log_entry_quadrature(i, j, *mean, *sd, self.opts.quad_tol)?,
            Integration::Atoms(atoms) => {
                ln_choose(i + j - 1, j - 1) + log_sum_exp(atoms.iter().map(|&(s, p)| p.ln() + log_nb_core(i, j, s)))
            }
            Integration::MonteCarlo(s) => {
                ln_choose(i + j - 1, j - 1) + log_sum_exp(s.iter().map(|&s| log_nb_core(i, j, s)))
                    - (s.len() as f64).ln()
            }
        };
        Ok(lp.exp())
    }

    /// `P(i, j)`, read from the cached row when it covers `j`.
    pub fn kernel_p(&self, i: u64, j: u64) -> Result<f64> {
        if let Some(row) = self.cached(i) {
            if let Some(&p) = row.pmf.get((j - 1) as usize) {
                return Ok(p);
            }
        }
        self.compute(i, j)
    }

    fn cached(&self, i: u64) -> Option<Arc<Row>> {
        self.rows.read().expect("kernel cache poisoned").get(&i).cloned()
    }

    fn extend(&self, i: u64, row: &Row, target: usize) -> Result<Arc<Row>> {
        let mut next = row.clone();
        let mut cum = next.mass();
        let cap = target.min(self.opts.max_columns);
        while next.pmf.len() < cap {
            let j = next.pmf.len() as u64 + 1;
            let p = self.compute(i, j)?;
            cum += p;
            next.pmf.push(p);
            next.cdf.push(cum);
            if cum >= 1.0 - self.opts.tail_tol {
                next.complete = true;
                break;
            }
        }
        if next.pmf.len() >= self.opts.max_columns {
            next.complete = true;
        }
        let next = Arc::new(next);
        let mut rows = self.rows.write().expect("kernel cache poisoned");
        let keep = match rows.get(&i) {
            Some(cur) => cur.complete || cur.pmf.len() >= next.pmf.len(),
            None => false,
        };
        if keep {
            return Ok(rows[&i].clone());
        }
        rows.insert(i, next.clone());
        Ok(next)
    }

    fn initial_len(&self, i: u64) -> usize {
        let m2 = self.law.s1_laplace(1.0);
        let mean = 1.0 + (i + 1) as f64 * if m2.is_finite() { m2 } else { 1.0 };
        (2.0 * mean).ceil() as usize + 16
    }

    /// The truncated row of state `i`, built on first use.
    pub fn row(&self, i: u64) -> Result<Arc<Row>> {
        let mut row = self.cached(i).unwrap_or_default();
        let mut target = self.initial_len(i).max(2 * row.pmf.len());
        while !row.complete {
            row = self.extend(i, &row, target)?;
            target *= 2;
        }
        Ok(row)
    }

    /// Truncated row sum `sum_{j <= J(i)} P(i, j)`.
    pub fn row_sum(&self, i: u64) -> Result<f64> {
        Ok(self.row(i)?.mass())
    }

    /// Replace the cached row of `i`; meant for fault injection.
    pub fn insert_row(&self, i: u64, pmf: Vec<f64>) {
        let mut cum = 0.0;
        let cdf = pmf
            .iter()
            .map(|p| {
                cum += p;
                cum
            })
            .collect();
        let row = Row {
            pmf,
            cdf,
            complete: true,
        };
        self.rows.write().expect("kernel cache poisoned").insert(i, Arc::new(row));
    }

    /// Inverse-CDF draw of `Y_{n+1}` given `Y_n = i`, extending the row
    /// prefix only as far as the uniform requires.
    pub fn sample_next<R: Rng + ?Sized>(&self, i: u64, rng: &mut R) -> Result<u64> {
        let u = rng.random::<f64>();
        let mut row = self.cached(i).unwrap_or_default();
        let mut target = self.initial_len(i);
        loop {
            let idx = row.cdf.partition_point(|&c| c <= u);
            if idx < row.cdf.len() {
                return Ok(idx as u64 + 1);
            }
            if row.complete {
                return Ok(row.cdf.len().max(1) as u64);
            }
            target = target.max(2 * row.pmf.len());
            row = self.extend(i, &row, target)?;
        }
    }

    /// Cached rows as `i,j,p` lines.
    pub fn export_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let rows = self.rows.read().expect("kernel cache poisoned");
        let mut keys: Vec<_> = rows.keys().copied().collect();
        keys.sort_unstable();
        writeln!(w, "i,j,p")?;
        for i in keys {
            for (j, p) in rows[&i].pmf.iter().enumerate() {
                writeln!(w, "{},{},{:.17e}", i, j + 1, p)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Preset;

    #[test]
    fn rows_sum_to_one() {
        for kappa in [1.5, 3.0] {
            let law = EnvironmentLaw::log_normal_binary(kappa).unwrap();
            let k = YKernel::new(&law, KernelOpts::default());
            for i in [1u64, 2, 7, 50] {
                let s = k.row_sum(i).unwrap();
                assert!((s - 1.0).abs() < 1e-6, "kappa {kappa} row {i}: {s}");
                assert!(k.row(i).unwrap().pmf.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn p11_is_a_positive_expectation() {
        let law = EnvironmentLaw::log_normal_binary(2.0).unwrap();
        let k = YKernel::new(&law, KernelOpts::default());
        let (m, sd) = law.s1_gaussian().unwrap();
        // plain Gauss-Hermite on E[(1 + e^-S)^-2]
        let g = gh::GaussHermite::new(80);
        let direct: f64 = g
            .nodes
            .iter()
            .zip(&g.log_weights)
            .map(|(&x, &lw)| {
                let s = m + std::f64::consts::SQRT_2 * sd * x;
                lw.exp() * (1.0 + (-s).exp()).powi(-2)
            })
            .sum::<f64>()
            / std::f64::consts::PI.sqrt();
        let p = k.kernel_p(1, 1).unwrap();
        assert!(p > 0.0);
        assert!((p - direct).abs() < 1e-12, "{p} vs {direct}");
    }

    #[test]
    fn quadrature_matches_monte_carlo() {
        let law = EnvironmentLaw::log_normal_binary(1.5).unwrap();
        let k = YKernel::new(&law, KernelOpts::default());
        let p = k.kernel_p(2, 3).unwrap();
        let mut rng = stream(11, 0);
        let n = 10_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let s = law.sample_s1(&mut rng);
            // C(4, 2) e^{-2S} / (1 + e^{-S})^5
            let e = (-s).exp();
            let v = 6.0 * e * e / (1.0 + e).powi(5);
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((p - mean).abs() < 4.0 * se, "{p} vs {mean} +- {se}");
    }

    #[test]
    fn atoms_and_monte_carlo_schemes_normalize() {
        let two = EnvironmentLaw::new(Preset::TwoPointRegular {
            d: 2,
            a: 0.25,
            b: 1.5,
            q: 0.8,
        })
        .unwrap();
        let k = YKernel::new(&two, KernelOpts::default());
        assert!(matches!(k.scheme(), Integration::Atoms(_)));
        for i in [1u64, 5, 30] {
            assert!((k.row_sum(i).unwrap() - 1.0).abs() < 1e-6);
        }
        // exact two-atom value of P(1, 1): sum_s p_s (1 - a_s)^2
        let direct: f64 = match two.s1_law() {
            S1Law::Discrete { atoms } => atoms.iter().map(|&(s, p)| p * logistic(s).powi(2)).sum(),
            _ => unreachable!(),
        };
        assert!((k.kernel_p(1, 1).unwrap() - direct).abs() < 1e-14);

        let uni = EnvironmentLaw::new(Preset::UniformBinary).unwrap();
        let k = YKernel::new(
            &uni,
            KernelOpts {
                mc_samples: 2000,
                ..KernelOpts::default()
            },
        );
        assert!(matches!(k.scheme(), Integration::MonteCarlo(_)));
        assert!((k.row_sum(3).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampling_follows_the_row() {
        let law = EnvironmentLaw::log_normal_binary(3.0).unwrap();
        let k = YKernel::new(&law, KernelOpts::default());
        let mut rng = stream(3, 0);
        let n = 200_000;
        let mut hits = [0u64; 4];
        for _ in 0..n {
            let j = k.sample_next(2, &mut rng).unwrap();
            if j <= 4 {
                hits[(j - 1) as usize] += 1;
            }
        }
        for (j, &h) in hits.iter().enumerate() {
            let p = k.compute(2, j as u64 + 1).unwrap();
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((h as f64 / n as f64 - p).abs() < 4.0 * se, "j = {}", j + 1);
        }
    }

    #[test]
    fn injected_row_is_served() {
        let law = EnvironmentLaw::log_normal_binary(3.0).unwrap();
        let k = YKernel::new(&law, KernelOpts::default());
        k.insert_row(4, vec![0.5, 0.2]);
        assert!((k.row_sum(4).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(k.kernel_p(4, 2).unwrap(), 0.2);
        assert!((k.row_sum(5).unwrap() - 1.0).abs() < 1e-6);
        let mut out = Vec::new();
        k.export_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("i,j,p\n4,1,"));
    }
}
