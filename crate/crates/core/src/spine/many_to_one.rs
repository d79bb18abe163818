//! Monte Carlo check of the many-to-one formula for edge local times:
//! `E[sum_{|x|=n} 1{L(x) >= 1} f(L(x_1), ..., L(x_n))] = E_k[(k / Y_n) f(Y_1, ..., Y_n)]`
//! where `L` are the edge local times at `T_k` and `Y` is the spine chain
//! started at `k`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::YKernel;
use crate::env::EnvironmentLaw;
use crate::error::Result;
use crate::rng::{derive_seed, stream};
use crate::walk::branching::{neg_binomial, split};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ManyToOne {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
}

impl ManyToOne {
    pub fn combined_se(&self) -> f64 {
        self.lhs_se.hypot(self.rhs_se)
    }

    pub fn z_score(&self) -> f64 {
        let se = self.combined_se();
        if se == 0.0 {
            if self.lhs == self.rhs {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.lhs - self.rhs) / se
        }
    }
}

/// Sum of `f` over the generation-`n` vertices of one annealed excursion
/// tree, depth first with the ancestry kept on a stack.
fn tree_side<R: Rng + ?Sized, F: Fn(&[u64]) -> f64>(law: &EnvironmentLaw, k: u64, n: usize, f: &F, rng: &mut R) -> f64 {
    fn go<R: Rng + ?Sized, F: Fn(&[u64]) -> f64>(
        law: &EnvironmentLaw,
        l: u64,
        n: usize,
        f: &F,
        stack: &mut Vec<u64>,
        rng: &mut R,
    ) -> f64 {
        if stack.len() == n {
            return f(stack);
        }
        let mut w = Vec::new();
        law.sample_weights(rng, &mut w);
        let mass: f64 = w.iter().sum();
        let eta = neg_binomial(l, mass, rng);
        if eta == 0 {
            return 0.0;
        }
        let kids: Vec<((), f64)> = w.iter().map(|&a| ((), a)).collect();
        let mut counts = Vec::new();
        split(eta, &kids, mass, rng, &mut counts);
        let mut total = 0.0;
        for c in counts {
            if c > 0 {
                stack.push(c);
                total += go(law, c, n, f, stack, rng);
                stack.pop();
            }
        }
        total
    }
    go(law, k, n, f, &mut Vec::with_capacity(n), rng)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

/// Both sides of the formula over `samples` replicas each.
pub fn many_to_one_check<F>(law: &EnvironmentLaw, kernel: &YKernel, k: u64, n: usize, f: F, samples: u64, seed: u64) -> Result<ManyToOne>
where
    F: Fn(&[u64]) -> f64 + Sync,
{
    assert!((1..=6).contains(&n), "generation must be in 1..=6");
    let tree_seed = derive_seed(seed, "tree side");
    let spine_seed = derive_seed(seed, "spine side");
    let lhs: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| tree_side(law, k, n, &f, &mut stream(tree_seed, i)))
        .collect();
    let rhs: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(spine_seed, i);
            let mut y = k;
            let mut path = Vec::with_capacity(n);
            for _ in 0..n {
                y = kernel.sample_next(y, &mut rng)?;
                path.push(y);
            }
            Ok(k as f64 / y as f64 * f(&path))
        })
        .collect::<Result<_>>()?;
    let (lhs, lhs_se) = mean_se(&lhs);
    let (rhs, rhs_se) = mean_se(&rhs);
    Ok(ManyToOne { lhs, lhs_se, rhs, rhs_se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spine::kernel::KernelOpts;

    #[test]
    fn zero_function_gives_zero() {
        let law = EnvironmentLaw::log_normal_binary(2.0).unwrap();
        let k = YKernel::new(&law, KernelOpts::default());
        let r = many_to_one_check(&law, &k, 1, 3, |_| 0.0, 1000, 1).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert_eq!(r.z_score(), 0.0);
    }

    #[test]
    fn first_generation_count() {
        let law = EnvironmentLaw::log_normal_binary(2.0).unwrap();
        let k = YKernel::new(&law, KernelOpts::default());
        let r = many_to_one_check(&law, &k, 1, 1, |_| 1.0, 200_000, 2).unwrap();
        assert!(r.z_score().abs() < 4.0, "{r:?}");
    }
}
