//! Two-sample Kolmogorov-Smirnov test with permutation p-values.
//!
//! Local times are integers, so the samples have many ties and the
//! asymptotic KS distribution does not apply. The p-value is computed by
//! reshuffling the group labels over the pooled sample instead.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::stream;

pub const DEFAULT_PERMUTATIONS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// `sup_r |F_a(r) - F_b(r)|`.
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

/// Statistic for `labels` (true = first sample) over the sorted pooled
/// values; only the ends of tie groups are compared.
fn statistic(pooled: &[f64], labels: &[bool], na: usize, nb: usize) -> f64 {
    let (fa, fb) = (1.0 / na as f64, 1.0 / nb as f64);
    let (mut ca, mut cb) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    for i in 0..pooled.len() {
        if labels[i] {
            ca += 1;
        } else {
            cb += 1;
        }
        if i + 1 == pooled.len() || pooled[i + 1] != pooled[i] {
            d = d.max((ca as f64 * fa - cb as f64 * fb).abs());
        }
    }
    d
}

/// KS test of `a` against `b`; permutation `p` uses stream `(seed, p)`.
///
/// `p = (1 + #{permuted D >= observed D}) / (1 + permutations)`.
pub fn ks_two_sample(a: &[f64], b: &[f64], permutations: usize, seed: u64) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "both samples must be nonempty");
    let mut pooled: Vec<(f64, bool)> = a.iter().map(|&x| (x, true)).chain(b.iter().map(|&x| (x, false))).collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("no NaN"));
    let values: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    let labels: Vec<bool> = pooled.iter().map(|p| p.1).collect();
    let d = statistic(&values, &labels, a.len(), b.len());
    // guards against rounding in the comparison of equal statistics
    let tol = 1e-12;
    let hits: usize = (0..permutations as u64)
        .into_par_iter()
        .map_init(
            || labels.clone(),
            |lab, p| {
                lab.shuffle(&mut stream(seed, p));
                usize::from(statistic(&values, lab, a.len(), b.len()) >= d - tol)
            },
        )
        .sum();
    KsResult {
        statistic: d,
        p_value: (1 + hits) as f64 / (1 + permutations) as f64,
        permutations,
    }
}

pub fn ks_two_sample_counts(a: &[u64], b: &[u64], permutations: usize, seed: u64) -> KsResult {
    let f = |x: &[u64]| x.iter().map(|&v| v as f64).collect::<Vec<_>>();
    ks_two_sample(&f(a), &f(b), permutations, seed)
}

/// Outcome of repeated KS tests: the median p-value must exceed 0.05 and
/// at most two repetitions may fall below 0.01.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KsRule {
    pub p_values: Vec<f64>,
    pub median_p: f64,
    pub below_001: usize,
    pub pass: bool,
}

pub const KS_RULE_MEDIAN: f64 = 0.05;
pub const KS_RULE_LOW: f64 = 0.01;
pub const KS_RULE_MAX_LOW: usize = 2;

pub fn ks_rule(p_values: Vec<f64>) -> KsRule {
    assert!(!p_values.is_empty());
    let mut s = p_values.clone();
    s.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let n = s.len();
    let median_p = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let below_001 = s.iter().filter(|&&p| p < KS_RULE_LOW).count();
    KsRule {
        pass: median_p > KS_RULE_MEDIAN && below_001 <= KS_RULE_MAX_LOW,
        p_values,
        median_p,
        below_001,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn geometric(p: f64, n: usize, seed: u64) -> Vec<u64> {
        let mut rng = stream(seed, 0);
        (0..n)
            .map(|_| ((1.0 - rng.random::<f64>()).ln() / (1.0 - p).ln()).floor() as u64)
            .collect()
    }

    #[test]
    fn identical_samples() {
        let a = geometric(0.3, 500, 1);
        let r = ks_two_sample_counts(&a, &a, 200, 0);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn different_geometric_laws_are_separated() {
        // success probabilities 0.5 and 0.9: P(X = 0) differs by 0.4
        let r = ks_two_sample_counts(&geometric(0.5, 10_000, 2), &geometric(0.9, 10_000, 3), 1000, 0);
        assert!(r.statistic > 0.35);
        assert!(r.p_value < 0.001);
    }

    #[test]
    fn same_law_passes_the_rule() {
        let ps = (0..20)
            .map(|s| ks_two_sample_counts(&geometric(0.4, 2000, 10 + s), &geometric(0.4, 2000, 100 + s), 300, s).p_value)
            .collect();
        assert!(ks_rule(ps).pass);
    }

    #[test]
    fn statistic_matches_direct_cdf_distance() {
        let a = [1.0, 2.0, 2.0, 5.0];
        let b = [2.0, 3.0];
        // F_a - F_b at 1, 2, 3, 5: 0.25, 0.75 - 0.5, 0.75 - 1, 0
        let r = ks_two_sample(&a, &b, 10, 0);
        assert!((r.statistic - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rule_counts_low_p_values() {
        let r = ks_rule(vec![0.5, 0.005, 0.004, 0.2, 0.003, 0.6]);
        assert_eq!(r.below_001, 3);
        assert!(!r.pass);
        assert!(ks_rule(vec![0.3, 0.001, 0.2]).pass);
        assert!(!ks_rule(vec![0.04, 0.03, 0.5]).pass);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn statistic_is_invariant_under_increasing_maps(
            a in proptest::collection::vec(0u32..20, 1..60),
            b in proptest::collection::vec(0u32..20, 1..60),
        ) {
            let fa: Vec<f64> = a.iter().map(|&x| x as f64).collect();
            let fb: Vec<f64> = b.iter().map(|&x| x as f64).collect();
            let g = |x: &f64| (x * 0.7).exp() + x * x;
            let d0 = ks_two_sample(&fa, &fb, 0, 0).statistic;
            let d1 = ks_two_sample(&fa.iter().map(g).collect::<Vec<_>>(), &fb.iter().map(g).collect::<Vec<_>>(), 0, 0).statistic;
            prop_assert!((d0 - d1).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&d0));
        }
    }
}
