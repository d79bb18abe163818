//! Level-by-level exploration of a marked tree: the minimum set of `U`,
//! the cutoff level `K_eps` and the additive martingale.
//!
//! Minima of `U` over an infinite tree cannot be computed exactly. The
//! explorers below stop once `patience` consecutive levels sit above the
//! relevant threshold and prune nodes whose potential exceeds the
//! threshold by more than `slack`; both results carry a heuristic flag.

use rand::Rng;
use serde::Serialize;

use super::law::EnvironmentLaw;
use super::tree::{MarkedTree, NodeId, ROOT};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct ExploreOpts {
    pub patience: usize,
    /// Nodes with `V` above the threshold plus `slack` are not expanded.
    pub slack: f64,
    /// Maximal number of nodes created by one call.
    pub budget: usize,
}

impl Default for ExploreOpts {
    fn default() -> Self {
        ExploreOpts {
            patience: 8,
            slack: 6.0,
            budget: 2_000_000,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimaEstimate {
    pub nodes: Vec<NodeId>,
    pub min_u: f64,
    pub levels_explored: u32,
    pub heuristic: bool,
}

impl MinimaEstimate {
    pub fn contains(&self, x: NodeId) -> bool {
        self.nodes.contains(&x)
    }
}

fn check_budget(tree: &MarkedTree<'_>, start: usize, budget: usize) -> Result<()> {
    if tree.len() - start > budget {
        Err(Error::BudgetExceeded { budget })
    } else {
        Ok(())
    }
}

/// Argmin set of `U` over the explored region.
pub fn estimate_m(tree: &mut MarkedTree<'_>, margin: f64, opts: ExploreOpts) -> Result<MinimaEstimate> {
    assert!(margin > 0.0 && opts.patience >= 1);
    let start = tree.len();
    tree.materialize_children(ROOT);
    let mut best = tree.u(ROOT);
    let mut argmin = vec![ROOT];
    let mut level = vec![ROOT];
    let mut quiet = 0;
    let mut depth = 0;
    while quiet < opts.patience {
        let cut = best + margin + opts.slack;
        let mut next = Vec::new();
        for &x in &level {
            for y in tree.children(x) {
                if tree.v(y) <= cut {
                    next.push(y);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        depth += 1;
        let mut level_min = f64::INFINITY;
        for &y in &next {
            tree.materialize_children(y);
            let u = tree.u(y);
            level_min = level_min.min(u);
            if u < best {
                best = u;
                argmin.clear();
                argmin.push(y);
            } else if u == best {
                argmin.push(y);
            }
        }
        check_budget(tree, start, opts.budget)?;
        if level_min > best + margin {
            quiet += 1;
        } else {
            quiet = 0;
        }
        level = next;
    }
    Ok(MinimaEstimate {
        nodes: argmin,
        min_u: best,
        levels_explored: depth,
        heuristic: true,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KEpsEstimate {
    pub k: u32,
    /// The tree was found to be finite and `k` is its height.
    pub extinct: bool,
    pub heuristic: bool,
}

/// Number of nodes a full breadth-first probe may create while looking
/// for extinction.
const EXTINCTION_PROBE: usize = 100_000;

/// Height of the tree if it dies out within the probe budget.
fn probe_extinction(tree: &mut MarkedTree<'_>) -> Option<u32> {
    let start = tree.len();
    let mut level = vec![ROOT];
    let mut height = 0;
    loop {
        let mut next = Vec::new();
        for &x in &level {
            next.extend(tree.materialize_children(x));
        }
        if next.is_empty() {
            return Some(height);
        }
        if tree.len() - start > EXTINCTION_PROBE {
            return None;
        }
        height += 1;
        level = next;
    }
}

/// Largest level holding a node with `U < 8 / eps`.
pub fn estimate_k_eps(tree: &mut MarkedTree<'_>, eps: f64, opts: ExploreOpts) -> Result<KEpsEstimate> {
    assert!(eps > 0.0 && eps < 1.0 && opts.patience >= 1);
    if tree.law().extinction_possible() {
        if let Some(h) = probe_extinction(tree) {
            return Ok(KEpsEstimate {
                k: h,
                extinct: true,
                heuristic: false,
            });
        }
    }
    let thr = 8.0 / eps;
    let start = tree.len();
    tree.materialize_children(ROOT);
    let mut level = vec![ROOT];
    let mut k = 0;
    let mut depth = 0;
    let mut quiet = 0;
    while quiet < opts.patience {
        let mut next = Vec::new();
        for &x in &level {
            for y in tree.children(x) {
                if tree.v(y) < thr + opts.slack {
                    next.push(y);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        depth += 1;
        let mut hit = false;
        for &y in &next {
            tree.materialize_children(y);
            hit |= tree.u(y) < thr;
        }
        check_budget(tree, start, opts.budget)?;
        if hit {
            k = depth;
            quiet = 0;
        } else {
            quiet += 1;
        }
        level = next;
    }
    Ok(KEpsEstimate {
        k,
        extinct: false,
        heuristic: true,
    })
}

/// All nodes at depth `n`, materializing levels `0..n` as needed.
pub fn level(tree: &mut MarkedTree<'_>, n: u32) -> Vec<NodeId> {
    let mut lvl = vec![ROOT];
    for _ in 0..n {
        let mut next = Vec::with_capacity(lvl.len() * 2);
        for &x in &lvl {
            next.extend(tree.materialize_children(x));
        }
        lvl = next;
    }
    lvl
}

/// `W_n = sum_{|x| = n} exp(-V(x))` on a given tree.
pub fn additive_martingale_w(tree: &mut MarkedTree<'_>, n: u32) -> f64 {
    let lvl = level(tree, n);
    lvl.iter().map(|&x| (-tree.v(x)).exp()).sum()
}

/// One annealed draw of `W_n`, without building a tree.
pub fn sample_additive_martingale<R: Rng + ?Sized>(law: &EnvironmentLaw, n: u32, rng: &mut R) -> f64 {
    let mut lvl = vec![1.0_f64];
    let mut next = Vec::new();
    let mut w = Vec::new();
    for _ in 0..n {
        next.clear();
        for &e in &lvl {
            law.sample_weights(rng, &mut w);
            next.extend(w.iter().map(|a| e * a));
        }
        std::mem::swap(&mut lvl, &mut next);
    }
    lvl.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::law::{Outcome, Preset};
    use crate::rng::stream;

    fn deterministic(weights: Vec<f64>) -> EnvironmentLaw {
        EnvironmentLaw::new(Preset::Custom {
            outcomes: vec![Outcome { prob: 1.0, weights }],
        })
        .unwrap()
    }

    #[test]
    fn w_at_level_zero_is_one() {
        let law = EnvironmentLaw::log_normal_binary(1.5).unwrap();
        let mut t = MarkedTree::new(&law, 0);
        assert_eq!(additive_martingale_w(&mut t, 0), 1.0);
    }

    #[test]
    fn w_vanishes_on_extinct_tree() {
        let law = EnvironmentLaw::new(Preset::Custom {
            outcomes: vec![
                Outcome { prob: 0.2, weights: vec![] },
                Outcome { prob: 0.8, weights: vec![5.0 / 12.0; 3] },
            ],
        })
        .unwrap();
        let mut found = false;
        for seed in 0..200 {
            let mut t = MarkedTree::new(&law, seed);
            if probe_extinction(&mut t).is_some_and(|h| h < 6) {
                assert_eq!(additive_martingale_w(&mut t, 8), 0.0);
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn w_matches_between_tree_and_sampler_in_mean() {
        let law = EnvironmentLaw::log_normal_binary(3.0).unwrap();
        let n = 20_000;
        let mut rng = stream(17, 0);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let w = sample_additive_martingale(&law, 6, &mut rng);
            s += w;
            s2 += w * w;
        }
        let m = s / n as f64;
        let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
        assert!((m - 1.0).abs() < 3.5 * se, "{m} +- {se}");
        let (mut t1, mut t2) = (0.0, 0.0);
        for seed in 0..4_000u64 {
            let mut t = MarkedTree::new(&law, seed);
            let w = additive_martingale_w(&mut t, 6);
            t1 += w;
            t2 += w * w;
        }
        let m = t1 / 4000.0;
        let se = ((t2 / 4000.0 - m * m) / 4000.0).sqrt();
        assert!((m - 1.0).abs() < 3.5 * se, "{m} +- {se}");
    }

    #[test]
    fn root_is_the_minimum_when_everything_grows() {
        // A = 1/2 on a binary tree: U(x) = (|x| + 1) ln 2 - ln 2... strictly increasing in depth
        let law = deterministic(vec![0.5, 0.5]);
        let mut t = MarkedTree::new(&law, 0);
        let m = estimate_m(&mut t, 0.1, ExploreOpts { patience: 3, ..Default::default() }).unwrap();
        assert_eq!(m.nodes, vec![ROOT]);
        assert!(m.heuristic);
    }

    #[test]
    fn argmin_collects_exact_ties() {
        let law = EnvironmentLaw::new(Preset::TwoPointRegular { d: 2, a: 0.25, b: 1.5, q: 0.8 }).unwrap();
        let mut ties = 0;
        for seed in 0..200 {
            let mut t = MarkedTree::new(&law, seed);
            let m = estimate_m(&mut t, 0.5, ExploreOpts { patience: 3, ..Default::default() }).unwrap();
            let all_min: Vec<NodeId> = (0..t.len() as NodeId)
                .filter(|&x| t.is_materialized(x) && t.u(x) == m.min_u)
                .collect();
            assert_eq!(all_min, m.nodes);
            if m.nodes.len() > 1 {
                ties += 1;
            }
        }
        assert!(ties > 0);
    }

    #[test]
    fn k_eps_zero_when_threshold_is_never_met() {
        // with A = 1/2 the root has U = -ln 2 and U grows by ln 2 per level
        let law = deterministic(vec![0.5, 0.5]);
        let mut t = MarkedTree::new(&law, 0);
        let k = estimate_k_eps(&mut t, 0.999, ExploreOpts { patience: 3, ..Default::default() }).unwrap();
        // U at depth n is (n - 1) ln 2 < 8 / 0.999 up to n = 12
        assert_eq!(k.k, 12);
        // first generation far above the threshold whenever the root draws the tiny weights
        let law = EnvironmentLaw::new(Preset::Custom {
            outcomes: vec![
                Outcome { prob: 0.5, weights: vec![1e-9, 1e-9] },
                Outcome { prob: 0.5, weights: vec![1.0 - 1e-9, 1.0 - 1e-9] },
            ],
        })
        .unwrap();
        let mut seen = 0;
        for seed in 0..20 {
            let mut t = MarkedTree::new(&law, seed);
            t.materialize_children(ROOT);
            if t.child_mass(ROOT) < 1e-8 {
                let k = estimate_k_eps(&mut t, 0.999, ExploreOpts { patience: 3, ..Default::default() }).unwrap();
                assert_eq!(k.k, 0);
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn k_eps_is_monotone_in_eps() {
        let law = EnvironmentLaw::log_normal_binary(3.0).unwrap();
        for seed in 0..20 {
            let mut t = MarkedTree::new(&law, seed);
            let opts = ExploreOpts { patience: 3, slack: 1.0, budget: 5_000_000 };
            let a = estimate_k_eps(&mut t, 0.95, opts).unwrap().k;
            let b = estimate_k_eps(&mut t, 0.8, opts).unwrap().k;
            assert!(b >= a, "{a} {b}");
        }
    }

    #[test]
    fn k_eps_on_extinct_tree_is_height() {
        let law = EnvironmentLaw::new(Preset::Custom {
            outcomes: vec![
                Outcome { prob: 0.2, weights: vec![] },
                Outcome { prob: 0.8, weights: vec![5.0 / 12.0; 3] },
            ],
        })
        .unwrap();
        let mut checked = 0;
        for seed in 0..300 {
            let mut t = MarkedTree::new(&law, seed);
            if let Some(h) = probe_extinction(&mut t) {
                for eps in [0.9, 0.1, 0.01] {
                    let k = estimate_k_eps(&mut t, eps, ExploreOpts::default()).unwrap();
                    assert!(k.extinct);
                    assert_eq!(k.k, h);
                }
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn budget_is_enforced() {
        let law = deterministic(vec![0.5, 0.5]);
        let mut t = MarkedTree::new(&law, 0);
        let r = estimate_k_eps(&mut t, 0.01, ExploreOpts { patience: 3, slack: 1.0, budget: 1000 });
        assert!(matches!(r, Err(Error::BudgetExceeded { budget: 1000 })));
    }
}
