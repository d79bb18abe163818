//! Exact excursion sampler through the tree of edge local times.
//!
//! Given `L_bar(x) = l`, each of the `l` arrivals at `x` from its parent is
//! followed by a geometric number of trips into the children before the
//! walk steps back up, each trip going to child `i` with probability
//! `A_i / sum A`. The edge local times at `T_k` are therefore a multi-type
//! branching process started from `L_bar(root) = k`, and the whole
//! excursion can be sampled in time proportional to its range instead of
//! its length.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};

use super::record::ExcursionRecord;
use crate::env::{EnvironmentLaw, MarkedTree, NodeId, ROOT};

/// Source of offspring weights.
pub trait Environment {
    type Node: Copy;
    fn root(&mut self) -> Self::Node;
    fn offspring<R: Rng + ?Sized>(&mut self, x: Self::Node, rng: &mut R, out: &mut Vec<(Self::Node, f64)>);
}

/// Fresh weights at every vertex.
pub struct Annealed<'a> {
    law: &'a EnvironmentLaw,
    buf: Vec<f64>,
}

impl<'a> Annealed<'a> {
    pub fn new(law: &'a EnvironmentLaw) -> Self {
        Annealed { law, buf: Vec::with_capacity(4) }
    }
}

impl Environment for Annealed<'_> {
    type Node = ();

    fn root(&mut self) {}

    fn offspring<R: Rng + ?Sized>(&mut self, _: (), rng: &mut R, out: &mut Vec<((), f64)>) {
        self.law.sample_weights(rng, &mut self.buf);
        out.clear();
        out.extend(self.buf.iter().map(|&a| ((), a)));
    }
}

/// Weights read from a fixed tree.
pub struct Quenched<'t, 'a> {
    pub tree: &'t mut MarkedTree<'a>,
}

impl Environment for Quenched<'_, '_> {
    type Node = NodeId;

    fn root(&mut self) -> NodeId {
        ROOT
    }

    fn offspring<R: Rng + ?Sized>(&mut self, x: NodeId, _: &mut R, out: &mut Vec<(NodeId, f64)>) {
        out.clear();
        for y in self.tree.materialize_children(x) {
            out.push((y, self.tree.a(y)));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// The whole excursion.
    Full,
    /// Stop at the optional line: vertices strictly below it are not sampled.
    Line,
}

#[derive(Clone, Copy, Debug)]
pub struct BranchingOpts {
    /// Maximal number of vertices expanded.
    pub vertex_budget: u64,
    pub scope: Scope,
}

impl Default for BranchingOpts {
    fn default() -> Self {
        BranchingOpts {
            vertex_budget: 20_000_000,
            scope: Scope::Full,
        }
    }
}

/// Sum of `l` i.i.d. geometric variables with `P(G >= n) = (m / (1 + m))^n`.
pub fn neg_binomial<R: Rng + ?Sized>(l: u64, m: f64, rng: &mut R) -> u64 {
    if l == 0 || m <= 0.0 {
        return 0;
    }
    if l <= 8 {
        // log(m / (1 + m)), computed without cancellation for large m
        let lp = -(1.0 / m).ln_1p();
        let mut s = 0u64;
        for _ in 0..l {
            let u = 1.0 - rng.random::<f64>();
            s += (u.ln() / lp).floor() as u64;
        }
        return s;
    }
    let lambda = Gamma::new(l as f64, m).expect("positive shape and scale").sample(rng);
    poisson(lambda, rng)
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        0
    } else if lambda > 1e15 {
        let g: f64 = rng.sample(rand_distr::StandardNormal);
        (lambda + lambda.sqrt() * g).round().max(0.0) as u64
    } else {
        Poisson::new(lambda).expect("finite rate").sample(rng) as u64
    }
}

/// Split `n` trips among children proportionally to their weights.
pub(crate) fn split<R: Rng + ?Sized, N: Copy>(n: u64, kids: &[(N, f64)], mass: f64, rng: &mut R, out: &mut Vec<u64>) {
    out.clear();
    let mut left = n;
    let mut rest = mass;
    for (i, &(_, a)) in kids.iter().enumerate() {
        if i + 1 == kids.len() || left == 0 {
            out.push(left);
            left = 0;
            continue;
        }
        let p = (a / rest).clamp(0.0, 1.0);
        let c = if left <= 16 {
            (0..left).filter(|_| rng.random::<f64>() < p).count() as u64
        } else {
            Binomial::new(left, p).expect("valid binomial").sample(rng)
        };
        out.push(c);
        left -= c;
        rest -= a;
    }
    out.resize(kids.len(), 0);
}

struct Item<N> {
    node: N,
    l: u64,
    depth: u32,
    /// All strict ancestors other than the root have `L_bar >= 2`.
    cand: bool,
}

/// Sample the edge local times at `T_k`.
///
/// `visit(node, depth, L_bar, L)` is called on every expanded vertex.
pub fn explore<E, R, F>(env: &mut E, k: u64, opts: BranchingOpts, rng: &mut R, mut visit: F) -> ExcursionRecord
where
    E: Environment,
    R: Rng + ?Sized,
    F: FnMut(E::Node, u32, u64, u64),
{
    assert!(k >= 1);
    let mut rec = ExcursionRecord {
        k,
        max_edge_lt: k,
        max_edge_lt_below_z1: k,
        ..ExcursionRecord::default()
    };
    let mut edge_sum = 0u64;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(Item {
        node: env.root(),
        l: k,
        depth: 0,
        cand: true,
    });
    let mut kids = Vec::new();
    let mut counts = Vec::new();
    let mut expanded = 0u64;
    let mut z_lo = u32::MAX;
    while let Some(it) = queue.pop_front() {
        if expanded == opts.vertex_budget {
            rec.truncated = true;
            break;
        }
        expanded += 1;
        let is_root = it.depth == 0;
        env.offspring(it.node, rng, &mut kids);
        let mass: f64 = kids.iter().map(|k| k.1).sum();
        let eta = neg_binomial(it.l, mass, rng);
        let site = it.l + eta;
        rec.max_site_lt = rec.max_site_lt.max(site);
        visit(it.node, it.depth, it.l, site);
        if eta == 0 {
            continue;
        }
        split(eta, &kids, mass, rng, &mut counts);
        let child_cand = is_root || (it.cand && it.l >= 2);
        let depth = it.depth + 1;
        for (&(node, _), &c) in kids.iter().zip(&counts) {
            if c == 0 {
                continue;
            }
            edge_sum += c;
            rec.max_edge_lt = rec.max_edge_lt.max(c);
            rec.range_depth = rec.range_depth.max(depth);
            if child_cand {
                rec.max_edge_lt_below_z1 = rec.max_edge_lt_below_z1.max(c);
                if c == 1 {
                    rec.z1_size += 1;
                    z_lo = z_lo.min(depth);
                    rec.z1_max_depth = rec.z1_max_depth.max(depth);
                }
            }
            if opts.scope == Scope::Line && !(child_cand && c >= 2) {
                continue;
            }
            queue.push_back(Item {
                node,
                l: c,
                depth,
                cand: child_cand,
            });
        }
    }
    if rec.z1_size > 0 {
        rec.z1_min_depth = z_lo;
    }
    rec.duration = 2 * k + 2 * edge_sum;
    rec
}

/// Annealed excursion record at `T_k`.
pub fn annealed_excursion<R: Rng + ?Sized>(law: &EnvironmentLaw, k: u64, opts: BranchingOpts, rng: &mut R) -> ExcursionRecord {
    explore(&mut Annealed::new(law), k, opts, rng, |_, _, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn neg_binomial_mean_and_pgf() {
        let mut rng = stream(1, 0);
        for (l, m) in [(1u64, 0.7), (3, 2.5), (40, 1.3)] {
            let n = 200_000;
            let (mut s, mut s2, mut g) = (0.0, 0.0, 0.0);
            for _ in 0..n {
                let x = neg_binomial(l, m, &mut rng) as f64;
                s += x;
                s2 += x * x;
                g += 0.5f64.powf(x);
            }
            let mean = s / n as f64;
            let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - l as f64 * m).abs() < 4.0 * se, "{l} {m}: {mean}");
            let pgf = (1.0 + 0.5 * m).powf(-(l as f64));
            assert!((g / n as f64 - pgf).abs() < 4.0 * (pgf / n as f64).sqrt());
        }
    }

    #[test]
    fn split_conserves_total() {
        let mut rng = stream(2, 0);
        let kids = [((), 0.2), ((), 0.5), ((), 0.3)];
        let mut out = Vec::new();
        for n in [0u64, 1, 5, 100, 10_000] {
            split(n, &kids, 1.0, &mut rng, &mut out);
            assert_eq!(out.iter().sum::<u64>(), n);
            assert_eq!(out.len(), 3);
        }
    }
}
