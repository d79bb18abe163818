//! Lazily grown marked Galton-Watson tree.
//!
//! Each node carries a 64-bit key; its offspring are drawn from a ChaCha
//! stream seeded by that key and child `i` gets key `mix2(key, i)`. The
//! realized tree therefore depends only on `(law, seed)`, never on the
//! order in which nodes are first touched.

use std::io::{self, Write};
use std::ops::Range;

use rand::SeedableRng;

use super::law::EnvironmentLaw;
use crate::rng::{mix2, SimRng};

pub type NodeId = u32;

pub const ROOT: NodeId = 0;
/// Parent of the root.
pub const SENTINEL: NodeId = u32::MAX;

#[derive(Clone, Debug)]
pub struct MarkedTree<'a> {
    law: &'a EnvironmentLaw,
    parent: Vec<NodeId>,
    depth: Vec<u32>,
    a: Vec<f64>,
    v: Vec<f64>,
    u: Vec<f64>,
    key: Vec<u64>,
    first_child: Vec<NodeId>,
    nu: Vec<u32>,
    /// Sum of the children's `A`, valid once materialized.
    mass: Vec<f64>,
    materialized: Vec<bool>,
    scratch: Vec<f64>,
}

impl<'a> MarkedTree<'a> {
    pub fn new(law: &'a EnvironmentLaw, seed: u64) -> Self {
        let mut t = MarkedTree {
            law,
            parent: Vec::new(),
            depth: Vec::new(),
            a: Vec::new(),
            v: Vec::new(),
            u: Vec::new(),
            key: Vec::new(),
            first_child: Vec::new(),
            nu: Vec::new(),
            mass: Vec::new(),
            materialized: Vec::new(),
            scratch: Vec::with_capacity(4),
        };
        t.push(SENTINEL, 0, 1.0, 0.0, mix2(seed, 0x7265_6574));
        t
    }

    fn push(&mut self, parent: NodeId, depth: u32, a: f64, v: f64, key: u64) -> NodeId {
        let id = self.parent.len() as NodeId;
        self.parent.push(parent);
        self.depth.push(depth);
        self.a.push(a);
        self.v.push(v);
        // provisional until the children exist
        self.u.push(v);
        self.key.push(key);
        self.first_child.push(0);
        self.nu.push(0);
        self.mass.push(0.0);
        self.materialized.push(false);
        id
    }

    pub fn law(&self) -> &'a EnvironmentLaw {
        self.law
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Create the children of `x` if needed and return their handles.
    pub fn materialize_children(&mut self, x: NodeId) -> Range<NodeId> {
        let xi = x as usize;
        if !self.materialized[xi] {
            let mut rng = SimRng::seed_from_u64(self.key[xi]);
            let mut w = std::mem::take(&mut self.scratch);
            self.law.sample_weights(&mut rng, &mut w);
            let first = self.len() as NodeId;
            let (vx, kx, dx) = (self.v[xi], self.key[xi], self.depth[xi]);
            let mut mass = 0.0;
            for (i, &ai) in w.iter().enumerate() {
                self.push(x, dx + 1, ai, vx - ai.ln(), mix2(kx, i as u64));
                mass += ai;
            }
            self.first_child[xi] = first;
            self.nu[xi] = w.len() as u32;
            self.mass[xi] = mass;
            // exp(-U) = exp(-V) (1 + sum A)
            self.u[xi] = vx - mass.ln_1p();
            self.materialized[xi] = true;
            self.scratch = w;
        }
        self.children(x)
    }

    /// Children of `x`; empty if `x` is not materialized yet.
    pub fn children(&self, x: NodeId) -> Range<NodeId> {
        let f = self.first_child[x as usize];
        f..f + self.nu[x as usize]
    }

    pub fn is_materialized(&self, x: NodeId) -> bool {
        self.materialized[x as usize]
    }

    pub fn parent(&self, x: NodeId) -> NodeId {
        self.parent[x as usize]
    }

    pub fn depth(&self, x: NodeId) -> u32 {
        self.depth[x as usize]
    }

    pub fn a(&self, x: NodeId) -> f64 {
        self.a[x as usize]
    }

    pub fn v(&self, x: NodeId) -> f64 {
        self.v[x as usize]
    }

    /// Symmetrized potential; equals `V(x)` until the children of `x` exist.
    pub fn u(&self, x: NodeId) -> f64 {
        self.u[x as usize]
    }

    pub fn nu(&self, x: NodeId) -> u32 {
        self.nu[x as usize]
    }

    /// `sum_y A(y)` over the children of a materialized `x`.
    pub fn child_mass(&self, x: NodeId) -> f64 {
        self.mass[x as usize]
    }

    /// Ancestry `[root, ..., x]`.
    pub fn path_to(&self, x: NodeId) -> Vec<NodeId> {
        let mut p = Vec::with_capacity(self.depth(x) as usize + 1);
        let mut y = x;
        while y != SENTINEL {
            p.push(y);
            y = self.parent(y);
        }
        p.reverse();
        p
    }

    /// Is `x` a (non-strict) ancestor of `y`?
    pub fn is_ancestor(&self, x: NodeId, y: NodeId) -> bool {
        let dx = self.depth(x);
        let mut z = y;
        while self.depth(z) > dx {
            z = self.parent(z);
        }
        z == x
    }

    /// One line per node: `id parent depth A V U`, parent `-1` for the root.
    pub fn dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "id parent depth A V U")?;
        for x in 0..self.len() {
            let p = if self.parent[x] == SENTINEL {
                -1
            } else {
                i64::from(self.parent[x])
            };
            writeln!(
                w,
                "{x} {p} {} {:.17e} {:.17e} {:.17e}",
                self.depth[x], self.a[x], self.v[x], self.u[x]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::law::{Outcome, Preset};
    use proptest::prelude::*;

    fn grow(t: &mut MarkedTree<'_>, levels: u32) {
        let mut frontier = vec![ROOT];
        for _ in 0..levels {
            let mut next = Vec::new();
            for x in frontier {
                next.extend(t.materialize_children(x));
            }
            frontier = next;
        }
    }

    #[test]
    fn root_has_two_children_with_finite_potential() {
        let law = EnvironmentLaw::log_normal_binary(1.5).unwrap();
        let mut t = MarkedTree::new(&law, 1);
        let c = t.materialize_children(ROOT);
        assert_eq!(c.len(), 2);
        for y in c {
            assert!(t.v(y).is_finite());
            assert_eq!(t.v(y), -t.a(y).ln());
        }
    }

    #[test]
    fn materialize_is_idempotent() {
        let law = EnvironmentLaw::log_normal_binary(2.0).unwrap();
        let mut t = MarkedTree::new(&law, 2);
        let first = t.materialize_children(ROOT);
        let n = t.len();
        let again = t.materialize_children(ROOT);
        assert_eq!(first, again);
        assert_eq!(n, t.len());
    }

    #[test]
    fn root_u_identity() {
        let law = EnvironmentLaw::log_normal_binary(3.0).unwrap();
        let mut t = MarkedTree::new(&law, 3);
        let c = t.materialize_children(ROOT);
        let rhs = 1.0 + c.map(|y| (-t.v(y)).exp()).sum::<f64>();
        assert!(((-t.u(ROOT)).exp() - rhs).abs() < 1e-12 * rhs);
    }

    #[test]
    fn leaf_of_custom_law_has_no_children() {
        let law = EnvironmentLaw::new(Preset::Custom {
            outcomes: vec![
                Outcome { prob: 0.2, weights: vec![] },
                Outcome { prob: 0.8, weights: vec![5.0 / 12.0; 3] },
            ],
        })
        .unwrap();
        let mut seen_leaf = false;
        for seed in 0..64 {
            let mut t = MarkedTree::new(&law, seed);
            if t.materialize_children(ROOT).is_empty() {
                seen_leaf = true;
                assert_eq!(t.u(ROOT), 0.0);
            }
        }
        assert!(seen_leaf);
    }

    #[test]
    fn order_of_exploration_does_not_matter() {
        let law = EnvironmentLaw::log_normal_binary(1.5).unwrap();
        let mut bfs = MarkedTree::new(&law, 9);
        grow(&mut bfs, 5);
        // depth-first along the rightmost line first, then everything
        let mut dfs = MarkedTree::new(&law, 9);
        let mut x = ROOT;
        for _ in 0..5 {
            x = dfs.materialize_children(x).last().unwrap();
        }
        let target_v = dfs.v(x);
        grow(&mut dfs, 5);
        let rightmost = (0..5).fold(ROOT, |x, _| bfs.children(x).last().unwrap());
        assert_eq!(bfs.v(rightmost), target_v);
        let mut a: Vec<f64> = (0..bfs.len() as u32).map(|x| bfs.v(x)).collect();
        let mut b: Vec<f64> = (0..dfs.len() as u32).map(|x| dfs.v(x)).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn dump_has_header_and_one_line_per_node() {
        let law = EnvironmentLaw::log_normal_binary(2.0).unwrap();
        let mut t = MarkedTree::new(&law, 4);
        grow(&mut t, 2);
        let mut out = Vec::new();
        t.dump(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s.lines().count(), 1 + t.len());
        assert!(s.lines().nth(1).unwrap().starts_with("0 -1 0 "));
    }

    proptest! {
        #[test]
        fn potentials_are_consistent(seed in any::<u64>(), kappa in 1.1f64..6.0, levels in 1u32..7) {
            let law = EnvironmentLaw::log_normal_binary(kappa).unwrap();
            let mut t = MarkedTree::new(&law, seed);
            grow(&mut t, levels);
            for x in 1..t.len() as NodeId {
                let p = t.parent(x);
                prop_assert!((t.v(x) - t.v(p) + t.a(x).ln()).abs() <= 1e-12 * (1.0 + t.v(x).abs()));
                prop_assert_eq!(t.depth(x), t.depth(p) + 1);
            }
            for x in 0..t.len() as NodeId {
                if t.is_materialized(x) {
                    let s: f64 = (-t.v(x)).exp() + t.children(x).map(|y| (-t.v(y)).exp()).sum::<f64>();
                    let e = (-t.u(x)).exp();
                    prop_assert!((e - s).abs() <= 1e-12 * s);
                }
            }
        }

        #[test]
        fn same_seed_same_tree(seed in any::<u64>()) {
            let law = EnvironmentLaw::log_normal_binary(1.5).unwrap();
            let mut a = MarkedTree::new(&law, seed);
            let mut b = MarkedTree::new(&law, seed);
            grow(&mut a, 4);
            grow(&mut b, 4);
            let mut da = Vec::new();
            let mut db = Vec::new();
            a.dump(&mut da).unwrap();
            b.dump(&mut db).unwrap();
            prop_assert_eq!(da, db);
        }
    }
}
