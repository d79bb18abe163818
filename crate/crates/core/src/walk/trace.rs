//! Step-by-step quenched walk with site and edge local times.

use rand::Rng;
use serde::Serialize;

use super::record::ExcursionRecord;
use crate::env::{MarkedTree, NodeId, ROOT, SENTINEL};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReturnSnapshot {
    pub k: u64,
    pub time: u64,
    pub max_site_lt: u32,
    pub n_favorites: usize,
    pub range_depth: u32,
}

#[derive(Clone, Debug)]
pub struct WalkTrace<'a> {
    tree: MarkedTree<'a>,
    pos: NodeId,
    time: u64,
    site_lt: Vec<u32>,
    edge_lt: Vec<u32>,
    parent_lt: u64,
    returns: u64,
    just_returned: bool,
    max_site: u32,
    favorites: Vec<NodeId>,
    range_depth: u32,
    snapshots: Option<Vec<ReturnSnapshot>>,
}

impl<'a> WalkTrace<'a> {
    /// Walk started at the root at time 0 with no visit counted yet.
    pub fn new(tree: MarkedTree<'a>) -> Self {
        let n = tree.len();
        WalkTrace {
            tree,
            pos: ROOT,
            time: 0,
            site_lt: vec![0; n],
            edge_lt: vec![0; n],
            parent_lt: 0,
            returns: 0,
            just_returned: false,
            max_site: 0,
            favorites: Vec::new(),
            range_depth: 0,
            snapshots: None,
        }
    }

    pub fn with_snapshots(mut self) -> Self {
        self.snapshots = Some(Vec::new());
        self
    }

    pub fn tree(&self) -> &MarkedTree<'a> {
        &self.tree
    }

    pub fn tree_mut(&mut self) -> &mut MarkedTree<'a> {
        &mut self.tree
    }

    pub fn position(&self) -> NodeId {
        self.pos
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn returns(&self) -> u64 {
        self.returns
    }

    pub fn parent_lt(&self) -> u64 {
        self.parent_lt
    }

    pub fn range_depth(&self) -> u32 {
        self.range_depth
    }

    pub fn site_lt(&self, x: NodeId) -> u32 {
        self.site_lt.get(x as usize).copied().unwrap_or(0)
    }

    pub fn edge_lt(&self, x: NodeId) -> u32 {
        self.edge_lt.get(x as usize).copied().unwrap_or(0)
    }

    pub fn snapshots(&self) -> &[ReturnSnapshot] {
        self.snapshots.as_deref().unwrap_or(&[])
    }

    pub fn max_site_lt(&self) -> u32 {
        self.max_site
    }

    /// Is the walk sitting at `T_k` for `k = returns`?
    pub fn at_return(&self) -> bool {
        self.just_returned
    }

    fn sync_len(&mut self) {
        let n = self.tree.len();
        if self.site_lt.len() < n {
            self.site_lt.resize(n, 0);
            self.edge_lt.resize(n, 0);
        }
    }

    /// One transition: weight 1 towards the parent, `A(y)` towards child `y`.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let next = if self.pos == SENTINEL {
            self.edge_lt[ROOT as usize] += 1;
            self.returns += 1;
            self.just_returned = true;
            ROOT
        } else {
            self.just_returned = false;
            let x = self.pos;
            let kids = self.tree.materialize_children(x);
            self.sync_len();
            let mut u = rng.random::<f64>() * (1.0 + self.tree.child_mass(x));
            if u < 1.0 || kids.is_empty() {
                self.tree.parent(x)
            } else {
                u -= 1.0;
                let mut pick = kids.end - 1;
                for y in kids {
                    let a = self.tree.a(y);
                    if u < a {
                        pick = y;
                        break;
                    }
                    u -= a;
                }
                self.edge_lt[pick as usize] += 1;
                pick
            }
        };
        self.time += 1;
        if next == SENTINEL {
            self.parent_lt += 1;
        } else {
            let c = &mut self.site_lt[next as usize];
            *c += 1;
            let c = *c;
            if c > self.max_site {
                self.max_site = c;
                self.favorites.clear();
                self.favorites.push(next);
            } else if c == self.max_site {
                self.favorites.push(next);
            }
            self.range_depth = self.range_depth.max(self.tree.depth(next));
        }
        self.pos = next;
        if self.just_returned {
            if let Some(s) = self.snapshots.as_mut() {
                s.push(ReturnSnapshot {
                    k: self.returns,
                    time: self.time,
                    max_site_lt: self.max_site,
                    n_favorites: self.favorites.len(),
                    range_depth: self.range_depth,
                });
            }
        }
    }

    /// Advance until `returns == k_target`, taking at most `budget` steps.
    pub fn run_until_return<R: Rng + ?Sized>(&mut self, k_target: u64, budget: u64, rng: &mut R) -> Result<()> {
        assert!(k_target > self.returns, "k_target must exceed the current return count");
        let mut steps = 0;
        while self.returns < k_target {
            if steps == budget {
                return Err(Error::StepBudgetExceeded { budget, partial: None });
            }
            self.step(rng);
            steps += 1;
        }
        Ok(())
    }

    /// Advance exactly `n` steps.
    pub fn run_steps<R: Rng + ?Sized>(&mut self, n: u64, rng: &mut R) {
        for _ in 0..n {
            self.step(rng);
        }
    }

    /// Vertices with maximal site local time, in increasing handle order.
    pub fn favorite_set(&self) -> Vec<NodeId> {
        let mut f = self.favorites.clone();
        f.sort_unstable();
        f
    }

    /// Visited vertices with edge local time one whose strict ancestors other
    /// than the root all have edge local time at least two.
    pub fn extract_z_k(&self) -> Result<Vec<NodeId>> {
        if !self.just_returned {
            return Err(Error::NotAtReturnTime);
        }
        Ok(self.line())
    }

    fn line(&self) -> Vec<NodeId> {
        let mut z = Vec::new();
        let mut stack = vec![ROOT];
        while let Some(x) = stack.pop() {
            for y in self.tree.children(x) {
                match self.edge_lt(y) {
                    0 => {}
                    1 => z.push(y),
                    _ => stack.push(y),
                }
            }
        }
        z.sort_unstable();
        z
    }

    /// Summary of the walk at the current return time.
    pub fn record(&self) -> Result<ExcursionRecord> {
        if !self.just_returned {
            return Err(Error::NotAtReturnTime);
        }
        Ok(self.partial_record())
    }

    /// Same fields as [`WalkTrace::record`] evaluated at the current time,
    /// whether or not it is a return time.
    pub fn partial_record(&self) -> ExcursionRecord {
        let z = self.line();
        let mut rec = ExcursionRecord {
            k: self.returns,
            duration: self.time,
            range_depth: self.range_depth,
            max_site_lt: u64::from(self.max_site),
            ..ExcursionRecord::default()
        };
        for x in 0..self.tree.len() {
            rec.max_edge_lt = rec.max_edge_lt.max(u64::from(self.edge_lt[x]));
        }
        rec.z1_size = z.len() as u64;
        if let (Some(lo), Some(hi)) = (
            z.iter().map(|&x| self.tree.depth(x)).min(),
            z.iter().map(|&x| self.tree.depth(x)).max(),
        ) {
            rec.z1_min_depth = lo;
            rec.z1_max_depth = hi;
        }
        // vertices not strictly below the line
        let mut below = u64::from(self.edge_lt(ROOT));
        let mut stack = vec![ROOT];
        while let Some(x) = stack.pop() {
            for y in self.tree.children(x) {
                let l = self.edge_lt(y);
                if l >= 1 {
                    below = below.max(u64::from(l));
                }
                if l >= 2 {
                    stack.push(y);
                }
            }
        }
        rec.max_edge_lt_below_z1 = below;
        rec
    }

    /// `L(x) = L_bar(x) + sum over children of L_bar(y)` at the current time.
    pub fn site_edge_defect(&self) -> Option<NodeId> {
        (0..self.tree.len() as NodeId).find(|&x| {
            let s: u64 = self.tree.children(x).map(|y| u64::from(self.edge_lt(y))).sum();
            u64::from(self.site_lt(x)) != u64::from(self.edge_lt(x)) + s
        })
    }

    /// Build a trace with prescribed local times; used to exercise the set queries.
    #[doc(hidden)]
    pub fn with_counts(tree: MarkedTree<'a>, site: &[(NodeId, u32)], edge: &[(NodeId, u32)], at_return: bool) -> Self {
        let mut t = WalkTrace::new(tree);
        for &(x, c) in site {
            t.site_lt[x as usize] = c;
            if c > t.max_site {
                t.max_site = c;
                t.favorites = vec![x];
            } else if c == t.max_site {
                t.favorites.push(x);
            }
        }
        for &(x, c) in edge {
            t.edge_lt[x as usize] = c;
        }
        t.just_returned = at_return;
        t.returns = u64::from(t.edge_lt(ROOT));
        t
    }
}
