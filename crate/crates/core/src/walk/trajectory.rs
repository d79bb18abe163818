//! Favorite sites along one long walk.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::trace::WalkTrace;
use crate::env::{estimate_m, EnvironmentLaw, ExploreOpts, MarkedTree, NodeId};
use crate::error::Result;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryOpts {
    /// Margin handed to the minimum-set explorer.
    pub margin: f64,
    pub patience: usize,
    pub slack: f64,
    pub node_budget: usize,
}

impl Default for TrajectoryOpts {
    fn default() -> Self {
        TrajectoryOpts {
            margin: 1.0,
            patience: 8,
            slack: 6.0,
            node_budget: 2_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub n: u64,
    pub n_favorites: usize,
    /// `inf |x|` over the favorite set.
    pub min_depth: u32,
    /// `sup |x|` over the favorite set.
    pub max_depth: u32,
    /// Every favorite lies in the estimated minimum set.
    pub in_minima: bool,
    /// `max_{i <= n} |X_i|`.
    pub range_depth: u32,
    /// Visits to the parent of the root.
    pub parent_lt: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub minima: Vec<NodeId>,
    pub minima_depths: Vec<u32>,
}

/// Run one walk for `n_max` steps and summarize the favorite set at each
/// checkpoint. The minimum set is estimated on the same tree once the walk
/// is over; nodes never change once created, so the order does not matter.
pub fn favorite_trajectory<R: Rng + ?Sized>(
    law: &EnvironmentLaw,
    n_max: u64,
    checkpoints: &[u64],
    opts: TrajectoryOpts,
    rng: &mut R,
) -> Result<Trajectory> {
    assert!(checkpoints.windows(2).all(|w| w[0] <= w[1]));
    assert!(checkpoints.last().is_none_or(|&c| c <= n_max));
    let tree = MarkedTree::new(law, rng.random());
    let mut walk = WalkTrace::new(tree);
    let mut sets = Vec::with_capacity(checkpoints.len());
    let mut points = Vec::with_capacity(checkpoints.len());
    for &c in checkpoints {
        walk.run_steps(c - walk.time(), rng);
        let f = walk.favorite_set();
        let depths = f.iter().map(|&x| walk.tree().depth(x));
        points.push(TrajectoryPoint {
            n: c,
            n_favorites: f.len(),
            min_depth: depths.clone().min().unwrap_or(0),
            max_depth: depths.max().unwrap_or(0),
            in_minima: false,
            range_depth: walk.range_depth(),
            parent_lt: walk.parent_lt(),
        });
        sets.push(f);
    }
    walk.run_steps(n_max - walk.time(), rng);
    let m = estimate_m(
        walk.tree_mut(),
        opts.margin,
        ExploreOpts {
            patience: opts.patience,
            slack: opts.slack,
            budget: opts.node_budget,
        },
    )?;
    for (p, f) in points.iter_mut().zip(&sets) {
        p.in_minima = !f.is_empty() && f.iter().all(|&x| m.contains(x));
    }
    let minima_depths = m.nodes.iter().map(|&x| walk.tree().depth(x)).collect();
    Ok(Trajectory {
        points,
        minima: m.nodes,
        minima_depths,
    })
}
