//! `#Z_l / l` against the additive martingale on the same tree.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{additive_martingale_w, EnvironmentLaw, MarkedTree};
use crate::rng::stream;
use crate::walk::{explore, BranchingOpts, Quenched, Scope};

/// Per-tree values: `W_n` and `#Z_l` for every `l` in the grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeSeries {
    pub w: f64,
    pub z: Vec<u64>,
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LlnPoint {
    pub l: u64,
    /// Mean of `#Z_l / l`.
    pub mean: f64,
    pub se: f64,
    /// Mean of `|#Z_l / l - W_n|`.
    pub mean_abs_diff: f64,
    /// Correlation of `#Z_l / l` with `W_n` across trees.
    pub corr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LlnReport {
    pub w_depth: u32,
    pub points: Vec<LlnPoint>,
    pub n_trees: usize,
    pub truncated: usize,
}

/// One tree: `W_n` at depth `w_depth` and the optional lines at `T_l`.
pub fn tree_series<R: Rng + ?Sized>(law: &EnvironmentLaw, ls: &[u64], w_depth: u32, vertex_budget: u64, rng: &mut R) -> TreeSeries {
    let mut tree = MarkedTree::new(law, rng.random());
    let w = additive_martingale_w(&mut tree, w_depth);
    let mut truncated = false;
    let opts = BranchingOpts {
        vertex_budget,
        scope: Scope::Line,
    };
    let z = ls
        .iter()
        .map(|&l| {
            let rec = explore(&mut Quenched { tree: &mut tree }, l, opts, rng, |_, _, _, _| {});
            truncated |= rec.truncated;
            rec.z1_size
        })
        .collect();
    TreeSeries { w, z, truncated }
}

fn corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Paired series over `n` trees; tree `i` uses stream `(seed, i)`.
pub fn z_l_lln(law: &EnvironmentLaw, ls: &[u64], n: usize, w_depth: u32, vertex_budget: u64, seed: u64) -> LlnReport {
    assert!(ls.windows(2).all(|w| w[0] < w[1]) && ls.first().is_some_and(|&l| l >= 1));
    let trees: Vec<TreeSeries> = (0..n as u64)
        .into_par_iter()
        .map(|i| tree_series(law, ls, w_depth, vertex_budget, &mut stream(seed, i)))
        .collect();
    let w: Vec<f64> = trees.iter().map(|t| t.w).collect();
    let points = ls
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let r: Vec<f64> = trees.iter().map(|t| t.z[j] as f64 / l as f64).collect();
            let nf = r.len() as f64;
            let mean = r.iter().sum::<f64>() / nf;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            LlnPoint {
                l,
                mean,
                se: (var / nf).sqrt(),
                mean_abs_diff: r.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum::<f64>() / nf,
                corr: corr(&r, &w),
            }
        })
        .collect();
    LlnReport {
        w_depth,
        points,
        n_trees: n,
        truncated: trees.iter().filter(|t| t.truncated).count(),
    }
}
