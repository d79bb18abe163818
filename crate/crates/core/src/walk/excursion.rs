use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::branching::{annealed_excursion, BranchingOpts, Scope};
use super::record::{ExcursionRecord, LineRecord};
use super::trace::WalkTrace;
use crate::env::{EnvironmentLaw, MarkedTree};
use crate::error::{Error, Result};
use crate::rng::stream;

pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Engine {
    /// Step-by-step walk on a lazily grown tree.
    Walk { step_budget: u64 },
    /// Branching construction of the edge local times.
    Branching { vertex_budget: u64 },
}

impl Default for Engine {
    fn default() -> Self {
        Engine::Branching {
            vertex_budget: BranchingOpts::default().vertex_budget,
        }
    }
}

/// Fresh tree and walk run to `T_k`.
pub fn simulate_returns<R: Rng + ?Sized>(law: &EnvironmentLaw, k: u64, engine: Engine, rng: &mut R) -> Result<ExcursionRecord> {
    match engine {
        Engine::Walk { step_budget } => {
            let tree = MarkedTree::new(law, rng.random());
            let mut w = WalkTrace::new(tree);
            match w.run_until_return(k, step_budget, rng) {
                Ok(()) => w.record(),
                Err(Error::StepBudgetExceeded { budget, .. }) => {
                    let mut partial = w.partial_record();
                    partial.truncated = true;
                    Err(Error::StepBudgetExceeded {
                        budget,
                        partial: Some(Box::new(partial)),
                    })
                }
                Err(e) => Err(e),
            }
        }
        Engine::Branching { vertex_budget } => {
            let rec = annealed_excursion(
                law,
                k,
                BranchingOpts {
                    vertex_budget,
                    scope: Scope::Full,
                },
                rng,
            );
            if rec.truncated {
                Err(Error::StepBudgetExceeded {
                    budget: vertex_budget,
                    partial: Some(Box::new(rec)),
                })
            } else {
                Ok(rec)
            }
        }
    }
}

/// Fresh tree and walk run to the first return.
pub fn simulate_excursion<R: Rng + ?Sized>(law: &EnvironmentLaw, engine: Engine, rng: &mut R) -> Result<ExcursionRecord> {
    simulate_returns(law, 1, engine, rng)
}

/// `n` independent records at `T_k`; replica `i` uses stream `(seed, i)`.
///
/// Budget overruns keep their partial record with `truncated` set.
pub fn excursion_batch(law: &EnvironmentLaw, k: u64, engine: Engine, n: u64, seed: u64) -> Vec<ExcursionRecord> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            match simulate_returns(law, k, engine, &mut rng) {
                Ok(r) => r,
                Err(Error::StepBudgetExceeded { partial: Some(p), .. }) => *p,
                Err(e) => panic!("unexpected failure in replica {i}: {e}"),
            }
        })
        .collect()
}

/// Annealed records of the part of the excursion up to the optional line.
pub fn line_batch(law: &EnvironmentLaw, k: u64, vertex_budget: u64, n: u64, seed: u64) -> Vec<LineRecord> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            annealed_excursion(
                law,
                k,
                BranchingOpts {
                    vertex_budget,
                    scope: Scope::Line,
                },
                &mut rng,
            )
            .line()
        })
        .collect()
}
