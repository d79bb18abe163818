//! The biased walk: step-by-step traces, the branching construction of
//! edge local times, excursion records and favorite-site trajectories.

pub mod branching;
pub mod excursion;
pub mod record;
pub mod trace;
pub mod trajectory;

pub use branching::{annealed_excursion, explore, Annealed, BranchingOpts, Environment, Quenched, Scope};
pub use excursion::{excursion_batch, line_batch, simulate_excursion, simulate_returns, Engine, DEFAULT_STEP_BUDGET};
pub use record::{ExcursionRecord, LineRecord};
pub use trace::{ReturnSnapshot, WalkTrace};
pub use trajectory::{favorite_trajectory, Trajectory, TrajectoryOpts, TrajectoryPoint};
