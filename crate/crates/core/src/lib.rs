//! Planning stack for interlocking-assembly puzzles.
//!
//! - [`taskgen`] builds voxel boards, their dependency graphs and starting
//!   configurations.
//! - [`env`] is the symbolic environment with four manipulation primitives.
//! - [`expert`] is the privileged oracle policy.
//! - [`policy`] defines proposal/reflection policies, prompt rendering and a
//!   client for external policy processes.
//! - [`imagine`] holds dynamics models used to imagine futures.
//! - [`reflect`] runs imagine-then-reflect planning for one step.
//! - [`mcts`] is the tree-search baseline.
//! - [`datagen`] collects interactive training data and transition datasets.
//! - [`harness`] runs evaluations, benchmarks and file I/O for the CLI.

pub mod datagen;
pub mod env;
pub mod expert;
pub mod harness;
pub mod fixtures;
pub mod imagine;
pub mod mcts;
pub mod policy;
pub mod reflect;
pub mod rng;
pub mod taskgen;

pub use env::{Action, Env, EnvConfig, Observation, Outcome, PieceStatus, TaskStatus, Verb, WorldState};
pub use taskgen::{GenParams, PieceId, TaskInstance};
