//! Multi-UAV mobile edge computing simulator and multi-agent actor-critic trainer.
//!
//! UAVs hover at a fixed altitude over a square area and act as flying edge
//! servers. In every time slot each ground UE produces one task and either runs
//! it locally or offloads it to the UAV that costs it the least energy. One
//! agent per UAV learns a flying policy that trades off UE energy against two
//! Jain fairness indices (UAV load and UE service), trained with centralized
//! critics, decentralized actors and proportional prioritized replay.
//!
//! Module map:
//! - [`config`]: simulation and training parameters, config file IO.
//! - [`env`]: UAV kinematics, tasks, channel, timing, energy and the slot step.
//! - [`offload`]: least-energy placement rule and allocated UAV CPU.
//! - [`metrics`]: Jain fairness and the per-agent reward.
//! - [`neural`]: dense networks, reverse-mode gradients, Adam, soft updates.
//! - [`replay`]: sum-tree backed prioritized experience replay.
//! - [`maddpg`]: agents, TD-error, critic/actor updates, training step.
//! - [`baselines`]: RANDOM and CIRCLE trajectory policies.
//! - [`harness`]: training loop, evaluation, baseline runs, exports, checkpoints.

pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod maddpg;
pub mod metrics;
pub mod neural;
pub mod offload;
pub mod replay;

pub use config::SimConfig;
pub use error::{Error, Result};

/// Deterministic RNG used everywhere in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a seed.
pub fn seeded_rng(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}
