//! System-level simulator for indoor small-cell transmit power control.
//!
//! The crate is organised around the pipeline a power-control experiment
//! walks through:
//!
//! - [`geometry`]: room layouts, interior wall panels, line-of-sight tests
//!   and billiard-model user mobility.
//! - [`radio`]: link-budget physics (path loss, RSRP, SINR, CQI, data rate)
//!   and RSRP-max cell attachment.
//! - [`env`]: the decision-process wrapper tying mobility and radio into
//!   an episodic environment with a quantile-throughput reward.
//! - [`nn`]: a small fully-connected Q-network with hand-rolled
//!   backpropagation, Adam updates and checkpoint (de)serialisation.
//! - [`agent`]: the DQN training loop (replay buffer, epsilon-greedy
//!   exploration, target network).
//! - [`federation`]: FedAvg orchestration across per-room clients plus
//!   adaptation of a global model to a new room.
//! - [`baselines`]: random and per-step exhaustive-search comparators.

// Validation deliberately writes `!(x > 0.0)` so NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod baselines;
pub mod env;
pub mod federation;
pub mod geometry;
pub mod nn;
pub mod radio;
pub mod units;

/// Derives a child RNG seed from a base seed and a textual label, so that
/// independent streams (per UE, per episode, per client) never overlap.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}
