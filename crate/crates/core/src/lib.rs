//! Multi-task vehicle routing with a step-wise context / node re-embedding
//! policy.
//!
//! * [`instances`] — task variants, synthetic instances, file formats
//! * [`env`] — the routing MDP, masks, rewards and the solution checker
//! * [`encoder`], [`rgcr`], [`tsnr`], [`decoder`] — policy network pieces
//! * [`policy`] — the decoding loop tying the network to the environment
//! * [`trainer`] — REINFORCE with a shared multi-start baseline
//! * [`eval`] — exact small-instance oracle, gap reports, update-rate sweeps

pub mod decoder;
pub mod encoder;
pub mod env;
pub mod error;
pub mod eval;
pub mod instances;
pub mod nn;
pub mod policy;
pub mod rgcr;
pub mod trainer;
pub mod tsnr;

pub use error::{Error, Result};
