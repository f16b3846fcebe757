//! Budget-constrained model selection over heterogeneous per-modality pools.
//!
//! An input-conditioned agent looks at a probe sequence and picks one (or
//! top-k) model per modality. Training is one-step actor-critic with a
//! Lagrangian multiplier that tracks a normalized FLOP budget. A synthetic
//! world stands in for frozen recognition backbones so every part of the
//! pipeline can be checked against closed forms or brute force.
//!
//! Module map:
//! - [`pool`]: model pools and the cost model over joint actions.
//! - [`simworld`]: deterministic identities, sequences and a similarity law.
//! - [`agent`]: encoder, attention pooling, policy and value heads, sampling.
//! - [`training`]: reward, budget controller, losses, gradients, Adam, loop.
//! - [`eval`]: Rank-1, mAP, GFLOPs accounting, fixed baselines, oracles.

pub mod agent;
pub mod error;
pub mod eval;
pub mod pool;
pub mod simworld;
pub mod training;

pub use error::{Error, Result};
