//! Safe reinforcement-learning energy management for a multi-energy plant.
//!
//! The crate is organised bottom-up:
//!
//! - [`plant`] and [`profile`]: the ground-truth plant and its exogenous inputs.
//! - [`env`]: the MDP wrapper (observations, action decoding, reward, episodes).
//! - [`nominal`]: a priori polynomial asset models and their accuracy metrics.
//! - [`mlp`] and [`surrogate`]: from-scratch rectifier networks used as learned
//!   residual constraint models and as TD3 function approximators.
//! - [`qp`] and [`safety`]: the projection solver and the shielding methods.
//! - [`fallback`]: the rule-based safe fallback policy.
//! - [`agent`]: TD3, replay buffer and the random baseline.

pub mod action;
pub mod agent;
pub mod env;
pub mod error;
pub mod fallback;
pub mod mlp;
pub mod nominal;
pub mod plant;
pub mod profile;
pub mod qp;
pub mod safety;
pub mod surrogate;
pub mod textfmt;

pub use action::{Action, PhysicalAction, ACTION_DIM};
pub use error::{Error, Result};
pub use plant::{Asset, AssetSpec, NoiseConfig, Plant, PlantConfig, PlantState, StepOutcome};
pub use profile::{ExogenousProfile, ProfileKind};
