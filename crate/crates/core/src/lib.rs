//! Interactive recommendation with an actor-critic agent.
//!
//! The actor maps a user's recent positive items to a continuous
//! proto-action, a random-projection forest retrieves the nearest items,
//! and the final list keeps the candidates that differ most from the rest.
//! A matrix factorization model supplies the item embeddings and doubles as
//! the simulated user during training and evaluation.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the width for the common cases.

pub mod agent;
pub mod ann;
pub mod data;
pub mod diversify;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod persist;
pub mod pipeline;
pub mod pmf;
pub mod scalar;
pub mod state;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default working precision.
pub type Real = f64;

pub type EmbeddingModel = pmf::EmbeddingModel<f64>;
pub type Forest = ann::Forest<f64>;
pub type CandidateSet = diversify::CandidateSet<f64>;
pub type RecommendationList = diversify::RecommendationList<f64>;
pub type Mlp = nn::Mlp<f64>;
pub type AgentNets = agent::AgentNets<f64>;
pub type Transition = agent::Transition<f64>;
pub type StepOutcome = env::StepOutcome<f64>;
pub type ToyWorld = synthetic::ToyWorld<f64>;

pub type EmbeddingModel32 = pmf::EmbeddingModel<f32>;
pub type Forest32 = ann::Forest<f32>;
pub type CandidateSet32 = diversify::CandidateSet<f32>;
pub type RecommendationList32 = diversify::RecommendationList<f32>;
pub type Mlp32 = nn::Mlp<f32>;
pub type AgentNets32 = agent::AgentNets<f32>;
pub type Transition32 = agent::Transition<f32>;
pub type StepOutcome32 = env::StepOutcome<f32>;
pub type ToyWorld32 = synthetic::ToyWorld<f32>;
