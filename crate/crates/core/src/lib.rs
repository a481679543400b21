//! Sub-network Laplace approximations for small feed-forward networks.
//!
//! The crate trains MLPs ([`net`]), assembles Gauss-Newton Laplace posteriors
//! from per-sample output gradients ([`laplace`]), selects parameter subsets
//! with gradient-driven and greedy Schur-complement strategies plus the usual
//! baselines ([`select`]), and evaluates the resulting surrogates through
//! idealized predictive-variance theory checks ([`theory`]), Wasserstein-2 /
//! coverage sweeps ([`metrics`]), and a wheel-bandit Thompson-sampling loop
//! ([`wheel`]). Dataset ingestion and seeded synthetic generators live in
//! [`data`].
//!
//! All randomness flows through explicit `u64` seeds (see [`rng`]); every
//! public entry point is deterministic given its inputs.

pub mod data;
pub mod error;
pub mod laplace;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod select;
pub mod theory;
pub mod wheel;

pub use error::{Error, Result};
pub use laplace::{LaplaceSystem, Likelihood, PredictiveVariance, SubsetPosterior};
pub use net::{Activation, LayerSpec, Loss, LrSchedule, MlpModel, Optimizer, TrainConfig};
pub use select::{GradientSummary, PoolPolicy, SelectionMethod, SubsetSelection};
pub use theory::{IpvInstance, IpvReport};
pub use wheel::{AgentConfig, BanditTrace, PosteriorKind, WheelConfig};
