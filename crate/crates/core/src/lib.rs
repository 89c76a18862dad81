//! Deterministic simulation of federated learning under heterogeneous client
//! participation, with FedAvg, FedVARP and FedStale aggregation.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! command-line tool and the experiment runners use.
//!
//! ```
//! use fedstale::{aggregation::Rule, engine, AggregatorConfig, LocalConfig, ParamVector};
//! use fedstale::{ParticipationProfile, QuadraticObjective, TrainConfig};
//!
//! let obj = QuadraticObjective::two_client_example(0.0);
//! let cfg = TrainConfig {
//!     rounds: 200,
//!     server_lr: 1.0,
//!     local: LocalConfig { local_steps: 5, client_lr: 0.01, batch_size: 1 },
//!     aggregator: AggregatorConfig::new(Rule::FedStale, 0.5).unwrap(),
//!     profile: ParticipationProfile::new(vec![1.0, 0.5]).unwrap(),
//!     master_seed: 7,
//!     participation_seed: None,
//!     init_point: ParamVector::from_f64(&[-10.0, -10.0]).unwrap(),
//!     weight_cap: None,
//!     threads: 1,
//!     record_trajectory: false,
//!     record_wall_time: false,
//! };
//! let result = engine::run(&cfg, &obj).unwrap();
//! assert!(result.final_loss < result.records[0].global_loss);
//! ```

pub mod aggregation;
pub mod config;
pub mod engine;
pub mod error;
mod linalg;
pub mod local_solver;
pub mod objectives;
pub mod participation;
pub mod rng;
pub mod scalar;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::{Param, Scalar};

pub type ParamVector = Param<f64>;
pub type ClientUpdate = local_solver::ClientUpdate<f64>;
pub type LocalConfig = local_solver::LocalConfig<f64>;
pub type MemoryBank = aggregation::MemoryBank<f64>;
pub type AggregatorConfig = aggregation::AggregatorConfig<f64>;
pub type GlobalUpdate = aggregation::GlobalUpdate<f64>;
pub type ParticipationProfile = participation::ParticipationProfile<f64>;
pub type ParticipationStats = participation::ParticipationStats<f64>;
pub type ProbabilityEstimator = participation::ProbabilityEstimator<f64>;
pub type QuadraticObjective = objectives::QuadraticObjective<f64>;
pub type SoftmaxObjective = objectives::SoftmaxObjective<f64>;
pub type TrainConfig = engine::TrainConfig<f64>;
pub type RoundRecord = engine::RoundRecord<f64>;
pub type RunResult = engine::RunResult<f64>;

/// Version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
