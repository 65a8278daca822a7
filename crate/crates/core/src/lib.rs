//! Multiplicative fusion of a classical potential-field controller with a
//! stochastic reinforcement-learning policy, plus the navigation simulator,
//! trainer and evaluation tooling needed to exercise it end to end.

pub mod config;
pub mod deploy;
pub mod evalkit;
pub mod gaussfuse;
pub mod neural;
pub mod prior_apf;
pub mod rng;
pub mod sac;
pub mod simenv;
pub mod trainer;

pub use config::RunConfig;
pub use deploy::{Controller, DeployConfig, EnsembleBundle, EpisodeRecord, TraceRow};
pub use evalkit::{EvalConfig, EvalReport, SplEpisode};
pub use gaussfuse::{DiagGaussian2, Gaussian1, GatingSchedule};
pub use neural::Mlp;
pub use prior_apf::ApfConfig;
pub use sac::{SacAgent, SacConfig, Transition};
pub use simenv::{NavEnv, Observation, RobotState, StepResult, WorldSpec};
pub use trainer::{LearningCurve, Mode, TrainConfig};
