//! Multi-agent policy-gradient packet routing.
//!
//! Every router is an independent learner with a softmax routing policy over
//! its outgoing links, trained online from a single global reward (negated
//! packet trip times or node costs, plus optional shaping penalties) through a
//! discounted eligibility trace. The crate contains the discrete-time
//! simulator, exact analytic baselines for the reference experiments, and an
//! experiment harness with CSV output.

pub mod config;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod net;
pub mod oracles;
pub mod policy;
pub mod presets;
pub mod rng;
pub mod shaping;
pub mod sim;

pub use config::{load_config, ConfigError, ExperimentConfig, TrackedProbability};
pub use harness::{batch, run_experiment, BatchSummary, ConvergenceCriterion, RewardComponent};
pub use learner::{LearnerConfig, RewardTiming};
pub use net::{NodeId, Topology, TrafficSpec};
pub use presets::{preset, PresetName};
pub use shaping::ShapingConfig;
pub use sim::{run, RunResult, SimError, Simulation, TickStats};
