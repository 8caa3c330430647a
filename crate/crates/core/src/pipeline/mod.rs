//! End-to-end scenario runs around an external codec.

pub mod codec;
pub mod config;
pub mod inference;
pub mod registry;
pub mod run;

pub use codec::{BitrateSource, Codec, CodecJob, CommandCodec};
pub use config::{sra_decision, Scenario, ScenarioConfig, VideoSpec};
pub use inference::{dsnet_downsample_frame, dsnet_downsample_tensor, dsnet_residual_tensor};
pub use registry::{Downsampler, Registry, StrategyOptions, Upsampler};
pub use run::{compare_scenarios, run_scenario, run_scenario_with, Comparison, QpResult, RunReport};
