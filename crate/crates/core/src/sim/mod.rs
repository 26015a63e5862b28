//! Experiment driver: configuration, data collection, closed-loop evaluation
//! and the experiment matrix.

pub mod campaign;
pub mod collect;
pub mod config;
pub mod matrix;
pub mod scenario;

pub use campaign::{monitor_and_fallback, run_campaign_detailed, run_inference_campaign, CampaignOutput, ExperimentResult, FallbackEvent, MonitorDecision, PolicyKind};
pub use collect::{build_dataset, collect_dataset, run_data_collection, train_pipeline, CollectionStats};
pub use config::{AntennaConfig, CodebookConfig, LabelMode, MeasurementConfig, MonitorConfig, ScaleConfig, SimConfig};
pub use matrix::{run_matrix, CellOutcome, MatrixCell, MatrixConfig};
pub use scenario::{DropRun, Observation, Scenario};
