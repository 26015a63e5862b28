//! Desk-scale system-level simulator for AI/ML-based beam management.
//!
//! The crate covers the whole chain used to study spatial-domain (SBP) and
//! time-domain (TBP) beam prediction:
//!
//! - [`array_codebook`]: UPA steering vectors, CSI-RS/SSB codebooks and Set B patterns
//! - [`deployment`]: hexagonal layout, UE drops and mobility, UMa large-scale
//!   parameters and a clustered time-varying channel
//! - [`measurement`]: per-beam L1-RSRP, RX-beam selection, L1 filtering and reports
//! - [`dataset`]: training-sample construction, splitting and persistence
//! - [`models`]: small neural classifiers trained from scratch with Adam
//! - [`baselines`]: non-ML reference policies
//! - [`kpi`]: Top-K accuracy, RSRP error, 1 dB margin accuracy, MOR and throughput
//! - [`sim`]: the closed-loop experiment driver and experiment matrix

pub mod array_codebook;
pub mod baselines;
pub mod dataset;
pub mod deployment;
pub mod error;
pub mod io;
pub mod kpi;
pub mod measurement;
pub mod models;
pub mod rng;
pub mod sim;

pub use array_codebook::{
    build_ssb_codebook, build_tx_codebook, select_set_b, steering_vector, AngleSpan, ArrayGeometry,
    BeamformingVector, Codebook, CodebookKind, ElementPattern, SetBPattern, SteeringAngles,
};

pub use deployment::{ChannelRealization, LinkBudget, NetworkLayout, UeState};
pub use error::{Error, Result};




pub use baselines::{BaselineKind, BaselinePolicy};
pub use dataset::{Dataset, DatasetSchema, Split, TrainingSample, UseCase};
pub use kpi::{KpiRecord, PredictionRecord};
pub use measurement::{MeasurementReport, ReportRecord, RsrpVector};
pub use models::{Model, ModelConfig, ModelFamily, TrainConfig};
pub use sim::{ExperimentResult, PolicyKind, SimConfig};
