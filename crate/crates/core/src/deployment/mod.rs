//! Network layout, UE drops and mobility, large-scale parameters and the
//! time-varying small-scale channel.

mod channel;
mod layout;
mod mobility;
mod pathloss;

pub use channel::{
    channel_realization, dbm_to_w, draw_clusters, ChannelParams, ChannelRealization, Cluster, LinkBudget, LinkGeometry,
};
pub use layout::{build_layout, CoverageRegion, LayoutConfig, NetworkLayout, Point2, Sector};
pub use mobility::{drop_ues, kmph_to_mps, step_mobility, UeState};
pub use pathloss::{
    large_scale, los_probability_uma, pathloss_uma_los, pathloss_uma_nlos, LargeScale, SpatialField,
    DECORRELATION_DISTANCE_M, SHADOW_STD_LOS_DB, SHADOW_STD_NLOS_DB,
};

use serde::Serialize;

use crate::error::Result;

/// Layout plus UE drop, exported for plotting and regression snapshots.
#[derive(Debug, Serialize)]
pub struct DropSnapshot<'a> {
    pub layout: &'a NetworkLayout,
    pub ues: &'a [UeState],
    /// Per-UE position history, one `[x, y]` per simulated instant.
    pub trajectories: Vec<Vec<Point2>>,
}

impl DropSnapshot<'_> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
