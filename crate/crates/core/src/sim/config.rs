use serde::{Deserialize, Serialize};

use crate::array_codebook::{ArrayGeometry, ElementPattern};
use crate::dataset::{DatasetSchema, UseCase};
use crate::deployment::{build_layout, ChannelParams, LayoutConfig, LinkBudget};
use crate::error::{Error, Result};
use crate::kpi;
use crate::models::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AntennaConfig {
    /// gNB panel rows (vertical elements).
    pub gnb_rows: usize,
    /// gNB panel columns (horizontal elements).
    pub gnb_cols: usize,
    pub gnb_pattern: ElementPattern,
    pub ue_rows: usize,
    pub ue_cols: usize,
    pub ue_panels: usize,
    pub ue_pattern: ElementPattern,
    /// Receive beams per UE panel.
    pub rx_beams_az: usize,
    pub rx_beams_el: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

impl Default for AntennaConfig {
    fn default() -> Self {
        Self {
            gnb_rows: 4,
            gnb_cols: 8,
            gnb_pattern: ElementPattern::Sectorized3gpp,
            ue_rows: 1,
            ue_cols: 4,
            ue_panels: 2,
            ue_pattern: ElementPattern::UePanel3gpp,
            rx_beams_az: 4,
            rx_beams_el: 1,
            spacing: 0.5,
        }
    }
}

impl AntennaConfig {
    pub fn gnb_geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.gnb_cols, self.gnb_rows, self.spacing, self.spacing, self.gnb_pattern)
    }

    pub fn ue_geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.ue_cols, self.ue_rows, self.spacing, self.spacing, self.ue_pattern)
    }

    /// `rows x cols` of the gNB panel.
    pub fn label(&self) -> String {
        format!("{}x{}", self.gnb_rows, self.gnb_cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodebookConfig {
    pub set_a_az: usize,
    pub set_a_el: usize,
    pub ssb_group_az: usize,
    pub ssb_group_el: usize,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self { set_a_az: 16, set_a_el: 4, ssb_group_az: 2, ssb_group_el: 2 }
    }
}

impl CodebookConfig {
    pub fn set_a_size(&self) -> usize {
        self.set_a_az * self.set_a_el
    }

    pub fn ssb_size(&self) -> usize {
        self.set_a_az.div_ceil(self.ssb_group_az.max(1)) * self.set_a_el.div_ceil(self.ssb_group_el.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleConfig {
    /// Drops used for data collection.
    pub n_drops: usize,
    /// Fresh drops used for closed-loop evaluation.
    pub eval_drops: usize,
    pub ues_per_sector: usize,
    pub n_instants: usize,
    /// Measurement period, seconds.
    pub dt_s: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self { n_drops: 20, eval_drops: 2, ues_per_sector: 10, n_instants: 50, dt_s: 0.08 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// Noise-free exhaustive Set A measurement.
    Genie,
    /// Labels from a noisy Set A sweep.
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementConfig {
    /// Thermal noise on Set B measurements.
    pub noise: bool,
    /// Sliding window of the receive-beam selection.
    pub rx_window: usize,
    /// L1 filter length in samples.
    pub l1_window: usize,
    /// Reported beams; all of Set B when unset.
    pub n_s: Option<usize>,
    pub label_mode: LabelMode,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self { noise: false, rx_window: 3, l1_window: 3, n_s: None, label_mode: LabelMode::Genie }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub window: usize,
    /// Fallback when the windowed 1 dB accuracy drops below this.
    pub tau: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self { window: 50, tau: 0.8 }
    }
}

/// Full description of one experiment. `seed` has no default and must be
/// present in every config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub use_case: UseCase,
    /// Set B size; ignored for SBP1, whose Set B is the SSB codebook.
    pub n_b: usize,
    pub l_o: usize,
    pub l_p: usize,
    pub speed_kmph: f64,
    pub layout: LayoutConfig,
    pub channel: ChannelParams,
    pub link: LinkBudget,
    pub antenna: AntennaConfig,
    pub codebook: CodebookConfig,
    pub scale: ScaleConfig,
    pub measurement: MeasurementConfig,
    pub split: [f64; 3],
    pub train: TrainConfig,
    pub monitor: MonitorConfig,
    /// K values reported in the accuracy curves.
    pub top_k: Vec<usize>,
    /// Serve the best measured beam among this many predicted beams.
    pub refine_top_k: Option<usize>,
    /// Other sectors transmit a random beam each measurement period.
    pub interference: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            use_case: UseCase::Sbp2,
            n_b: 16,
            l_o: 5,
            l_p: 1,
            speed_kmph: 3.0,
            layout: LayoutConfig::default(),
            channel: ChannelParams::default(),
            link: LinkBudget::default(),
            antenna: AntennaConfig::default(),
            codebook: CodebookConfig::default(),
            scale: ScaleConfig::default(),
            measurement: MeasurementConfig::default(),
            split: [0.8, 0.1, 0.1],
            train: TrainConfig::default(),
            monitor: MonitorConfig::default(),
            top_k: vec![1, 2, 3, 4],
            refine_top_k: None,
            interference: true,
        }
    }
}

impl SimConfig {
    /// Parses a config document; a missing `seed` is a config error.
    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        if value.get("seed").is_none() {
            return Err(Error::Config("config must set `seed`".into()));
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn set_a_size(&self) -> usize {
        self.codebook.set_a_size()
    }

    /// Number of beams measured per instant.
    pub fn set_b_size(&self) -> usize {
        match self.use_case {
            UseCase::Sbp1 => self.codebook.ssb_size(),
            _ => self.n_b,
        }
    }

    pub fn reported_beams(&self) -> usize {
        self.measurement.n_s.unwrap_or(self.set_b_size())
    }

    /// Observation window, 1 for spatial prediction.
    pub fn window(&self) -> usize {
        if self.use_case.is_spatial() {
            1
        } else {
            self.l_o
        }
    }

    /// Instants between the last observation and the predicted instant.
    pub fn horizon(&self) -> usize {
        if self.use_case.is_spatial() {
            0
        } else {
            self.l_p
        }
    }

    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            use_case: self.use_case,
            n_b: self.set_b_size(),
            n_a: self.set_a_size(),
            l_o: self.window(),
            l_p: self.horizon(),
        }
    }

    pub fn mor(&self) -> Result<f64> {
        kpi::mor(self.use_case, self.set_b_size(), self.set_a_size(), self.l_o, self.l_p)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        build_layout(&self.layout)?;
        self.antenna.gnb_geometry().map_err(|e| Error::Config(e.to_string()))?;
        self.antenna.ue_geometry().map_err(|e| Error::Config(e.to_string()))?;
        if !(1..=2).contains(&self.antenna.ue_panels) {
            return cfg_err(format!("UE supports one or two back-to-back panels, got {}", self.antenna.ue_panels));
        }
        if self.antenna.rx_beams_az == 0 || self.antenna.rx_beams_el == 0 {
            return cfg_err("UE needs at least one receive beam".into());
        }
        let n_a = self.set_a_size();
        if n_a < 2 {
            return cfg_err(format!("Set A needs at least 2 beams, got {n_a}"));
        }
        if self.codebook.ssb_group_az == 0 || self.codebook.ssb_group_el == 0 {
            return cfg_err("SSB groups must be at least 1x1".into());
        }
        let n_b = self.set_b_size();
        if n_b == 0 || n_b > n_a {
            return cfg_err(format!("Set B size {n_b} must be in 1..={n_a}"));
        }
        if self.reported_beams() == 0 || self.reported_beams() > n_b {
            return cfg_err(format!("reported beams must be in 1..={n_b}"));
        }
        if self.use_case == UseCase::Tbp && (self.l_o == 0 || self.l_p == 0) {
            return cfg_err("temporal prediction needs l_o >= 1 and l_p >= 1".into());
        }
        let s = &self.scale;
        if s.ues_per_sector == 0 || s.n_instants == 0 || !(s.dt_s > 0.0) {
            return cfg_err("scale needs UEs, instants and a positive period".into());
        }
        if s.n_instants < self.window() + self.horizon() {
            return cfg_err(format!("{} instants cannot hold a window of {} plus horizon {}", s.n_instants, self.window(), self.horizon()));
        }
        if !(self.speed_kmph >= 0.0 && self.speed_kmph.is_finite()) {
            return cfg_err("speed must be finite and non-negative".into());
        }
        if self.measurement.rx_window == 0 || self.measurement.l1_window == 0 {
            return cfg_err("measurement windows must be at least 1".into());
        }
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.split.iter().any(|r| *r < 0.0) {
            return cfg_err(format!("split ratios {:?} must be non-negative and sum to 1", self.split));
        }
        if self.top_k.is_empty() || self.top_k.iter().any(|&k| k == 0 || k > n_a) {
            return cfg_err(format!("top_k values must be in 1..={n_a}"));
        }
        if let Some(k) = self.refine_top_k {
            if k == 0 || k > n_a {
                return cfg_err(format!("refine_top_k must be in 1..={n_a}"));
            }
        }
        if !(0.0..=1.0).contains(&self.monitor.tau) || self.monitor.window == 0 {
            return cfg_err("monitor needs tau in [0, 1] and a positive window".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        assert!(matches!(SimConfig::from_json("{}"), Err(Error::Config(_))));
        let c = SimConfig::from_json(r#"{"seed": 7}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c, SimConfig { seed: 7, ..Default::default() });
    }

    #[test]
    fn json_round_trip() {
        let c = SimConfig { seed: 3, use_case: UseCase::Tbp, n_b: 8, ..Default::default() };
        assert_eq!(SimConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn cross_field_checks() {
        let bad = SimConfig { n_b: 65, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SimConfig { use_case: UseCase::Tbp, l_o: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let sbp1 = SimConfig { use_case: UseCase::Sbp1, ..Default::default() };
        assert_eq!(sbp1.set_b_size(), 16);
        assert_eq!(sbp1.schema().input_len(), 32);
        let tbp = SimConfig { use_case: UseCase::Tbp, n_b: 16, codebook: CodebookConfig { set_a_az: 8, ..Default::default() }, ..Default::default() };
        assert!((tbp.mor().unwrap() - 0.5833).abs() < 1e-4);
        for panels in [0, 3] {
            let mut bad = SimConfig::default();
            bad.antenna.ue_panels = panels;
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
