//! Per-drop measurement engine shared by data collection and evaluation.

use std::collections::VecDeque;

use crate::array_codebook::{
    build_codebook, build_ssb_codebook, build_tx_codebook, select_set_b, AngleSpan, ArrayGeometry, BeamformingVector,
    Codebook, CodebookKind, SetBPattern,
};
use crate::dataset::UseCase;
use crate::deployment::{
    build_layout, channel_realization, drop_ues, large_scale, step_mobility, ChannelRealization, LinkGeometry,
    NetworkLayout, Sector, UeState,
};
use crate::error::Result;
use crate::measurement::{build_report, l1_filter, measure_set, MeasurementReport, RsrpVector, RxBeamSelector, RxChoice};
use crate::rng::derive_seed;

use super::config::{LabelMode, SimConfig};

const LINK_STREAM: u64 = 0x11CC;
const NOISE_STREAM: u64 = 0x2015E;
const LABEL_NOISE_STREAM: u64 = 0x1AB3;

/// Zenith coverage of the UE receive codebook (arrivals come from above).
fn ue_zenith_span() -> AngleSpan {
    AngleSpan::degrees(45.0, 90.0)
}

/// Codebooks and layout of one configuration; immutable across drops.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub layout: NetworkLayout,
    pub tx_geometry: ArrayGeometry,
    pub rx_geometry: ArrayGeometry,
    pub set_a: Codebook,
    pub pattern: SetBPattern,
    pub set_b_beams: Vec<BeamformingVector>,
    pub set_b_kind: CodebookKind,
    /// One receive codebook per UE panel.
    pub rx_codebooks: Vec<Codebook>,
}

impl Scenario {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = build_layout(&cfg.layout)?;
        let tx_geometry = cfg.antenna.gnb_geometry()?;
        let rx_geometry = cfg.antenna.ue_geometry()?;
        let cb = &cfg.codebook;
        let set_a = build_tx_codebook(&tx_geometry, cb.set_a_az, cb.set_a_el, AngleSpan::sector_azimuth(), AngleSpan::sector_zenith())?;
        let (pattern, set_b_beams, set_b_kind) = match cfg.use_case {
            UseCase::Sbp1 => {
                let ssb = build_ssb_codebook(&set_a, cb.ssb_group_az, cb.ssb_group_el)?;
                let beams = ssb.beams.clone();
                (SetBPattern::SeparateCodebook { ssb }, beams, CodebookKind::Ssb)
            }
            _ => {
                let pattern = select_set_b(&set_a, cfg.n_b)?;
                let beams = pattern.beam_ids().iter().map(|&i| set_a.beams[i].clone()).collect();
                (pattern, beams, CodebookKind::Csirs)
            }
        };
        let rx = build_codebook(
            CodebookKind::Rx,
            &rx_geometry,
            cfg.antenna.rx_beams_az,
            cfg.antenna.rx_beams_el,
            AngleSpan::sector_azimuth(),
            ue_zenith_span(),
        )?;
        let rx_codebooks = vec![rx; cfg.antenna.ue_panels];
        Ok(Self { layout, tx_geometry, rx_geometry, set_a, pattern, set_b_beams, set_b_kind, rx_codebooks })
    }
}

/// What one UE sees at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// L1-filtered noise-free exhaustive Set A sweep: the genie reference.
    pub set_a: RsrpVector,
    /// Unfiltered noise-free sweep of this instant.
    pub set_a_instant: RsrpVector,
    /// Instantaneous best receive beam per Set A beam.
    pub rx_choice: Vec<RxChoice>,
    /// Label source: equals `set_a` in genie label mode.
    pub label_set_a: RsrpVector,
    pub report: MeasurementReport,
}

/// Sliding L1-filter memory.
#[derive(Debug, Clone)]
struct FilterState {
    window: usize,
    history: VecDeque<RsrpVector>,
}

impl FilterState {
    fn new(window: usize) -> Self {
        Self { window, history: VecDeque::with_capacity(window) }
    }

    fn push(&mut self, v: RsrpVector) -> Result<RsrpVector> {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(v);
        l1_filter(self.history.make_contiguous(), self.window)
    }
}

#[derive(Debug, Clone)]
struct UeTrack {
    ue: UeState,
    selector: RxBeamSelector,
    set_b: FilterState,
    set_a: FilterState,
    label: FilterState,
}

/// Mutable state of one drop: UE positions and per-UE measurement memory.
pub struct DropRun<'a> {
    cfg: &'a SimConfig,
    scenario: &'a Scenario,
    pub drop_id: usize,
    pub seed: u64,
    tracks: Vec<UeTrack>,
}

impl<'a> DropRun<'a> {
    pub fn new(cfg: &'a SimConfig, scenario: &'a Scenario, drop_id: usize, seed: u64) -> Self {
        let tracks = drop_ues(&scenario.layout, cfg.scale.ues_per_sector, cfg.speed_kmph, seed)
            .into_iter()
            .map(|ue| UeTrack {
                ue,
                selector: RxBeamSelector::new(cfg.measurement.rx_window),
                set_b: FilterState::new(cfg.measurement.l1_window),
                set_a: FilterState::new(cfg.measurement.l1_window),
                label: FilterState::new(cfg.measurement.l1_window),
            })
            .collect();
        Self { cfg, scenario, drop_id, seed, tracks }
    }

    pub fn num_ues(&self) -> usize {
        self.tracks.len()
    }

    pub fn ue(&self, idx: usize) -> &UeState {
        &self.tracks[idx].ue
    }

    pub fn time(&self, t_index: usize) -> f64 {
        t_index as f64 * self.cfg.scale.dt_s
    }

    /// Channels from `sector` to every panel of `ue` at time `t`.
    pub fn channels_from(&self, ue: &UeState, sector: &Sector, t: f64) -> Vec<ChannelRealization> {
        let large = large_scale(&self.scenario.layout, sector, ue, self.seed);
        (0..self.scenario.rx_codebooks.len())
            .map(|panel| {
                let link = LinkGeometry::new(&self.scenario.layout, sector, ue, panel);
                let seed = derive_seed(self.seed, &[LINK_STREAM, ue.id as u64, sector.id as u64, panel as u64]);
                channel_realization(&link, &large, &self.cfg.channel, &self.scenario.tx_geometry, &self.scenario.rx_geometry, t, seed)
            })
            .collect()
    }

    /// Measures Set A and Set B for UE `idx` at instant `t_index`, updating
    /// its receive-beam and L1-filter memory.
    pub fn observe(&mut self, idx: usize, t_index: usize) -> Result<Observation> {
        let (cfg, sc) = (self.cfg, self.scenario);
        let t = self.time(t_index);
        let ue = self.tracks[idx].ue.clone();
        let channels = self.channels_from(&ue, &sc.layout.sectors[ue.serving_sector], t);
        let genie = measure_set(
            &channels,
            &sc.set_a.beams,
            CodebookKind::Csirs,
            &sc.rx_codebooks,
            &cfg.link,
            t,
            t_index,
            &mut RxBeamSelector::new(1),
            None,
        )?;
        let noisy_label = match cfg.measurement.label_mode {
            LabelMode::Genie => None,
            LabelMode::Noisy => {
                let seed = derive_seed(self.seed, &[LABEL_NOISE_STREAM, ue.id as u64]);
                Some(measure_set(&channels, &sc.set_a.beams, CodebookKind::Csirs, &sc.rx_codebooks, &cfg.link, t, t_index, &mut RxBeamSelector::new(1), Some(seed))?.rsrp)
            }
        };
        let noise_seed = cfg.measurement.noise.then(|| derive_seed(self.seed, &[NOISE_STREAM, ue.id as u64]));
        let track = &mut self.tracks[idx];
        let measured = measure_set(
            &channels,
            &sc.set_b_beams,
            sc.set_b_kind,
            &sc.rx_codebooks,
            &cfg.link,
            t,
            t_index,
            &mut track.selector,
            noise_seed,
        )?;
        let filtered = track.set_b.push(measured.rsrp)?;
        let report = build_report(&filtered, &sc.pattern, cfg.reported_beams())?;
        let set_a = track.set_a.push(genie.rsrp.clone())?;
        let label_set_a = match noisy_label {
            None => set_a.clone(),
            Some(v) => track.label.push(v)?,
        };
        Ok(Observation { set_a, set_a_instant: genie.rsrp, rx_choice: genie.rx_choice, label_set_a, report })
    }

    /// Moves every UE forward by one measurement period.
    pub fn advance(&mut self) {
        let dt = self.cfg.scale.dt_s;
        for tr in &mut self.tracks {
            tr.ue = step_mobility(&tr.ue, dt);
        }
    }
}
