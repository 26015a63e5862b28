//! Clustered geometric mmWave channel.
//!
//! `H(t) = sqrt(M_tx M_rx) * sum_c g_c exp(j w_c t) a_rx(AoA_c) a_tx(AoD_c)^H`
//! with unit-norm steering vectors and `sum_c E|g_c|^2` equal to the linear
//! large-scale gain, so `E ||H||_F^2 = M_tx M_rx 10^(-PL/10)` for isotropic
//! elements. Cluster offsets, powers and phases are a pure function of the
//! link seed; directions follow the current UE position.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::{NetworkLayout, Sector};
use super::mobility::UeState;
use super::pathloss::LargeScale;
use crate::array_codebook::{steering_vector, wrap_pi, ArrayGeometry, SteeringAngles};
use crate::rng::stream_rng;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub n_clusters: usize,
    pub k_factor_db: f64,
    pub los_spread_deg: f64,
    pub nlos_spread_deg: f64,
    /// Zenith spread relative to the azimuth spread.
    pub zenith_spread_ratio: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self { n_clusters: 6, k_factor_db: 10.0, los_spread_deg: 3.0, nlos_spread_deg: 10.0, zenith_spread_ratio: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub bandwidth_hz: f64,
}

impl Default for LinkBudget {
    /// gNB at 40 dBm, UE receiver with 10 dB noise figure over 80 MHz.
    fn default() -> Self {
        Self { tx_power_dbm: 40.0, noise_figure_db: 10.0, bandwidth_hz: 80e6 }
    }
}

impl LinkBudget {
    pub fn noise_power_dbm(&self) -> f64 {
        -174.0 + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }

    pub fn noise_power_w(&self) -> f64 {
        dbm_to_w(self.noise_power_dbm())
    }

    pub fn tx_power_w(&self) -> f64 {
        dbm_to_w(self.tx_power_dbm)
    }
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Geometry of one gNB-sector to UE-panel link at a given instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    /// Shortest (wrap-aware) horizontal vector from the sector site to the UE.
    pub displacement: [f64; 2],
    pub gnb_height: f64,
    pub ue_height: f64,
    pub sector_boresight: f64,
    pub panel_boresight: f64,
    pub ue_velocity: [f64; 2],
    pub carrier_hz: f64,
}

impl LinkGeometry {
    pub fn new(layout: &NetworkLayout, sector: &Sector, ue: &UeState, panel: usize) -> Self {
        Self {
            displacement: layout.displacement(sector.position, ue.xy()),
            gnb_height: layout.config.gnb_height_m,
            ue_height: ue.position[2],
            sector_boresight: sector.boresight,
            panel_boresight: ue.panel_orientations[panel],
            ue_velocity: ue.velocity,
            carrier_hz: layout.config.carrier_hz,
        }
    }

    /// Global azimuth and zenith of departure of the direct path.
    pub fn los_departure(&self) -> (f64, f64) {
        let d2d = self.displacement[0].hypot(self.displacement[1]).max(1e-9);
        let az = self.displacement[1].atan2(self.displacement[0]);
        let zen = FRAC_PI_2 + ((self.gnb_height - self.ue_height) / d2d).atan();
        (az, zen)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Departure angles in the sector array frame.
    pub aod: SteeringAngles,
    /// Arrival angles in the UE panel frame.
    pub aoa: SteeringAngles,
    /// Complex amplitude at `t = 0`, including element gains.
    pub gain: Complex64,
    pub doppler_rad_s: f64,
}

impl Cluster {
    pub fn gain_at(&self, t: f64) -> Complex64 {
        self.gain * Complex64::from_polar(1.0, self.doppler_rad_s * t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `M_rx x M_tx`.
    pub h: Array2<Complex64>,
    pub los: bool,
    pub pathloss_db: f64,
    pub clusters: Vec<Cluster>,
}

impl ChannelRealization {
    pub fn n_rx(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.h.ncols()
    }

    pub fn frobenius_sqr(&self) -> f64 {
        self.h.iter().map(|c| c.norm_sqr()).sum()
    }
}

fn laplace<R: Rng>(rng: &mut R, std: f64) -> f64 {
    let b = std / 2f64.sqrt();
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

struct ClusterDraw {
    aod_az: f64,
    aod_zen: f64,
    aoa_az: f64,
    aoa_zen: f64,
    weight: f64,
    phase: f64,
}

/// Builds the cluster list of a link at time `t`.
pub fn draw_clusters(
    link: &LinkGeometry,
    large: &LargeScale,
    params: &ChannelParams,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    seed: u64,
) -> Vec<Cluster> {
    let n = params.n_clusters.max(1);
    let mut rng = stream_rng(seed, &[0xC1u64]);
    let spread = if large.los { params.los_spread_deg } else { params.nlos_spread_deg }.to_radians();
    let zen_spread = spread * params.zenith_spread_ratio;
    let draws: Vec<ClusterDraw> = (0..n)
        .map(|_| ClusterDraw {
            aod_az: laplace(&mut rng, spread),
            aod_zen: laplace(&mut rng, zen_spread),
            aoa_az: laplace(&mut rng, spread),
            aoa_zen: laplace(&mut rng, zen_spread),
            weight: -(1.0 - rng.random::<f64>()).ln(),
            phase: rng.random::<f64>() * TAU,
        })
        .collect();

    let powers: Vec<f64> = if n == 1 {
        vec![1.0]
    } else if large.los {
        let k = 10f64.powf(params.k_factor_db / 10.0);
        let rest: f64 = draws[1..].iter().map(|d| d.weight).sum();
        std::iter::once(k / (k + 1.0)).chain(draws[1..].iter().map(|d| d.weight / rest / (k + 1.0))).collect()
    } else {
        let total: f64 = draws.iter().map(|d| d.weight).sum();
        draws.iter().map(|d| d.weight / total).collect()
    };

    let (dep_az, dep_zen) = link.los_departure();
    let arr_az = dep_az + PI;
    let arr_zen = PI - dep_zen;
    let pl_lin = 10f64.powf(-large.pathloss_db / 10.0);
    let wavelength = SPEED_OF_LIGHT / link.carrier_hz;

    draws
        .iter()
        .zip(&powers)
        .enumerate()
        .map(|(c, (d, &p))| {
            // The dominant LoS cluster sits exactly on the geometric direction.
            let direct = large.los && c == 0;
            let (o_daz, o_dzen, o_aaz, o_azen) = if direct { (0.0, 0.0, 0.0, 0.0) } else { (d.aod_az, d.aod_zen, d.aoa_az, d.aoa_zen) };
            let aod_local = wrap_pi(dep_az + o_daz - link.sector_boresight);
            let aod_zen = (dep_zen + o_dzen).clamp(0.0, PI);
            let aoa_global = arr_az + o_aaz;
            let aoa_local = wrap_pi(aoa_global - link.panel_boresight);
            let aoa_zen = (arr_zen + o_azen).clamp(0.0, PI);

            let g_tx = 10f64.powf(tx.element_pattern.gain_db(aod_local, aod_zen) / 10.0);
            let g_rx = 10f64.powf(rx.element_pattern.gain_db(aoa_local, aoa_zen) / 10.0);
            let amplitude = (p * pl_lin * g_tx * g_rx).sqrt();

            let dir = [aoa_zen.sin() * aoa_global.cos(), aoa_zen.sin() * aoa_global.sin()];
            let doppler = TAU / wavelength * (link.ue_velocity[0] * dir[0] + link.ue_velocity[1] * dir[1]);
            Cluster {
                aod: SteeringAngles::from_local(aod_local, aod_zen),
                aoa: SteeringAngles::from_local(aoa_local, aoa_zen),
                gain: Complex64::from_polar(amplitude, d.phase),
                doppler_rad_s: doppler,
            }
        })
        .collect()
}

/// Channel matrix of one sector-panel link at time `t`.
pub fn channel_realization(
    link: &LinkGeometry,
    large: &LargeScale,
    params: &ChannelParams,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    t: f64,
    seed: u64,
) -> ChannelRealization {
    let clusters = draw_clusters(link, large, params, tx, rx, seed);
    let (m_tx, m_rx) = (tx.num_elements(), rx.num_elements());
    let scale = ((m_tx * m_rx) as f64).sqrt();
    let mut h = Array2::<Complex64>::zeros((m_rx, m_tx));
    for c in &clusters {
        let a_tx = steering_vector(tx, c.aod).coefficients;
        let a_rx = steering_vector(rx, c.aoa).coefficients;
        let g = c.gain_at(t) * scale;
        for (r, ar) in a_rx.iter().enumerate() {
            let gr = g * ar;
            for (col, at) in a_tx.iter().enumerate() {
                h[[r, col]] += gr * at.conj();
            }
        }
    }
    ChannelRealization { h, los: large.los, pathloss_db: large.pathloss_db, clusters }
}
