//! Urban-macro LoS probability, pathloss and spatially consistent shadowing.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::layout::{NetworkLayout, Sector};
use super::mobility::UeState;
use crate::rng::stream_rng;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const LOS_FIELD: u64 = 0x105;
const SHADOW_FIELD: u64 = 0x5AD;

pub const SHADOW_STD_LOS_DB: f64 = 4.0;
pub const SHADOW_STD_NLOS_DB: f64 = 6.0;
pub const DECORRELATION_DISTANCE_M: f64 = 50.0;

/// LoS probability as a function of 2-D distance (meters) and UE height.
pub fn los_probability_uma(d2d: f64, h_ut: f64) -> f64 {
    if d2d <= 18.0 {
        return 1.0;
    }
    let c = if h_ut <= 13.0 { 0.0 } else { ((h_ut - 13.0) / 10.0).powf(1.5) };
    (18.0 / d2d + (-d2d / 63.0).exp() * (1.0 - 18.0 / d2d))
        * (1.0 + c * 1.25 * (d2d / 100.0).powi(3) * (-d2d / 150.0).exp())
}

fn breakpoint_distance(h_bs: f64, h_ut: f64, fc_hz: f64) -> f64 {
    4.0 * (h_bs - 1.0) * (h_ut - 1.0) * fc_hz / SPEED_OF_LIGHT
}

pub fn pathloss_uma_los(d2d: f64, d3d: f64, fc_hz: f64, h_bs: f64, h_ut: f64) -> f64 {
    let fc_ghz = fc_hz / 1e9;
    let d_bp = breakpoint_distance(h_bs, h_ut, fc_hz);
    if d2d <= d_bp {
        28.0 + 22.0 * d3d.log10() + 20.0 * fc_ghz.log10()
    } else {
        28.0 + 40.0 * d3d.log10() + 20.0 * fc_ghz.log10() - 9.0 * (d_bp * d_bp + (h_bs - h_ut).powi(2)).log10()
    }
}

pub fn pathloss_uma_nlos(d2d: f64, d3d: f64, fc_hz: f64, h_bs: f64, h_ut: f64) -> f64 {
    let fc_ghz = fc_hz / 1e9;
    let nlos = 13.54 + 39.08 * d3d.log10() + 20.0 * fc_ghz.log10() - 0.6 * (h_ut - 1.5);
    nlos.max(pathloss_uma_los(d2d, d3d, fc_hz, h_bs, h_ut))
}

/// Zero-mean, unit-variance random field built from a sum of random plane
/// waves. Correlation at distance `d` is `exp(-(d / corr_dist)^2)`.
#[derive(Debug, Clone)]
pub struct SpatialField {
    waves: Vec<([f64; 2], f64)>,
}

impl SpatialField {
    pub fn new<R: Rng>(rng: &mut R, n_waves: usize, corr_dist: f64) -> Self {
        let k_std = 2f64.sqrt() / corr_dist;
        let waves = (0..n_waves)
            .map(|_| {
                let kx: f64 = rng.sample::<f64, _>(StandardNormal) * k_std;
                let ky: f64 = rng.sample::<f64, _>(StandardNormal) * k_std;
                ([kx, ky], rng.random::<f64>() * TAU)
            })
            .collect();
        Self { waves }
    }

    pub fn value(&self, p: [f64; 2]) -> f64 {
        let scale = (2.0 / self.waves.len() as f64).sqrt();
        scale * self.waves.iter().map(|(k, ph)| (k[0] * p[0] + k[1] * p[1] + ph).cos()).sum::<f64>()
    }
}

fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / 2f64.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LargeScale {
    pub los: bool,
    pub d2d: f64,
    pub d3d: f64,
    /// Pathloss including shadowing, dB.
    pub pathloss_db: f64,
    pub shadow_db: f64,
}

/// LoS state and pathloss between `sector` and `ue`.
///
/// The LoS draw and the shadowing come from per-sector random fields, so a
/// UE moving a few meters sees nearly the same values.
pub fn large_scale(layout: &NetworkLayout, sector: &Sector, ue: &UeState, seed: u64) -> LargeScale {
    let cfg = &layout.config;
    let d2d = layout.distance_2d(sector.position, ue.xy()).max(1.0);
    let dh = cfg.gnb_height_m - ue.position[2];
    let d3d = d2d.hypot(dh);

    let mut rng = stream_rng(seed, &[LOS_FIELD, sector.id as u64]);
    let los_field = SpatialField::new(&mut rng, 32, DECORRELATION_DISTANCE_M);
    let u = standard_normal_cdf(los_field.value(ue.xy()));
    let los = u < los_probability_uma(d2d, ue.position[2]);

    let mut rng = stream_rng(seed, &[SHADOW_FIELD, sector.id as u64]);
    let shadow_field = SpatialField::new(&mut rng, 32, DECORRELATION_DISTANCE_M);
    let (pl, sigma) = if los {
        (pathloss_uma_los(d2d, d3d, cfg.carrier_hz, cfg.gnb_height_m, ue.position[2]), SHADOW_STD_LOS_DB)
    } else {
        (pathloss_uma_nlos(d2d, d3d, cfg.carrier_hz, cfg.gnb_height_m, ue.position[2]), SHADOW_STD_NLOS_DB)
    };
    let shadow_db = sigma * shadow_field.value(ue.xy());
    LargeScale { los, d2d, d3d, pathloss_db: pl + shadow_db, shadow_db }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn short_distance_plateau() {
        assert_eq!(los_probability_uma(10.0, 1.5), 1.0);
        assert_eq!(los_probability_uma(18.0, 1.5), 1.0);
        // Independent evaluation at 100 m for h_ut = 1.5.
        let expected = 0.18 + (-100.0f64 / 63.0).exp() * 0.82;
        assert!((los_probability_uma(100.0, 1.5) - expected).abs() < 1e-12);
    }

    #[test]
    fn los_probability_decays() {
        let mut prev = 1.0;
        for d in (20..2000).step_by(10) {
            let p = los_probability_uma(d as f64, 1.5);
            assert!(p <= prev + 1e-15 && p > 0.0);
            prev = p;
        }
    }

    #[test]
    fn pathloss_monotone_and_nlos_dominates() {
        let (fc, hb, hu) = (30e9, 25.0, 1.5);
        let mut prev = (0.0, 0.0);
        for d in (10..5000).step_by(5) {
            let d2 = d as f64;
            let d3 = d2.hypot(hb - hu);
            let los = pathloss_uma_los(d2, d3, fc, hb, hu);
            let nlos = pathloss_uma_nlos(d2, d3, fc, hb, hu);
            assert!(nlos >= los);
            assert!(los >= prev.0 && nlos >= prev.1);
            prev = (los, nlos);
        }
    }

    #[test]
    fn pathloss_reference_value() {
        // 100 m at 30 GHz, below the breakpoint: 28 + 22 log10(d3d) + 20 log10(30).
        let d3 = 100f64.hypot(23.5);
        let want = 28.0 + 22.0 * d3.log10() + 20.0 * 30f64.log10();
        assert!((pathloss_uma_los(100.0, d3, 30e9, 25.0, 1.5) - want).abs() < 1e-12);
    }

    #[test]
    fn field_moments_and_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        let (mut s, mut s2, mut c50) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let f = SpatialField::new(&mut rng, 32, 50.0);
            let a = f.value([10.0, -4.0]);
            let b = f.value([10.0 + 30.0, -4.0 + 40.0]);
            s += a;
            s2 += a * a;
            c50 += a * b;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.06, "mean {mean}");
        assert!((var - 1.0).abs() < 0.08, "var {var}");
        let corr = c50 / n as f64;
        assert!((corr - (-1.0f64).exp()).abs() < 0.06, "corr {corr}");
    }
}
