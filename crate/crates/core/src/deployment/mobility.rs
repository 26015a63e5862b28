use std::f64::consts::{FRAC_PI_2, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::{CoverageRegion, NetworkLayout};
use crate::rng::{derive_seed, stream_rng};

const DROP_STREAM: u64 = 0xD409;
const UE_STREAM: u64 = 0x0E5E;

pub fn kmph_to_mps(kmph: f64) -> f64 {
    kmph / 3.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeState {
    pub id: usize,
    /// Meters; the height is fixed.
    pub position: [f64; 3],
    /// m/s in the horizontal plane.
    pub velocity: [f64; 2],
    /// Facing direction of the UE, radians.
    pub orientation: f64,
    /// Boresights of the left and right panels.
    pub panel_orientations: [f64; 2],
    pub serving_sector: usize,
    pub rng_seed: u64,
    /// Area the UE is kept in by boundary reflection.
    pub region: CoverageRegion,
    /// Number of mobility steps taken.
    pub step: u64,
}

impl UeState {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.position[0], self.position[1]]
    }
}

/// Drops `n_per_sector` outdoor UEs uniformly in every sector's coverage
/// rhombus, each moving in a uniformly random direction at `speed_kmph`.
pub fn drop_ues(layout: &NetworkLayout, n_per_sector: usize, speed_kmph: f64, seed: u64) -> Vec<UeState> {
    let speed = kmph_to_mps(speed_kmph);
    let min_d = layout.config.min_distance_m;
    let mut ues = Vec::with_capacity(layout.num_sectors() * n_per_sector);
    for sector in &layout.sectors {
        let region = sector.region(min_d);
        for k in 0..n_per_sector {
            let id = sector.id * n_per_sector + k;
            let mut rng = stream_rng(seed, &[DROP_STREAM, sector.id as u64, k as u64]);
            let xy = loop {
                let p = region.point(rng.random::<f64>(), rng.random::<f64>());
                if region.contains(p) {
                    break p;
                }
            };
            let orientation = rng.random::<f64>() * TAU;
            let heading = rng.random::<f64>() * TAU;
            ues.push(UeState {
                id,
                position: [xy[0], xy[1], layout.config.ue_height_m],
                velocity: [speed * heading.cos(), speed * heading.sin()],
                orientation,
                panel_orientations: [orientation + FRAC_PI_2, orientation - FRAC_PI_2],
                serving_sector: sector.id,
                rng_seed: derive_seed(seed, &[UE_STREAM, id as u64]),
                region,
                step: 0,
            });
        }
    }
    ues
}

/// Straight-line motion at constant speed. A step that would leave the
/// coverage region is replaced by a freshly drawn heading that stays inside.
pub fn step_mobility(ue: &UeState, dt: f64) -> UeState {
    let mut next = ue.clone();
    next.step += 1;
    let speed = ue.speed();
    if !(dt > 0.0) || speed == 0.0 {
        return next;
    }
    let advance = |v: [f64; 2]| [ue.position[0] + v[0] * dt, ue.position[1] + v[1] * dt];
    let p = advance(ue.velocity);
    if ue.region.contains(p) {
        next.position[0] = p[0];
        next.position[1] = p[1];
        return next;
    }
    let mut rng = stream_rng(ue.rng_seed, &[ue.step]);
    for _ in 0..64 {
        let heading = rng.random::<f64>() * TAU;
        let v = [speed * heading.cos(), speed * heading.sin()];
        let p = advance(v);
        if ue.region.contains(p) {
            next.velocity = v;
            next.position[0] = p[0];
            next.position[1] = p[1];
            return next;
        }
    }
    next.velocity = [-ue.velocity[0], -ue.velocity[1]];
    next
}
