use std::f64::consts::{FRAC_PI_3, FRAC_PI_6, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    pub n_sites: usize,
    pub sectors_per_site: usize,
    pub isd_m: f64,
    pub gnb_height_m: f64,
    pub ue_height_m: f64,
    pub carrier_hz: f64,
    pub wrap_around: bool,
    /// Minimum 2-D UE-to-site distance at drop time.
    pub min_distance_m: f64,
}

impl Default for LayoutConfig {
    /// One site with three sectors; the desk-scale default.
    fn default() -> Self {
        Self {
            n_sites: 1,
            sectors_per_site: 3,
            isd_m: 500.0,
            gnb_height_m: 25.0,
            ue_height_m: 1.5,
            carrier_hz: 30e9,
            wrap_around: false,
            min_distance_m: 35.0,
        }
    }
}

impl LayoutConfig {
    /// Full 7-site, 21-sector layout with wrap-around.
    pub fn seven_site() -> Self {
        Self { n_sites: 7, wrap_around: true, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub id: usize,
    pub site: usize,
    pub position: Point2,
    /// Boresight azimuth, radians from the x axis.
    pub boresight: f64,
    /// Coverage rhombus: site center, then three hexagon vertices.
    pub polygon: [Point2; 4],
}

impl Sector {
    pub fn region(&self, min_distance: f64) -> CoverageRegion {
        let o = self.polygon[0];
        CoverageRegion {
            origin: o,
            edge_a: sub(self.polygon[1], o),
            edge_b: sub(self.polygon[3], o),
            center: self.position,
            min_distance,
        }
    }
}

/// Parallelogram `origin + u * edge_a + w * edge_b` with `u, w` in `[0, 1]`,
/// minus a disk of radius `min_distance` around `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRegion {
    pub origin: Point2,
    pub edge_a: Point2,
    pub edge_b: Point2,
    pub center: Point2,
    pub min_distance: f64,
}

impl CoverageRegion {
    pub fn contains(&self, p: Point2) -> bool {
        let d = sub(p, self.origin);
        let det = self.edge_a[0] * self.edge_b[1] - self.edge_a[1] * self.edge_b[0];
        let u = (d[0] * self.edge_b[1] - d[1] * self.edge_b[0]) / det;
        let w = (self.edge_a[0] * d[1] - self.edge_a[1] * d[0]) / det;
        (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&w) && norm(sub(p, self.center)) >= self.min_distance
    }

    pub fn point(&self, u: f64, w: f64) -> Point2 {
        [
            self.origin[0] + u * self.edge_a[0] + w * self.edge_b[0],
            self.origin[1] + u * self.edge_a[1] + w * self.edge_b[1],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub config: LayoutConfig,
    pub sites: Vec<Point2>,
    pub sectors: Vec<Sector>,
    /// Translations of the whole layout used for wrap-around; empty when disabled.
    pub wrap_shifts: Vec<Point2>,
}

pub(crate) fn sub(a: Point2, b: Point2) -> Point2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn norm(a: Point2) -> f64 {
    a[0].hypot(a[1])
}

fn polar(r: f64, angle: f64) -> Point2 {
    [r * angle.cos(), r * angle.sin()]
}

/// Axial hex coordinates `(i, j)` to a position on the site lattice.
fn axial(isd: f64, i: i64, j: i64) -> Point2 {
    let (i, j) = (i as f64, j as f64);
    [isd * (i + 0.5 * j), isd * (3f64.sqrt() / 2.0) * j]
}

/// Rotates axial coordinates by 60 degrees.
fn rot60((i, j): (i64, i64)) -> (i64, i64) {
    (-j, i + j)
}

pub fn build_layout(config: &LayoutConfig) -> Result<NetworkLayout> {
    let rings: i64 = match config.n_sites {
        1 => 0,
        7 => 1,
        19 => 2,
        n => return Err(Error::Config(format!("unsupported site count {n}; use 1, 7 or 19"))),
    };
    if !(config.isd_m > 0.0) {
        return Err(Error::Config("inter-site distance must be positive".into()));
    }
    if !matches!(config.sectors_per_site, 1 | 3) {
        return Err(Error::Config(format!("sectors per site must be 1 or 3, got {}", config.sectors_per_site)));
    }
    if !(config.gnb_height_m > config.ue_height_m) {
        return Err(Error::Config("gNB must be higher than the UE".into()));
    }

    let mut coords: Vec<(i64, i64)> = vec![(0, 0)];
    for ring in 1..=rings {
        // Sites of the ring, ordered by angle.
        let mut ring_coords = Vec::new();
        for i in -ring..=ring {
            for j in -ring..=ring {
                if i.abs().max(j.abs()).max((i + j).abs()) == ring {
                    ring_coords.push((i, j));
                }
            }
        }
        ring_coords.sort_by(|a, b| {
            let pa = axial(1.0, a.0, a.1);
            let pb = axial(1.0, b.0, b.1);
            let ta = pa[1].atan2(pa[0]).rem_euclid(TAU);
            let tb = pb[1].atan2(pb[0]).rem_euclid(TAU);
            ta.total_cmp(&tb)
        });
        coords.extend(ring_coords);
    }
    let sites: Vec<Point2> = coords.iter().map(|&(i, j)| axial(config.isd_m, i, j)).collect();

    let radius = config.isd_m / 3f64.sqrt();
    let boresights: Vec<f64> = match config.sectors_per_site {
        3 => vec![FRAC_PI_6, FRAC_PI_6 + 2.0 * PI / 3.0, FRAC_PI_6 + 4.0 * PI / 3.0],
        _ => vec![FRAC_PI_6],
    };
    let mut sectors = Vec::with_capacity(sites.len() * boresights.len());
    for (site, &pos) in sites.iter().enumerate() {
        for &b in &boresights {
            let vertex = |angle: f64| {
                let v = polar(radius, angle);
                [pos[0] + v[0], pos[1] + v[1]]
            };
            sectors.push(Sector {
                id: sectors.len(),
                site,
                position: pos,
                boresight: b,
                polygon: [pos, vertex(b - FRAC_PI_3), vertex(b), vertex(b + FRAC_PI_3)],
            });
        }
    }

    let wrap_shifts = if config.wrap_around && rings > 0 {
        // Cluster translation vectors: (2, 1) for 7 sites, (3, 2) for 19.
        let mut t = if rings == 1 { (2, 1) } else { (3, 2) };
        (0..6)
            .map(|_| {
                let p = axial(config.isd_m, t.0, t.1);
                t = rot60(t);
                p
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(NetworkLayout { config: config.clone(), sites, sectors, wrap_shifts })
}

impl NetworkLayout {
    pub fn num_sectors(&self) -> usize {
        self.sectors.len()
    }

    pub fn sector_orientations(&self) -> Vec<f64> {
        self.sectors.iter().map(|s| s.boresight).collect()
    }

    /// Shortest vector from the closest image of `site` to `point`.
    ///
    /// With wrap-around the images form a lattice spanned by two adjacent
    /// cluster translations; the closest image is a corner of the lattice cell
    /// holding the displacement.
    pub fn displacement(&self, site: Point2, point: Point2) -> Point2 {
        let d = sub(point, site);
        if self.wrap_shifts.len() < 2 {
            return d;
        }
        let (t1, t2) = (self.wrap_shifts[0], self.wrap_shifts[1]);
        let det = t1[0] * t2[1] - t1[1] * t2[0];
        let a = (d[0] * t2[1] - d[1] * t2[0]) / det;
        let b = (t1[0] * d[1] - t1[1] * d[0]) / det;
        let (a0, b0) = (a.floor(), b.floor());
        let mut best = d;
        let mut best_norm = f64::INFINITY;
        for da in [0.0, 1.0] {
            for db in [0.0, 1.0] {
                let (ka, kb) = (a0 + da, b0 + db);
                let cand = [d[0] - ka * t1[0] - kb * t2[0], d[1] - ka * t1[1] - kb * t2[1]];
                let n = norm(cand);
                if n < best_norm {
                    best_norm = n;
                    best = cand;
                }
            }
        }
        best
    }

    pub fn distance_2d(&self, site: Point2, point: Point2) -> f64 {
        norm(self.displacement(site, point))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sector_counts() {
        let l = build_layout(&LayoutConfig::seven_site()).unwrap();
        assert_eq!(l.num_sectors(), 21);
        assert_eq!(l.wrap_shifts.len(), 6);
        let single = build_layout(&LayoutConfig { sectors_per_site: 1, ..Default::default() }).unwrap();
        assert_eq!(single.num_sectors(), 1);
        assert!(single.wrap_shifts.is_empty());
        let nineteen = build_layout(&LayoutConfig { n_sites: 19, wrap_around: true, ..Default::default() }).unwrap();
        assert_eq!(nineteen.num_sectors(), 57);
    }

    #[test]
    fn unsupported_site_count() {
        assert!(matches!(build_layout(&LayoutConfig { n_sites: 5, ..Default::default() }), Err(Error::Config(_))));
    }

    #[test]
    fn nearest_neighbour_is_isd() {
        let l = build_layout(&LayoutConfig::seven_site()).unwrap();
        for s in &l.sites[1..] {
            assert!((norm(*s) - 500.0).abs() < 1e-9);
        }
        let mut min = f64::INFINITY;
        for (i, a) in l.sites.iter().enumerate() {
            for b in &l.sites[i + 1..] {
                min = min.min(norm(sub(*a, *b)));
            }
        }
        assert!((min - 500.0).abs() < 1e-9);
    }

    #[test]
    fn wrap_shift_length_matches_cluster_size() {
        let l = build_layout(&LayoutConfig::seven_site()).unwrap();
        for s in &l.wrap_shifts {
            assert!((norm(*s) - 500.0 * 7f64.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn rhombus_is_a_third_of_the_hexagon() {
        let l = build_layout(&LayoutConfig::default()).unwrap();
        let r = l.sectors[0].region(0.0);
        let area = (r.edge_a[0] * r.edge_b[1] - r.edge_a[1] * r.edge_b[0]).abs();
        let radius = 500.0 / 3f64.sqrt();
        let hex_area = 1.5 * 3f64.sqrt() * radius * radius;
        assert!((3.0 * area - hex_area).abs() < 1e-6);
        // Boresight points into the rhombus.
        let inside = polar(100.0, l.sectors[0].boresight);
        assert!(r.contains(inside));
        assert!(!r.contains(polar(100.0, l.sectors[0].boresight + PI)));
    }
}
