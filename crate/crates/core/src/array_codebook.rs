//! Uniform planar array steering vectors, DFT-style beam codebooks and Set B
//! selection patterns.
//!
//! Angles follow the array-frame convention of the UPA model: `theta` is the
//! azimuth measured from the horizontal array axis (broadside at `pi/2`) and
//! `phi` is the zenith angle. Codebook spans are given relative to the panel
//! boresight, so an azimuth offset `a` maps to `theta = pi/2 - a`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-element radiation pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ElementPattern {
    #[default]
    Isotropic,
    /// gNB element: 8 dBi, 65 degree HPBW, 30 dB front-to-back.
    Sectorized3gpp,
    /// UE panel element: 5 dBi, 90 degree HPBW, 25 dB front-to-back.
    UePanel3gpp,
}

impl ElementPattern {
    /// Element gain in dBi for a direction given as boresight-relative azimuth
    /// and zenith angle (both radians).
    pub fn gain_db(self, az_local: f64, zenith: f64) -> f64 {
        let (hpbw, max_att, g_max) = match self {
            ElementPattern::Isotropic => return 0.0,
            ElementPattern::Sectorized3gpp => (65.0, 30.0, 8.0),
            ElementPattern::UePanel3gpp => (90.0, 25.0, 5.0),
        };
        let az = wrap_pi(az_local).to_degrees();
        let zen = zenith.to_degrees();
        let a_v = -(12.0 * ((zen - 90.0) / hpbw).powi(2)).min(max_att);
        let a_h = -(12.0 * (az / hpbw).powi(2)).min(max_att);
        -(-(a_v + a_h)).min(max_att) + g_max
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_pi(a: f64) -> f64 {
    let mut x = a.rem_euclid(TAU);
    if x > PI {
        x -= TAU;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Horizontal element count.
    pub m_h: usize,
    /// Vertical element count.
    pub m_v: usize,
    /// Horizontal spacing in wavelengths.
    pub d_h: f64,
    /// Vertical spacing in wavelengths.
    pub d_v: f64,
    #[serde(default)]
    pub element_pattern: ElementPattern,
}

impl ArrayGeometry {
    pub fn new(m_h: usize, m_v: usize, d_h: f64, d_v: f64, element_pattern: ElementPattern) -> Result<Self> {
        let g = Self { m_h, m_v, d_h, d_v, element_pattern };
        g.validate()?;
        Ok(g)
    }

    /// Half-wavelength isotropic array, handy for tests.
    pub fn isotropic(m_h: usize, m_v: usize) -> Self {
        Self { m_h, m_v, d_h: 0.5, d_v: 0.5, element_pattern: ElementPattern::Isotropic }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_h == 0 || self.m_v == 0 {
            return Err(Error::invalid(format!("array needs at least one element per axis, got {}x{}", self.m_h, self.m_v)));
        }
        if !(self.d_h > 0.0 && self.d_v > 0.0 && self.d_h.is_finite() && self.d_v.is_finite()) {
            return Err(Error::invalid("element spacing must be positive"));
        }
        Ok(())
    }

    pub fn num_elements(&self) -> usize {
        self.m_h * self.m_v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringAngles {
    /// Azimuth in the array frame, `[0, 2pi)`.
    pub theta: f64,
    /// Zenith angle, `[0, pi]`.
    pub phi: f64,
}

impl SteeringAngles {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !(0.0..=PI).contains(&phi) {
            return Err(Error::invalid(format!("invalid steering angles theta={theta}, phi={phi}")));
        }
        Ok(Self { theta: theta.rem_euclid(TAU), phi })
    }

    /// Builds array-frame angles from a boresight-relative azimuth and a zenith angle.
    pub fn from_local(az_local: f64, zenith: f64) -> Self {
        Self { theta: (FRAC_PI_2 - az_local).rem_euclid(TAU), phi: zenith.clamp(0.0, PI) }
    }

    /// Boresight-relative azimuth in `(-pi, pi]`.
    pub fn local_azimuth(&self) -> f64 {
        wrap_pi(FRAC_PI_2 - self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BeamDoc", from = "BeamDoc")]
pub struct BeamformingVector {
    pub coefficients: Vec<Complex64>,
    pub angles: SteeringAngles,
    pub beam_id: usize,
}

impl BeamformingVector {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

#[derive(Serialize, Deserialize)]
struct BeamDoc {
    beam_id: usize,
    theta_rad: f64,
    phi_rad: f64,
    coeffs: Vec<[f64; 2]>,
}

impl From<BeamformingVector> for BeamDoc {
    fn from(b: BeamformingVector) -> Self {
        BeamDoc {
            beam_id: b.beam_id,
            theta_rad: b.angles.theta,
            phi_rad: b.angles.phi,
            coeffs: b.coefficients.iter().map(|c| [c.re, c.im]).collect(),
        }
    }
}

impl From<BeamDoc> for BeamformingVector {
    fn from(d: BeamDoc) -> Self {
        BeamformingVector {
            coefficients: d.coeffs.iter().map(|c| Complex64::new(c[0], c[1])).collect(),
            angles: SteeringAngles { theta: d.theta_rad, phi: d.phi_rad },
            beam_id: d.beam_id,
        }
    }
}

/// Kronecker product of the horizontal and vertical unit-norm factors.
///
/// Entry `p * m_v + q` is the product of horizontal entry `p` and vertical
/// entry `q`.
pub fn steering_vector(geometry: &ArrayGeometry, angles: SteeringAngles) -> BeamformingVector {
    let h_phase = -TAU * geometry.d_h * angles.phi.sin() * angles.theta.cos();
    let v_phase = -TAU * geometry.d_v * angles.phi.cos();
    let h_scale = 1.0 / (geometry.m_h as f64).sqrt();
    let v_scale = 1.0 / (geometry.m_v as f64).sqrt();
    let horizontal: Vec<Complex64> =
        (0..geometry.m_h).map(|p| Complex64::from_polar(h_scale, h_phase * p as f64)).collect();
    let vertical: Vec<Complex64> =
        (0..geometry.m_v).map(|q| Complex64::from_polar(v_scale, v_phase * q as f64)).collect();
    let coefficients = horizontal.iter().flat_map(|h| vertical.iter().map(move |v| h * v)).collect();
    BeamformingVector { coefficients, angles, beam_id: 0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookKind {
    Csirs,
    Ssb,
    Rx,
}

/// Closed angular interval in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSpan {
    pub start: f64,
    pub end: f64,
}

impl AngleSpan {
    pub fn degrees(start: f64, end: f64) -> Self {
        Self { start: start.to_radians(), end: end.to_radians() }
    }

    /// Boresight-relative azimuth coverage of one sector, -60..60 degrees.
    pub fn sector_azimuth() -> Self {
        Self::degrees(-60.0, 60.0)
    }

    /// Zenith coverage from the horizon down to 45 degrees below it.
    pub fn sector_zenith() -> Self {
        Self::degrees(90.0, 135.0)
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    /// Center of bin `k` out of `n` equal bins.
    fn sample(&self, k: usize, n: usize) -> f64 {
        self.start + (k as f64 + 0.5) * self.width() / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub geometry: ArrayGeometry,
    pub kind: CodebookKind,
    pub n_az: usize,
    pub n_el: usize,
    pub beams: Vec<BeamformingVector>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    /// `(az_idx, el_idx)` of beam `i`.
    pub fn grid_position(&self, i: usize) -> (usize, usize) {
        (i % self.n_az, i / self.n_az)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cb: Codebook = serde_json::from_str(s)?;
        if cb.beams.len() != cb.n_az * cb.n_el {
            return Err(Error::Corrupt(format!("codebook has {} beams for a {}x{} grid", cb.beams.len(), cb.n_az, cb.n_el)));
        }
        Ok(cb)
    }
}

/// Builds an `n_az x n_el` codebook on a uniform grid of bin centers; the
/// azimuth index varies fastest.
pub fn build_codebook(
    kind: CodebookKind,
    geometry: &ArrayGeometry,
    n_az: usize,
    n_el: usize,
    az_span: AngleSpan,
    el_span: AngleSpan,
) -> Result<Codebook> {
    geometry.validate()?;
    if n_az == 0 || n_el == 0 {
        return Err(Error::invalid("codebook grid needs at least one beam per axis"));
    }
    for (span, n, axis) in [(az_span, n_az, "azimuth"), (el_span, n_el, "elevation")] {
        if !span.start.is_finite() || !span.end.is_finite() || span.width() < 0.0 {
            return Err(Error::invalid(format!("invalid {axis} span")));
        }
        if span.width() == 0.0 && n > 1 {
            return Err(Error::invalid(format!("zero-length {axis} span cannot hold {n} beams")));
        }
    }
    let mut beams = Vec::with_capacity(n_az * n_el);
    for e in 0..n_el {
        let zenith = el_span.sample(e, n_el);
        for a in 0..n_az {
            let angles = SteeringAngles::from_local(az_span.sample(a, n_az), zenith);
            let mut b = steering_vector(geometry, angles);
            b.beam_id = e * n_az + a;
            beams.push(b);
        }
    }
    Ok(Codebook { geometry: *geometry, kind, n_az, n_el, beams })
}

pub fn build_tx_codebook(
    geometry: &ArrayGeometry,
    n_az: usize,
    n_el: usize,
    az_span: AngleSpan,
    el_span: AngleSpan,
) -> Result<Codebook> {
    build_codebook(CodebookKind::Csirs, geometry, n_az, n_el, az_span, el_span)
}

/// Wide beams formed by combining `group_az x group_el` blocks of adjacent
/// CSI-RS beams. A trailing partial block combines whatever beams remain.
pub fn build_ssb_codebook(csirs: &Codebook, group_az: usize, group_el: usize) -> Result<Codebook> {
    if group_az == 0 || group_el == 0 {
        return Err(Error::invalid("SSB group size must be at least 1"));
    }
    if group_az > csirs.n_az || group_el > csirs.n_el {
        return Err(Error::invalid(format!(
            "SSB group {group_az}x{group_el} exceeds the {}x{} CSI-RS grid",
            csirs.n_az, csirs.n_el
        )));
    }
    let n_az = csirs.n_az.div_ceil(group_az);
    let n_el = csirs.n_el.div_ceil(group_el);
    let dim = csirs.geometry.num_elements();
    let mut beams = Vec::with_capacity(n_az * n_el);
    for ge in 0..n_el {
        for ga in 0..n_az {
            let mut coeffs = vec![Complex64::new(0.0, 0.0); dim];
            let (mut theta, mut phi, mut count) = (0.0, 0.0, 0usize);
            for e in ge * group_el..((ge + 1) * group_el).min(csirs.n_el) {
                for a in ga * group_az..((ga + 1) * group_az).min(csirs.n_az) {
                    let member = &csirs.beams[e * csirs.n_az + a];
                    for (c, m) in coeffs.iter_mut().zip(&member.coefficients) {
                        *c += m;
                    }
                    theta += member.angles.theta;
                    phi += member.angles.phi;
                    count += 1;
                }
            }
            let norm = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Numeric("SSB group combined to a zero vector".into()));
            }
            coeffs.iter_mut().for_each(|c| *c /= norm);
            beams.push(BeamformingVector {
                coefficients: coeffs,
                angles: SteeringAngles { theta: theta / count as f64, phi: phi / count as f64 },
                beam_id: ge * n_az + ga,
            });
        }
    }
    Ok(Codebook { geometry: csirs.geometry, kind: CodebookKind::Ssb, n_az, n_el, beams })
}

/// Which beams are measured as model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SetBPattern {
    /// Set B is a fixed subset of the Set A indices.
    Subset { indices: Vec<usize>, set_a_size: usize },
    /// Set B is a separate (wide-beam) codebook.
    SeparateCodebook { ssb: Codebook },
}

impl SetBPattern {
    pub fn identity(set_a_size: usize) -> Self {
        SetBPattern::Subset { indices: (0..set_a_size).collect(), set_a_size }
    }

    pub fn len(&self) -> usize {
        match self {
            SetBPattern::Subset { indices, .. } => indices.len(),
            SetBPattern::SeparateCodebook { ssb } => ssb.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_subset(&self) -> bool {
        matches!(self, SetBPattern::Subset { .. })
    }

    /// Beam ids of the measured beams, in pattern order. For a subset these
    /// are Set A indices, otherwise SSB ids.
    pub fn beam_ids(&self) -> Vec<usize> {
        match self {
            SetBPattern::Subset { indices, .. } => indices.clone(),
            SetBPattern::SeparateCodebook { ssb } => (0..ssb.len()).collect(),
        }
    }

    /// Position of `beam_id` inside the pattern.
    pub fn position(&self, beam_id: usize) -> Option<usize> {
        match self {
            SetBPattern::Subset { indices, .. } => indices.binary_search(&beam_id).ok(),
            SetBPattern::SeparateCodebook { ssb } => (beam_id < ssb.len()).then_some(beam_id),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SetBPattern::Subset { indices, set_a_size } => {
                if indices.is_empty() {
                    return Err(Error::invalid("empty Set B pattern"));
                }
                if indices.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::invalid("Set B indices must be sorted and unique"));
                }
                if indices.iter().any(|&i| i >= *set_a_size) {
                    return Err(Error::invalid("Set B index outside Set A"));
                }
                Ok(())
            }
            SetBPattern::SeparateCodebook { ssb } => {
                if ssb.is_empty() {
                    return Err(Error::invalid("empty SSB codebook"));
                }
                Ok(())
            }
        }
    }
}

/// Fixed, evenly strided Set B subset covering both angular axes.
///
/// `n_b` is split as `n_az_b * n_el_b` with both factors dividing the Set A
/// grid; the split with the smallest stride imbalance wins, and ties prefer
/// covering more elevation rows. Sizes with no such split fall back to even
/// spacing over the flat index.
pub fn select_set_b(set_a: &Codebook, n_b: usize) -> Result<SetBPattern> {
    let n_a = set_a.len();
    if n_b == 0 || n_b > n_a {
        return Err(Error::invalid(format!("Set B size {n_b} must be in 1..={n_a}")));
    }
    let mut best: Option<(usize, usize, usize)> = None; // (imbalance, stride_az, stride_el)
    for n_el_b in (1..=set_a.n_el).rev() {
        if !n_b.is_multiple_of(n_el_b) || !set_a.n_el.is_multiple_of(n_el_b) {
            continue;
        }
        let n_az_b = n_b / n_el_b;
        if n_az_b == 0 || !set_a.n_az.is_multiple_of(n_az_b) {
            continue;
        }
        let (sa, se) = (set_a.n_az / n_az_b, set_a.n_el / n_el_b);
        let imbalance = sa.abs_diff(se);
        if best.is_none_or(|(b, _, _)| imbalance < b) {
            best = Some((imbalance, sa, se));
        }
    }
    let indices: Vec<usize> = match best {
        Some((_, stride_az, stride_el)) => (0..set_a.n_el)
            .step_by(stride_el)
            .flat_map(|e| (0..set_a.n_az).step_by(stride_az).map(move |a| e * set_a.n_az + a))
            .collect(),
        None => (0..n_b).map(|k| k * n_a / n_b).collect(),
    };
    Ok(SetBPattern::Subset { indices, set_a_size: n_a })
}
