//! Per-beam L1-RSRP, best-RX selection, L1 filtering and Set B reports.

use std::collections::VecDeque;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array_codebook::{BeamformingVector, Codebook, CodebookKind, SetBPattern};
pub use crate::deployment::dbm_to_w;
use crate::deployment::{ChannelRealization, LinkBudget};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Lowest reportable RSRP; keeps nulls finite.
pub const RSRP_FLOOR_DBM: f64 = -200.0;

pub fn w_to_dbm(w: f64) -> f64 {
    if w > 0.0 {
        (10.0 * w.log10() + 30.0).max(RSRP_FLOOR_DBM)
    } else {
        RSRP_FLOOR_DBM
    }
}

/// Beamformed channel coefficient `b_rx^H H b_tx`.
pub fn beam_coefficient(h: &ChannelRealization, b_tx: &BeamformingVector, b_rx: &BeamformingVector) -> Result<Complex64> {
    if b_tx.len() != h.n_tx() {
        return Err(Error::DimensionMismatch { expected: h.n_tx(), actual: b_tx.len() });
    }
    if b_rx.len() != h.n_rx() {
        return Err(Error::DimensionMismatch { expected: h.n_rx(), actual: b_rx.len() });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (r, row) in h.h.outer_iter().enumerate() {
        let hb: Complex64 = row.iter().zip(&b_tx.coefficients).map(|(a, b)| a * b).sum();
        acc += b_rx.coefficients[r].conj() * hb;
    }
    Ok(acc)
}

fn complex_noise<R: Rng>(rng: &mut R, power_w: f64) -> Complex64 {
    let s = (power_w / 2.0).sqrt();
    Complex64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s)
}

/// Received reference-signal power in dBm.
///
/// With `noise_seed = None` the noise term is omitted (genie mode).
pub fn rsrp(
    h: &ChannelRealization,
    b_tx: &BeamformingVector,
    b_rx: &BeamformingVector,
    link: &LinkBudget,
    noise_seed: Option<u64>,
) -> Result<f64> {
    let signal = link.tx_power_w().sqrt() * beam_coefficient(h, b_tx, b_rx)?;
    let y = match noise_seed {
        Some(seed) => signal + complex_noise(&mut stream_rng(seed, &[]), link.noise_power_w()),
        None => signal,
    };
    Ok(w_to_dbm(y.norm_sqr()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsrpVector {
    pub values_dbm: Vec<f64>,
    /// Beam id of each value within the referenced codebook.
    pub beam_ids: Vec<usize>,
    pub codebook: CodebookKind,
    pub t: f64,
    pub t_index: usize,
}

impl RsrpVector {
    pub fn len(&self) -> usize {
        self.values_dbm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_dbm.is_empty()
    }

    /// Position of the strongest value; ties go to the lower position.
    pub fn argmax(&self) -> usize {
        argmax(&self.values_dbm)
    }

    pub fn value_of(&self, beam_id: usize) -> Option<f64> {
        self.beam_ids.iter().position(|&b| b == beam_id).map(|p| self.values_dbm[p])
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Chosen UE receive beam: `(panel, beam within the panel codebook)`.
pub type RxChoice = (usize, usize);

/// Per-TX-beam receive-beam selection on the sliding-window average of the
/// linear RSRP seen by each receive beam.
#[derive(Debug, Clone)]
pub struct RxBeamSelector {
    window: usize,
    history: Vec<VecDeque<f64>>,
}

impl RxBeamSelector {
    pub fn new(window: usize) -> Self {
        Self { window: window.max(1), history: Vec::new() }
    }

    /// Pushes one snapshot of `n_tx x n_rx` linear powers and returns the
    /// selected receive beam (flat index) for each TX beam.
    fn update(&mut self, powers: &[f64], n_tx: usize, n_rx: usize) -> Vec<usize> {
        if self.history.len() != n_tx * n_rx {
            self.history = vec![VecDeque::with_capacity(self.window); n_tx * n_rx];
        }
        for (h, &p) in self.history.iter_mut().zip(powers) {
            if h.len() == self.window {
                h.pop_front();
            }
            h.push_back(p);
        }
        (0..n_tx)
            .map(|t| {
                let means: Vec<f64> = self.history[t * n_rx..(t + 1) * n_rx]
                    .iter()
                    .map(|h| h.iter().sum::<f64>() / h.len() as f64)
                    .collect();
                argmax(&means)
            })
            .collect()
    }
}

/// Linear powers `|b_rx^H H_p b_tx|^2` for every TX beam and every receive
/// beam of every panel; row-major `[tx][rx]` with panels concatenated.
pub fn gain_table(
    channels: &[ChannelRealization],
    tx_set: &[BeamformingVector],
    rx_codebooks: &[Codebook],
) -> Result<(Vec<f64>, Vec<RxChoice>)> {
    if channels.len() != rx_codebooks.len() {
        return Err(Error::DimensionMismatch { expected: channels.len(), actual: rx_codebooks.len() });
    }
    let rx_index: Vec<RxChoice> = rx_codebooks
        .iter()
        .enumerate()
        .flat_map(|(p, cb)| (0..cb.len()).map(move |b| (p, b)))
        .collect();
    let n_rx = rx_index.len();
    let mut out = vec![0.0; tx_set.len() * n_rx];
    for (t, b_tx) in tx_set.iter().enumerate() {
        let mut col = 0;
        for (ch, cb) in channels.iter().zip(rx_codebooks) {
            if b_tx.len() != ch.n_tx() {
                return Err(Error::DimensionMismatch { expected: ch.n_tx(), actual: b_tx.len() });
            }
            let hb: Vec<Complex64> = ch
                .h
                .outer_iter()
                .map(|row| row.iter().zip(&b_tx.coefficients).map(|(a, b)| a * b).sum())
                .collect();
            for b_rx in &cb.beams {
                if b_rx.len() != ch.n_rx() {
                    return Err(Error::DimensionMismatch { expected: ch.n_rx(), actual: b_rx.len() });
                }
                let g: Complex64 = b_rx.coefficients.iter().zip(&hb).map(|(r, x)| r.conj() * x).sum();
                out[t * n_rx + col] = g.norm_sqr();
                col += 1;
            }
        }
    }
    Ok((out, rx_index))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredSet {
    pub rsrp: RsrpVector,
    /// Receive beam used for each TX beam.
    pub rx_choice: Vec<RxChoice>,
}

/// Measures every beam of `tx_set` under its best receive beam across all UE
/// panels. `selector` carries the sliding-window state between instants; a
/// fresh selector picks the instantaneous best.
#[allow(clippy::too_many_arguments)]
pub fn measure_set(
    channels: &[ChannelRealization],
    tx_set: &[BeamformingVector],
    kind: CodebookKind,
    rx_codebooks: &[Codebook],
    link: &LinkBudget,
    t: f64,
    t_index: usize,
    selector: &mut RxBeamSelector,
    noise_seed: Option<u64>,
) -> Result<MeasuredSet> {
    if tx_set.is_empty() || rx_codebooks.iter().all(|c| c.is_empty()) {
        return Err(Error::invalid("measurement needs at least one TX and one RX beam"));
    }
    let (gains, rx_index) = gain_table(channels, tx_set, rx_codebooks)?;
    let n_rx = rx_index.len();
    let p_tx = link.tx_power_w();
    let powers: Vec<f64> = match noise_seed {
        None => gains.iter().map(|g| p_tx * g).collect(),
        Some(seed) => {
            let mut rng = stream_rng(seed, &[t_index as u64]);
            let sigma2 = link.noise_power_w();
            gains
                .iter()
                .map(|g| (Complex64::new((p_tx * g).sqrt(), 0.0) + complex_noise(&mut rng, sigma2)).norm_sqr())
                .collect()
        }
    };
    let picks = selector.update(&powers, tx_set.len(), n_rx);
    let values_dbm = picks.iter().enumerate().map(|(t, &r)| w_to_dbm(powers[t * n_rx + r])).collect();
    Ok(MeasuredSet {
        rsrp: RsrpVector { values_dbm, beam_ids: tx_set.iter().map(|b| b.beam_id).collect(), codebook: kind, t, t_index },
        rx_choice: picks.iter().map(|&r| rx_index[r]).collect(),
    })
}

/// Per-beam mean, in linear power, of the last `window` vectors.
pub fn l1_filter(history: &[RsrpVector], window: usize) -> Result<RsrpVector> {
    let last = history.last().ok_or_else(|| Error::invalid("empty measurement history"))?;
    let window = window.max(1).min(history.len());
    let recent = &history[history.len() - window..];
    if let Some(bad) = recent.iter().find(|v| v.beam_ids != last.beam_ids) {
        return Err(Error::DimensionMismatch { expected: last.len(), actual: bad.len() });
    }
    let values_dbm = (0..last.len())
        .map(|b| w_to_dbm(recent.iter().map(|v| dbm_to_w(v.values_dbm[b])).sum::<f64>() / window as f64))
        .collect();
    Ok(RsrpVector { values_dbm, ..last.clone() })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementReport {
    /// `(beam_id, l1_rsrp_dbm)`, strongest first.
    pub entries: Vec<(usize, f64)>,
    pub t: f64,
    pub t_index: usize,
}

impl MeasurementReport {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn strongest(&self) -> Option<usize> {
        self.entries.first().map(|e| e.0)
    }

    pub fn value_of(&self, beam_id: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == beam_id).map(|e| e.1)
    }
}

/// Sorts the Set B part of `filtered` and keeps the `n_s` strongest beams.
/// Ties go to the lower beam id.
pub fn build_report(filtered: &RsrpVector, pattern: &SetBPattern, n_s: usize) -> Result<MeasurementReport> {
    if n_s == 0 {
        return Err(Error::invalid("a report needs at least one beam"));
    }
    if n_s > pattern.len() {
        return Err(Error::invalid(format!("cannot report {n_s} beams from a Set B of {}", pattern.len())));
    }
    let mut entries: Vec<(usize, f64)> = filtered
        .beam_ids
        .iter()
        .zip(&filtered.values_dbm)
        .filter(|(id, _)| pattern.position(**id).is_some())
        .map(|(&id, &v)| (id, v))
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    entries.truncate(n_s);
    Ok(MeasurementReport { entries, t: filtered.t, t_index: filtered.t_index })
}

/// One JSON-lines record per `(ue, t)`: the Set B report used as model input
/// and the genie Set A measurement used as label source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub drop_id: usize,
    pub ue_id: usize,
    pub t_index: usize,
    pub t: f64,
    pub speed_kmph: f64,
    pub position: [f64; 2],
    pub report: MeasurementReport,
    pub set_a: RsrpVector,
}
