//! Beam-prediction KPIs, the throughput proxy and percentile summaries.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::UseCase;
use crate::error::{Error, Result};

/// Spectral-efficiency ceiling of the throughput proxy, bit/s/Hz.
pub const MAX_SPECTRAL_EFFICIENCY: f64 = 7.4;
/// Share of resources spent on common overhead.
pub const DEFAULT_OVERHEAD: f64 = 0.30;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordMeta {
    pub experiment: String,
    pub drop_id: usize,
    pub ue_id: usize,
    pub t_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub predicted_top_k: Vec<usize>,
    pub genie_index: usize,
    pub genie_rsrp_dbm: f64,
    /// Genie-mode RSRP of the predicted Top-1 beam.
    pub predicted_top1_rsrp_dbm: f64,
    /// Measurement instants the two RSRP values come from.
    pub genie_t_index: usize,
    pub predicted_t_index: usize,
    pub meta: RecordMeta,
}

impl PredictionRecord {
    pub fn top1(&self) -> Option<usize> {
        self.predicted_top_k.first().copied()
    }
}

/// Fraction of records whose Top-K list contains the genie beam.
pub fn top_k_accuracy(records: &[PredictionRecord], k: usize) -> Result<f64> {
    if k == 0 || records.is_empty() {
        return Err(Error::invalid("Top-K accuracy needs k >= 1 and at least one record"));
    }
    let hits = records.iter().filter(|r| r.predicted_top_k.iter().take(k).any(|&i| i == r.genie_index)).count();
    Ok(hits as f64 / records.len() as f64)
}

/// RSRP gap `R_genie - R_predicted` in dB.
pub fn rsrp_error(record: &PredictionRecord) -> Result<f64> {
    if record.genie_t_index != record.predicted_t_index {
        return Err(Error::invalid(format!(
            "RSRP values from different instants ({} vs {})",
            record.genie_t_index, record.predicted_t_index
        )));
    }
    Ok(record.genie_rsrp_dbm - record.predicted_top1_rsrp_dbm)
}

/// Fraction of records with an RSRP gap strictly below 1 dB.
pub fn acc_1db(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("1 dB accuracy needs at least one record"));
    }
    let mut hits = 0usize;
    for r in records {
        if rsrp_error(r)? < 1.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

/// Share of Set A measurements avoided.
pub fn mor(use_case: UseCase, n_b: usize, n_a: usize, l_o: usize, l_p: usize) -> Result<f64> {
    if n_a == 0 || n_b > n_a {
        return Err(Error::invalid(format!("MOR needs n_b <= n_a, got {n_b} > {n_a}")));
    }
    let (b, a) = (n_b as f64, n_a as f64);
    match use_case {
        UseCase::Sbp1 | UseCase::Sbp2 => Ok(1.0 - b / a),
        UseCase::Tbp => {
            if l_o == 0 || l_p == 0 {
                return Err(Error::invalid("temporal MOR needs l_o >= 1 and l_p >= 1"));
            }
            Ok(1.0 - (l_o as f64 * b) / ((l_o + l_p) as f64 * a))
        }
    }
}

/// Full-buffer Shannon proxy in Mbps with equal resource sharing among
/// `n_coscheduled` UEs.
pub fn throughput_proxy(sinr_linear: f64, bandwidth_hz: f64, overhead: f64, n_coscheduled: usize) -> f64 {
    let se = (1.0 + sinr_linear.max(0.0)).log2().min(MAX_SPECTRAL_EFFICIENCY);
    (1.0 - overhead) * bandwidth_hz * se / n_coscheduled.max(1) as f64 / 1e6
}

/// `signal / (noise + sum of interference)`, all in watts.
pub fn sinr(signal_w: f64, interference_w: &[f64], noise_w: f64) -> f64 {
    signal_w / (noise_w + interference_w.iter().sum::<f64>())
}

/// Linear-interpolated empirical percentiles (`q` in 0..=100).
pub fn percentiles(values: &[f64], qs: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("percentiles of an empty list"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("percentiles of NaN values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    qs.iter()
        .map(|&q| {
            if !(0.0..=100.0).contains(&q) {
                return Err(Error::invalid(format!("percentile {q} outside 0..=100")));
            }
            let pos = q / 100.0 * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
}

impl Percentiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        let p = percentiles(values, &[5.0, 50.0, 95.0])?;
        Ok(Self { p5: p[0], p50: p[1], p95: p[2] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiRecord {
    pub count: usize,
    pub top_k_accuracy: BTreeMap<usize, f64>,
    /// Sorted RSRP gaps; the empirical CDF.
    pub rsrp_errors_db: Vec<f64>,
    pub acc_1db: f64,
    pub mor: f64,
    /// Per-UE mean throughput percentiles, Mbps.
    pub throughput: Option<Percentiles>,
}

impl KpiRecord {
    pub fn compute(records: &[PredictionRecord], ks: &[usize], mor: f64, ue_throughput_mbps: &[f64]) -> Result<Self> {
        let top_k_accuracy = ks.iter().map(|&k| Ok((k, top_k_accuracy(records, k)?))).collect::<Result<_>>()?;
        let mut rsrp_errors_db = records.iter().map(rsrp_error).collect::<Result<Vec<_>>>()?;
        rsrp_errors_db.sort_by(f64::total_cmp);
        let throughput = if ue_throughput_mbps.is_empty() { None } else { Some(Percentiles::of(ue_throughput_mbps)?) };
        Ok(Self { count: records.len(), top_k_accuracy, rsrp_errors_db, acc_1db: acc_1db(records)?, mor, throughput })
    }

    pub fn top1(&self) -> f64 {
        self.top_k_accuracy.get(&1).copied().unwrap_or(f64::NAN)
    }

    pub fn rsrp_error_percentiles(&self) -> Result<Percentiles> {
        Percentiles::of(&self.rsrp_errors_db)
    }

    /// Long-format rows `(metric, key, value)`: one per K, one per percentile.
    pub fn rows(&self) -> Vec<(String, String, f64)> {
        let mut rows: Vec<(String, String, f64)> =
            self.top_k_accuracy.iter().map(|(k, v)| ("top_k_accuracy".into(), k.to_string(), *v)).collect();
        rows.push(("acc_1db".into(), String::new(), self.acc_1db));
        rows.push(("mor".into(), String::new(), self.mor));
        rows.push(("count".into(), String::new(), self.count as f64));
        if let Ok(p) = self.rsrp_error_percentiles() {
            for (k, v) in [("p5", p.p5), ("p50", p.p50), ("p95", p.p95)] {
                rows.push(("rsrp_error_db".into(), k.into(), v));
            }
        }
        if let Some(p) = self.throughput {
            for (k, v) in [("p5", p.p5), ("p50", p.p50), ("p95", p.p95)] {
                rows.push(("throughput_mbps".into(), k.into(), v));
            }
        }
        rows
    }
}

/// Writes labeled KPI tables as CSV: `label,metric,key,value`.
pub fn write_kpi_csv<'a>(path: &Path, kpis: impl IntoIterator<Item = (&'a str, &'a KpiRecord)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "metric", "key", "value"])?;
    for (label, kpi) in kpis {
        for (metric, key, value) in kpi.rows() {
            w.write_record([label, &metric, &key, &value.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Two-column `value cumulative_fraction` dump of the RSRP-gap CDF.
pub fn write_cdf(path: &Path, sorted_values: &[f64]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# e_rsrp_db cdf")?;
    let n = sorted_values.len() as f64;
    for (i, v) in sorted_values.iter().enumerate() {
        writeln!(w, "{v} {}", (i + 1) as f64 / n)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(top: Vec<usize>, genie: usize, r_i: f64, r_hat: f64) -> PredictionRecord {
        PredictionRecord {
            predicted_top_k: top,
            genie_index: genie,
            genie_rsrp_dbm: r_i,
            predicted_top1_rsrp_dbm: r_hat,
            genie_t_index: 0,
            predicted_t_index: 0,
            meta: RecordMeta { experiment: "t".into(), drop_id: 0, ue_id: 0, t_index: 0 },
        }
    }

    #[test]
    fn mor_values() {
        let r4 = |x: f64| (x * 1e4).round() / 1e4;
        assert_eq!(mor(UseCase::Sbp2, 8, 64, 1, 1).unwrap(), 0.875);
        assert_eq!(mor(UseCase::Sbp2, 16, 64, 1, 1).unwrap(), 0.75);
        assert_eq!(mor(UseCase::Sbp2, 32, 64, 1, 1).unwrap(), 0.5);
        assert_eq!(mor(UseCase::Sbp2, 64, 64, 1, 1).unwrap(), 0.0);
        assert_eq!(r4(mor(UseCase::Tbp, 32, 32, 5, 1).unwrap()), 0.1667);
        assert_eq!(r4(mor(UseCase::Tbp, 16, 32, 5, 1).unwrap()), 0.5833);
        assert_eq!(r4(mor(UseCase::Tbp, 8, 32, 5, 1).unwrap()), 0.7917);
        assert!(mor(UseCase::Tbp, 8, 32, 0, 1).is_err());
        assert!(mor(UseCase::Sbp2, 65, 64, 1, 1).is_err());
    }

    #[test]
    fn rsrp_error_examples() {
        assert_eq!(rsrp_error(&rec(vec![3], 3, -60.0, -60.0)).unwrap(), 0.0);
        assert_eq!(rsrp_error(&rec(vec![1], 3, -60.0, -63.0)).unwrap(), 3.0);
        let mut r = rec(vec![1], 3, -60.0, -63.0);
        r.predicted_t_index = 1;
        assert!(rsrp_error(&r).is_err());
    }

    #[test]
    fn one_db_margin_is_strict() {
        assert_eq!(acc_1db(&[rec(vec![0], 0, -60.0, -60.0)]).unwrap(), 1.0);
        assert_eq!(acc_1db(&[rec(vec![1], 0, -60.0, -61.0)]).unwrap(), 0.0);
        assert_eq!(acc_1db(&[rec(vec![1], 0, -60.0, -60.999)]).unwrap(), 1.0);
    }

    #[test]
    fn throughput_examples() {
        assert_eq!(throughput_proxy(0.0, 80e6, DEFAULT_OVERHEAD, 1), 0.0);
        assert!((throughput_proxy(1.0, 80e6, DEFAULT_OVERHEAD, 1) - 56.0).abs() < 1e-9);
        assert!((throughput_proxy(1e9, 80e6, DEFAULT_OVERHEAD, 1) - 0.7 * 80.0 * 7.4).abs() < 1e-9);
        assert!((throughput_proxy(1.0, 80e6, DEFAULT_OVERHEAD, 4) - 14.0).abs() < 1e-9);
        let mut prev = 0.0;
        for i in 0..200 {
            let t = throughput_proxy(i as f64 * 2.0, 80e6, DEFAULT_OVERHEAD, 1);
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let p = percentiles(&v, &[50.0]).unwrap();
        assert!((p[0] - 50.5).abs() < 1e-12);
        let c = Percentiles::of(&[4.0; 7]).unwrap();
        assert_eq!((c.p5, c.p50, c.p95), (4.0, 4.0, 4.0));
        assert!(percentiles(&[], &[50.0]).is_err());
    }

    #[test]
    fn random_predictor_binomial() {
        let mut rng = stream_rng(11, &[]);
        let n = 10_000;
        let records: Vec<PredictionRecord> =
            (0..n).map(|_| rec(vec![rng.random_range(0..64)], rng.random_range(0..64), -60.0, -70.0)).collect();
        let acc = top_k_accuracy(&records, 1).unwrap();
        let p = 1.0 / 64.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((acc - p).abs() <= 3.0 * sigma, "acc {acc}");
    }

    #[test]
    fn exports() {
        let records = vec![rec(vec![0, 1], 0, -60.0, -60.0), rec(vec![2, 1], 1, -60.0, -62.0)];
        let k = KpiRecord::compute(&records, &[1, 2], 0.75, &[10.0, 20.0]).unwrap();
        assert_eq!(k.top1(), 0.5);
        assert_eq!(k.top_k_accuracy[&2], 1.0);
        let dir = tempfile::tempdir().unwrap();
        write_kpi_csv(&dir.path().join("k.csv"), [("m", &k)]).unwrap();
        write_cdf(&dir.path().join("c.dat"), &k.rsrp_errors_db).unwrap();
        let text = std::fs::read_to_string(dir.path().join("c.dat")).unwrap();
        assert!(text.ends_with("2 1\n"));
    }

    proptest! {
        #[test]
        fn accuracy_monotone_in_k(seed in 0u64..1000) {
            let mut rng = stream_rng(seed, &[]);
            let records: Vec<PredictionRecord> = (0..50)
                .map(|_| {
                    let mut perm: Vec<usize> = (0..8).collect();
                    rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
                    rec(perm, rng.random_range(0..8), -60.0, -61.0)
                })
                .collect();
            let mut prev = 0.0;
            for k in 1..=8 {
                let a = top_k_accuracy(&records, k).unwrap();
                prop_assert!(a >= prev && (0.0..=1.0).contains(&a));
                prev = a;
            }
            prop_assert_eq!(prev, 1.0);
        }

        #[test]
        fn percentiles_ordered(v in prop::collection::vec(-1e3f64..1e3, 1..200)) {
            let p = Percentiles::of(&v).unwrap();
            prop_assert!(p.p5 <= p.p50 && p.p50 <= p.p95);
        }
    }
}
