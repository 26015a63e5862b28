//! Training samples for spatial and temporal beam prediction, UE-disjoint
//! splitting and JSON-lines persistence.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::array_codebook::SetBPattern;
use crate::error::{Error, Result};
use crate::measurement::{MeasurementReport, ReportRecord};
use crate::rng::stream_rng;

/// Scale, in dB, of the max-referenced input normalization.
pub const NORMALIZATION_SCALE_DB: f64 = 20.0;

const FORMAT_TAG: &str = "beampred-dataset";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UseCase {
    /// Spatial prediction from a separate wide-beam codebook.
    Sbp1,
    /// Spatial prediction from a subset of Set A.
    Sbp2,
    /// Temporal prediction from a window of past Set B reports.
    Tbp,
}

impl UseCase {
    pub fn is_spatial(self) -> bool {
        !matches!(self, UseCase::Tbp)
    }
}

impl std::fmt::Display for UseCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UseCase::Sbp1 => "sbp1",
            UseCase::Sbp2 => "sbp2",
            UseCase::Tbp => "tbp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub use_case: UseCase,
    pub n_b: usize,
    pub n_a: usize,
    pub l_o: usize,
    pub l_p: usize,
}

impl DatasetSchema {
    pub fn input_len(&self) -> usize {
        match self.use_case {
            UseCase::Sbp1 => 2 * self.n_b,
            UseCase::Sbp2 => self.n_b,
            UseCase::Tbp => self.l_o * self.n_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub drop_id: usize,
    pub ue_id: usize,
    /// Instant of the last input measurement.
    pub t_index: usize,
    pub t: f64,
    /// Instant the label refers to.
    pub label_t_index: usize,
    pub label_t: f64,
    pub speed_kmph: f64,
    pub antenna_config: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub input: Vec<f64>,
    pub label: usize,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: DatasetSchema,
    pub samples: Vec<TrainingSample>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, which: Split) -> Vec<&TrainingSample> {
        self.samples.iter().zip(&self.splits).filter(|(_, s)| **s == which).map(|(x, _)| x).collect()
    }

    pub fn count(&self, which: Split) -> usize {
        self.splits.iter().filter(|s| **s == which).count()
    }
}

/// Maps dBm values to `(x - max) / 20 dB`.
pub fn normalize_input(raw_dbm: &[f64]) -> Vec<f64> {
    let max = raw_dbm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    raw_dbm.iter().map(|x| (x - max) / NORMALIZATION_SCALE_DB).collect()
}

/// Set B RSRPs in pattern order; beams missing from a partial report take the
/// weakest reported value.
fn positional_rsrp(report: &MeasurementReport, pattern: &SetBPattern) -> Result<Vec<f64>> {
    let floor = report.entries.last().map(|e| e.1).ok_or_else(|| Error::invalid("empty report"))?;
    let mut out = vec![floor; pattern.len()];
    for &(id, v) in &report.entries {
        let pos = pattern.position(id).ok_or_else(|| Error::invalid(format!("beam {id} is not in Set B")))?;
        out[pos] = v;
    }
    Ok(out)
}

/// Model input of a spatial sample.
///
/// SBP2 uses normalized RSRPs in Set B grid order. SBP1 uses the report in
/// its sorted order followed by each reported beam index divided by the SSB
/// codebook size.
pub fn spatial_input(report: &MeasurementReport, pattern: &SetBPattern, use_case: UseCase) -> Result<Vec<f64>> {
    match use_case {
        UseCase::Sbp2 => Ok(normalize_input(&positional_rsrp(report, pattern)?)),
        UseCase::Sbp1 => {
            let n_b = pattern.len();
            if report.is_empty() {
                return Err(Error::invalid("empty report"));
            }
            let mut rsrp: Vec<f64> = report.entries.iter().map(|e| e.1).collect();
            let mut idx: Vec<f64> = report.entries.iter().map(|e| e.0 as f64 / n_b as f64).collect();
            let last = *rsrp.last().unwrap();
            rsrp.resize(n_b, last);
            idx.resize(n_b, -1.0);
            let mut input = normalize_input(&rsrp);
            input.extend(idx);
            Ok(input)
        }
        UseCase::Tbp => Err(Error::invalid("temporal samples need a report window")),
    }
}

/// Model input of a temporal sample: the window's positional RSRPs, oldest
/// first, normalized against the window maximum.
pub fn temporal_input<'a>(
    window: impl IntoIterator<Item = &'a MeasurementReport>,
    pattern: &SetBPattern,
) -> Result<Vec<f64>> {
    let mut raw = Vec::new();
    for report in window {
        raw.extend(positional_rsrp(report, pattern)?);
    }
    Ok(normalize_input(&raw))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collected {
    pub samples: Vec<TrainingSample>,
    /// Instants without a full window or without a label instant.
    pub skipped: usize,
}

/// Builds samples from per-instant report records.
///
/// Records are grouped per `(drop, ue)` and ordered by instant. Spatial
/// samples use the report and the genie label of the same instant; temporal
/// samples use reports `t - l_o + 1 ..= t` and the genie label at `t + l_p`.
pub fn collect_samples(
    records: &[ReportRecord],
    use_case: UseCase,
    pattern: &SetBPattern,
    l_o: usize,
    l_p: usize,
    antenna_config: &str,
) -> Result<Collected> {
    let mut per_ue: BTreeMap<(usize, usize), Vec<&ReportRecord>> = BTreeMap::new();
    for r in records {
        per_ue.entry((r.drop_id, r.ue_id)).or_default().push(r);
    }
    let mut samples = Vec::new();
    let mut skipped = 0;
    let label_of = |r: &ReportRecord| r.set_a.beam_ids[r.set_a.argmax()];
    for ((drop_id, ue_id), mut recs) in per_ue {
        recs.sort_by_key(|r| r.t_index);
        let meta = |last: &ReportRecord, target: &ReportRecord| SampleMeta {
            drop_id,
            ue_id,
            t_index: last.t_index,
            t: last.t,
            label_t_index: target.t_index,
            label_t: target.t,
            speed_kmph: last.speed_kmph,
            antenna_config: antenna_config.to_string(),
        };
        if use_case.is_spatial() {
            for r in recs {
                samples.push(TrainingSample {
                    input: spatial_input(&r.report, pattern, use_case)?,
                    label: label_of(r),
                    meta: meta(r, r),
                });
            }
            continue;
        }
        if l_o == 0 || l_p == 0 {
            return Err(Error::invalid("temporal prediction needs l_o >= 1 and l_p >= 1"));
        }
        let by_index: BTreeMap<usize, &ReportRecord> = recs.iter().map(|r| (r.t_index, *r)).collect();
        for r in &recs {
            let t = r.t_index;
            let window: Option<Vec<&ReportRecord>> =
                (t + 1).checked_sub(l_o).map(|start| (start..=t).filter_map(|i| by_index.get(&i).copied()).collect());
            let target = by_index.get(&(t + l_p));
            match (window, target) {
                (Some(w), Some(target)) if w.len() == l_o => samples.push(TrainingSample {
                    input: temporal_input(w.iter().map(|x| &x.report), pattern)?,
                    label: label_of(target),
                    meta: meta(r, target),
                }),
                _ => skipped += 1,
            }
        }
    }
    Ok(Collected { samples, skipped })
}

/// Assigns whole UEs to train/val/test so no UE appears in two splits.
pub fn split_dataset(
    schema: DatasetSchema,
    samples: Vec<TrainingSample>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Dataset> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|r| !(0.0..=1.0).contains(r)) || ((r_train + r_val + r_test) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut ues: Vec<(usize, usize)> = samples.iter().map(|s| (s.meta.drop_id, s.meta.ue_id)).collect();
    ues.sort_unstable();
    ues.dedup();
    let n = ues.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 UEs to split, got {n}")));
    }
    ues.shuffle(&mut stream_rng(seed, &[0x5911]));
    let n_val = ((r_val * n as f64).round() as usize).max(1);
    let n_test = ((r_test * n as f64).round() as usize).max(1);
    let n_train = n - n_val - n_test;
    let assignment: BTreeMap<(usize, usize), Split> = ues
        .iter()
        .enumerate()
        .map(|(i, ue)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (*ue, s)
        })
        .collect();
    let splits = samples.iter().map(|s| assignment[&(s.meta.drop_id, s.meta.ue_id)]).collect();
    Ok(Dataset { schema, samples, splits })
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    schema: DatasetSchema,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct Record<'a> {
    input: std::borrow::Cow<'a, [f64]>,
    label: usize,
    meta: std::borrow::Cow<'a, SampleMeta>,
    split: Split,
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut w: W) -> Result<()> {
    let header = Header {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        schema: dataset.schema,
        count: dataset.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (s, split) in dataset.samples.iter().zip(&dataset.splits) {
        let rec = Record { input: (&s.input[..]).into(), label: s.label, meta: std::borrow::Cow::Borrowed(&s.meta), split: *split };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Loads a dataset; with `expected`, the stored schema must match it.
pub fn load_dataset(path: &Path, expected: Option<&DatasetSchema>) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or_else(|| Error::Corrupt("missing dataset header".into()))??;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| Error::Corrupt(format!("bad dataset header: {e}")))?;
    if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
        return Err(Error::Corrupt(format!("unsupported dataset format {} v{}", header.format, header.version)));
    }
    if let Some(want) = expected {
        if *want != header.schema {
            return Err(Error::Schema(format!("dataset schema {:?} does not match {:?}", header.schema, want)));
        }
    }
    let input_len = header.schema.input_len();
    let mut samples = Vec::with_capacity(header.count);
    let mut splits = Vec::with_capacity(header.count);
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Corrupt(format!("line {}: {e}", n + 2)))?;
        if rec.input.len() != input_len || rec.label >= header.schema.n_a {
            return Err(Error::Corrupt(format!("line {}: sample does not fit the schema", n + 2)));
        }
        samples.push(TrainingSample { input: rec.input.into_owned(), label: rec.label, meta: rec.meta.into_owned() });
        splits.push(rec.split);
    }
    if samples.len() != header.count {
        return Err(Error::Corrupt(format!("header announces {} samples, found {}", header.count, samples.len())));
    }
    Ok(Dataset { schema: header.schema, samples, splits })
}

/// One row per sample: split, label, ids, then the input vector.
pub fn export_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = dataset.schema.input_len();
    let mut header = vec!["split".to_string(), "label".into(), "drop_id".into(), "ue_id".into(), "t_index".into()];
    header.extend((0..n).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (s, split) in dataset.samples.iter().zip(&dataset.splits) {
        let mut row = vec![
            format!("{split:?}").to_lowercase(),
            s.label.to_string(),
            s.meta.drop_id.to_string(),
            s.meta.ue_id.to_string(),
            s.meta.t_index.to_string(),
        ];
        row.extend(s.input.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_codebook::CodebookKind;
    use crate::measurement::{build_report, RsrpVector};

    fn record(ue: usize, t_index: usize, set_a: Vec<f64>, pattern: &SetBPattern) -> ReportRecord {
        let a = RsrpVector {
            beam_ids: (0..set_a.len()).collect(),
            values_dbm: set_a,
            codebook: CodebookKind::Csirs,
            t: t_index as f64 * 0.08,
            t_index,
        };
        let b = RsrpVector {
            beam_ids: pattern.beam_ids(),
            values_dbm: pattern.beam_ids().iter().map(|&i| a.values_dbm[i]).collect(),
            ..a.clone()
        };
        ReportRecord {
            drop_id: 0,
            ue_id: ue,
            t_index,
            t: a.t,
            speed_kmph: 30.0,
            position: [0.0, 0.0],
            report: build_report(&b, pattern, pattern.len()).unwrap(),
            set_a: a,
        }
    }

    fn ramp(n: usize, peak: usize) -> Vec<f64> {
        (0..n).map(|i| -100.0 - (i as f64 - peak as f64).abs()).collect()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_input(&[-70.0, -70.0]), vec![0.0, 0.0]);
        assert_eq!(normalize_input(&[-60.0, -80.0]), vec![0.0, -1.0]);
    }

    #[test]
    fn spatial_shapes_and_label() {
        let pattern = SetBPattern::Subset { indices: (0..64).step_by(2).collect(), set_a_size: 64 };
        let recs = vec![record(0, 0, ramp(64, 7), &pattern)];
        let c = collect_samples(&recs, UseCase::Sbp2, &pattern, 1, 1, "4x8").unwrap();
        assert_eq!(c.samples.len(), 1);
        assert_eq!(c.samples[0].input.len(), 32);
        assert_eq!(c.samples[0].label, 7);
    }

    #[test]
    fn temporal_window_counts_and_alignment() {
        let pattern = SetBPattern::identity(32);
        let recs: Vec<ReportRecord> = (0..50).map(|t| record(3, t, ramp(32, t % 32), &pattern)).collect();
        let c = collect_samples(&recs, UseCase::Tbp, &pattern, 5, 1, "4x8").unwrap();
        // Enumeration oracle: instants whose window and label instant both exist.
        let expected = (0..50usize).filter(|&t| t >= 4 && t + 1 < 50).count();
        assert_eq!(c.samples.len(), expected);
        assert_eq!(c.skipped, 50 - expected);
        for s in &c.samples {
            assert_eq!(s.input.len(), 160);
            assert_eq!(s.meta.label_t_index, s.meta.t_index + 1);
            assert!((s.meta.label_t - (s.meta.t + 0.08)).abs() < 1e-12);
            assert_eq!(s.label, (s.meta.t_index + 1) % 32);
        }
    }

    #[test]
    fn split_by_ue() {
        let pattern = SetBPattern::identity(4);
        let recs: Vec<ReportRecord> =
            (0..100).flat_map(|ue| (0..3).map(move |t| (ue, t))).map(|(ue, t)| record(ue, t, ramp(4, 1), &pattern)).collect();
        let schema = DatasetSchema { use_case: UseCase::Sbp2, n_b: 4, n_a: 4, l_o: 1, l_p: 1 };
        let samples = collect_samples(&recs, UseCase::Sbp2, &pattern, 1, 1, "x").unwrap().samples;
        let ds = split_dataset(schema, samples.clone(), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((ds.count(Split::Train), ds.count(Split::Val), ds.count(Split::Test)), (240, 30, 30));
        let again = split_dataset(schema, samples.clone(), (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(ds.splits, again.splits);
        let few: Vec<_> = samples.iter().filter(|s| s.meta.ue_id < 10).cloned().collect();
        let ds10 = split_dataset(schema, few, (0.8, 0.1, 0.1), 2).unwrap();
        assert_eq!((ds10.count(Split::Train), ds10.count(Split::Val), ds10.count(Split::Test)), (24, 3, 3));
        let two: Vec<_> = samples.iter().filter(|s| s.meta.ue_id < 2).cloned().collect();
        assert!(split_dataset(schema, two, (0.8, 0.1, 0.1), 2).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let pattern = SetBPattern::identity(4);
        let recs: Vec<ReportRecord> = (0..5).map(|ue| record(ue, 0, vec![-71.123456789, -80.1, -99.0, -63.3], &pattern)).collect();
        let schema = DatasetSchema { use_case: UseCase::Sbp2, n_b: 4, n_a: 4, l_o: 1, l_p: 1 };
        let samples = collect_samples(&recs, UseCase::Sbp2, &pattern, 1, 1, "x").unwrap().samples;
        let ds = split_dataset(schema, samples, (0.6, 0.2, 0.2), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path, Some(&schema)).unwrap(), ds);

        let wrong = DatasetSchema { n_b: 8, ..schema };
        assert!(matches!(load_dataset(&path, Some(&wrong)), Err(Error::Schema(_))));

        let empty = Dataset { schema, samples: vec![], splits: vec![] };
        save_dataset(&empty, &path).unwrap();
        assert_eq!(load_dataset(&path, None).unwrap(), empty);

        std::fs::write(&path, "{not json\n").unwrap();
        assert!(matches!(load_dataset(&path, None), Err(Error::Corrupt(_))));
    }
}
