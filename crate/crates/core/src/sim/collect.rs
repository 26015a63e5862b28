use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{collect_samples, split_dataset, Dataset, Split};
use crate::error::Result;
use crate::measurement::ReportRecord;
use crate::models::{train_model, Model, ModelConfig, TrainReport};
use crate::rng::derive_seed;

use super::config::SimConfig;
use super::scenario::{DropRun, Scenario};

const TRAIN_DROPS: u64 = 0xDA7A;
const EVAL_DROPS: u64 = 0xE7A1;
const SPLIT_STREAM: u64 = 0x5B17;

pub fn training_drop_seed(cfg: &SimConfig, drop: usize) -> u64 {
    derive_seed(cfg.seed, &[TRAIN_DROPS, drop as u64])
}

/// Seeds of the evaluation drops. They ignore everything but the base seed,
/// so configs that differ only in speed or antennas see the same UE drops.
pub fn eval_drop_seed(cfg: &SimConfig, drop: usize) -> u64 {
    derive_seed(cfg.seed, &[EVAL_DROPS, drop as u64])
}

/// Simulates one drop and returns one record per `(ue, instant)`, ordered by
/// instant then UE.
pub fn simulate_drop(cfg: &SimConfig, scenario: &Scenario, drop_id: usize, seed: u64) -> Result<Vec<ReportRecord>> {
    let mut run = DropRun::new(cfg, scenario, drop_id, seed);
    let mut out = Vec::with_capacity(run.num_ues() * cfg.scale.n_instants);
    for t_index in 0..cfg.scale.n_instants {
        for idx in 0..run.num_ues() {
            let obs = run.observe(idx, t_index)?;
            let ue = run.ue(idx);
            out.push(ReportRecord {
                drop_id,
                ue_id: ue.id,
                t_index,
                t: run.time(t_index),
                speed_kmph: cfg.speed_kmph,
                position: ue.xy(),
                report: obs.report,
                set_a: obs.label_set_a,
            });
        }
        run.advance();
    }
    Ok(out)
}

/// Report records of all training drops; drops run in parallel and are
/// merged in drop order.
pub fn run_data_collection(cfg: &SimConfig) -> Result<Vec<ReportRecord>> {
    let scenario = Scenario::new(cfg)?;
    let per_drop: Vec<Result<Vec<ReportRecord>>> = (0..cfg.scale.n_drops)
        .into_par_iter()
        .map(|d| simulate_drop(cfg, &scenario, d, training_drop_seed(cfg, d)))
        .collect();
    let mut records = Vec::new();
    for r in per_drop {
        records.extend(r?);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionStats {
    pub records: usize,
    pub samples: usize,
    pub skipped: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Turns report records into a split dataset.
pub fn build_dataset(cfg: &SimConfig, records: &[ReportRecord]) -> Result<(Dataset, CollectionStats)> {
    let scenario = Scenario::new(cfg)?;
    let schema = cfg.schema();
    let collected = collect_samples(records, cfg.use_case, &scenario.pattern, schema.l_o, cfg.l_p, &cfg.antenna.label())?;
    let samples = collected.samples.len();
    let [a, b, c] = cfg.split;
    let ds = split_dataset(schema, collected.samples, (a, b, c), derive_seed(cfg.seed, &[SPLIT_STREAM]))?;
    let stats = CollectionStats {
        records: records.len(),
        samples,
        skipped: collected.skipped,
        train: ds.count(Split::Train),
        val: ds.count(Split::Val),
        test: ds.count(Split::Test),
    };
    log::info!(
        "collected {} samples ({} skipped) from {} records: {}/{}/{} train/val/test",
        stats.samples,
        stats.skipped,
        stats.records,
        stats.train,
        stats.val,
        stats.test
    );
    Ok((ds, stats))
}

pub fn collect_dataset(cfg: &SimConfig) -> Result<(Dataset, CollectionStats)> {
    build_dataset(cfg, &run_data_collection(cfg)?)
}

/// Collects data and trains the configured model family on it.
pub fn train_pipeline(cfg: &SimConfig) -> Result<(Model, TrainReport, Dataset)> {
    let (dataset, _) = collect_dataset(cfg)?;
    let model_cfg = ModelConfig::for_schema(&dataset.schema)?;
    let (model, report) = train_model(&model_cfg, &dataset, &cfg.train)?;
    Ok((model, report, dataset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::UseCase;

    fn tiny(use_case: UseCase) -> SimConfig {
        let mut cfg = SimConfig { seed: 11, use_case, ..SimConfig::default() };
        cfg.layout.sectors_per_site = 1;
        cfg.scale.n_drops = 1;
        cfg.scale.ues_per_sector = 10;
        cfg.scale.n_instants = 50;
        cfg
    }

    #[test]
    fn one_drop_yields_one_spatial_sample_per_ue_instant() {
        let cfg = tiny(UseCase::Sbp2);
        let records = run_data_collection(&cfg).unwrap();
        assert_eq!(records.len(), 500);
        let (ds, stats) = build_dataset(&cfg, &records).unwrap();
        assert_eq!(ds.len(), 500);
        assert_eq!(stats.train + stats.val + stats.test, 500);
    }

    #[test]
    fn temporal_sample_count_matches_window_enumeration() {
        let cfg = tiny(UseCase::Tbp);
        let (ds, _) = collect_dataset(&cfg).unwrap();
        let per_ue = cfg.scale.n_instants - cfg.l_o - cfg.l_p + 1;
        assert_eq!(ds.len(), 10 * per_ue);
    }

    #[test]
    fn labels_come_from_the_target_instant() {
        let cfg = tiny(UseCase::Tbp);
        let records = run_data_collection(&cfg).unwrap();
        let (ds, _) = build_dataset(&cfg, &records).unwrap();
        for s in ds.samples.iter().take(50) {
            let m = &s.meta;
            assert_eq!(m.label_t_index, m.t_index + cfg.l_p);
            let rec = records.iter().find(|r| r.ue_id == m.ue_id && r.t_index == m.label_t_index).unwrap();
            assert_eq!(s.label, rec.set_a.argmax());
        }
    }

    #[test]
    fn collection_is_deterministic() {
        let cfg = tiny(UseCase::Sbp2);
        let a = crate::io::json_hash(&collect_dataset(&cfg).unwrap().0.samples).unwrap();
        let b = crate::io::json_hash(&collect_dataset(&cfg).unwrap().0.samples).unwrap();
        assert_eq!(a, b);
        let other = SimConfig { seed: 12, ..cfg };
        let c = crate::io::json_hash(&collect_dataset(&other).unwrap().0.samples).unwrap();
        assert_ne!(a, c);
    }
}
