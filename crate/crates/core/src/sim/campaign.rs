//! Closed-loop evaluation: measure, report, predict, serve, monitor.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{baseline_strongest_set_b, exhaustive_genie};
use crate::dataset::{spatial_input, temporal_input, UseCase};
use crate::deployment::{dbm_to_w, ChannelRealization};
use crate::error::{Error, Result};
use crate::io::json_hash;
use crate::kpi::{acc_1db, sinr, throughput_proxy, KpiRecord, PredictionRecord, RecordMeta, DEFAULT_OVERHEAD};
use crate::measurement::{beam_coefficient, MeasurementReport, RsrpVector};
use crate::models::Model;
use crate::rng::stream_rng;

use super::collect::eval_drop_seed;
use super::config::SimConfig;
use super::scenario::{DropRun, Observation, Scenario};

const INTERFERENCE_STREAM: u64 = 0x1F7E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Serve the model's Top-1 (or the refined pick among its Top-K).
    Model,
    /// The model under performance monitoring with legacy fallback.
    ModelWithFallback,
    StrongestSetB,
    SampleAndHold,
    ExhaustiveGenie,
}

impl PolicyKind {
    pub fn needs_model(self) -> bool {
        matches!(self, Self::Model | Self::ModelWithFallback)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorDecision {
    KeepModel,
    FallbackLegacy,
}

/// Falls back iff the window's 1 dB accuracy is below `tau`. Returns the
/// decision and the accuracy that triggered it.
pub fn monitor_and_fallback(window: &[PredictionRecord], tau: f64) -> Result<(MonitorDecision, f64)> {
    let acc = acc_1db(window)?;
    let decision = if acc < tau { MonitorDecision::FallbackLegacy } else { MonitorDecision::KeepModel };
    Ok((decision, acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackEvent {
    pub drop_id: usize,
    pub t_index: usize,
    pub decision: MonitorDecision,
    pub acc_1db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub label: String,
    pub use_case: UseCase,
    pub n_b: usize,
    pub n_a: usize,
    pub speed_kmph: f64,
    pub antenna: String,
    pub mor: f64,
    pub kpi: BTreeMap<PolicyKind, KpiRecord>,
    /// Records per policy; identical for all policies.
    pub n_records: usize,
    pub fallback_events: Vec<FallbackEvent>,
    /// Records served by the legacy procedure after a fallback.
    pub fallback_records: usize,
    /// Digest of every observation the policies were evaluated on.
    pub stream_hash: String,
    pub config_hash: String,
    pub train_config_hash: Option<String>,
    pub wall_clock_s: f64,
}

impl ExperimentResult {
    /// Digest of everything except the wall-clock time.
    pub fn result_hash(&self) -> Result<String> {
        json_hash(&Self { wall_clock_s: 0.0, ..self.clone() })
    }
}

/// Last `l_o` reports of one UE.
#[derive(Debug, Clone)]
pub struct TbpBuffer {
    capacity: usize,
    reports: VecDeque<MeasurementReport>,
}

impl TbpBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), reports: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, report: MeasurementReport) {
        if self.reports.len() == self.capacity {
            self.reports.pop_front();
        }
        self.reports.push_back(report);
    }

    pub fn is_full(&self) -> bool {
        self.reports.len() == self.capacity
    }

    pub fn latest(&self) -> Option<&MeasurementReport> {
        self.reports.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MeasurementReport> {
        self.reports.iter()
    }
}

#[derive(Debug, Clone)]
enum Pick {
    /// Ranked Set A indices decided when the prediction was made.
    Ranked(Vec<usize>),
    /// Decided at the target instant from the full sweep.
    Genie,
}

#[derive(Debug, Clone)]
struct Pending {
    target: usize,
    picks: Vec<(PolicyKind, Pick)>,
}

struct Monitor {
    window: VecDeque<PredictionRecord>,
    size: usize,
    tau: f64,
    fallback: bool,
}

impl Monitor {
    fn observe(&mut self, record: PredictionRecord) -> Result<Option<(MonitorDecision, f64)>> {
        if self.window.len() == self.size {
            self.window.pop_front();
        }
        self.window.push_back(record);
        if self.window.len() < self.size {
            return Ok(None);
        }
        let (decision, acc) = monitor_and_fallback(self.window.make_contiguous(), self.tau)?;
        let now_fallback = decision == MonitorDecision::FallbackLegacy;
        let changed = now_fallback != self.fallback;
        self.fallback = now_fallback;
        Ok(changed.then_some((decision, acc)))
    }
}

#[derive(Default)]
struct PolicyLog {
    records: Vec<PredictionRecord>,
    /// `(drop, ue) -> (throughput sum, samples)`.
    throughput: BTreeMap<(usize, usize), (f64, usize)>,
}

fn ranked_set_a(set_a: &RsrpVector) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..set_a.len()).collect();
    idx.sort_by(|&a, &b| set_a.values_dbm[b].total_cmp(&set_a.values_dbm[a]).then(a.cmp(&b)));
    idx.into_iter().map(|i| set_a.beam_ids[i]).collect()
}

fn hash_observation(h: &mut Sha256, drop_id: usize, ue_id: usize, obs: &Observation) {
    h.update((drop_id as u64).to_le_bytes());
    h.update((ue_id as u64).to_le_bytes());
    h.update((obs.set_a.t_index as u64).to_le_bytes());
    for v in &obs.set_a.values_dbm {
        h.update(v.to_le_bytes());
    }
    for (id, v) in &obs.report.entries {
        h.update((*id as u64).to_le_bytes());
        h.update(v.to_le_bytes());
    }
}

/// Interfering sectors with the beam each transmits at `t_index`.
fn active_interferers(scenario: &Scenario, seed: u64, t_index: usize, serving: usize) -> Vec<(usize, usize)> {
    scenario
        .layout
        .sectors
        .iter()
        .filter(|s| s.id != serving)
        .map(|s| {
            let beam = stream_rng(seed, &[INTERFERENCE_STREAM, t_index as u64, s.id as u64]).random_range(0..scenario.set_a.len());
            (s.id, beam)
        })
        .collect()
}

/// Campaign result together with the per-policy record logs.
#[derive(Debug, Clone)]
pub struct CampaignOutput {
    pub result: ExperimentResult,
    pub records: BTreeMap<PolicyKind, Vec<PredictionRecord>>,
    /// Per model-with-fallback record: served by the legacy procedure.
    pub legacy_served: Vec<bool>,
}

/// Runs the closed loop on the evaluation drops of `cfg`.
///
/// Every policy is scored at exactly the instants where the model emits a
/// prediction, against the same observation stream.
pub fn run_inference_campaign(
    cfg: &SimConfig,
    model: Option<&Model>,
    policies: &[PolicyKind],
    label: &str,
) -> Result<ExperimentResult> {
    Ok(run_campaign_detailed(cfg, model, policies, label)?.result)
}

/// [`run_inference_campaign`] keeping every prediction record.
pub fn run_campaign_detailed(
    cfg: &SimConfig,
    model: Option<&Model>,
    policies: &[PolicyKind],
    label: &str,
) -> Result<CampaignOutput> {
    let started = Instant::now();
    if policies.is_empty() {
        return Err(Error::invalid("no policies to evaluate"));
    }
    let schema = cfg.schema();
    let needs_model = policies.iter().any(|p| p.needs_model());
    if needs_model {
        let m = model.ok_or_else(|| Error::Config("model policies need trained weights".into()))?;
        if !m.config.accepts(&schema) {
            return Err(Error::Schema(format!("weights for {:?} do not match schema {schema:?}", m.config)));
        }
    }
    let scenario = Scenario::new(cfg)?;
    if !scenario.pattern.is_subset()
        && policies.iter().any(|p| matches!(p, PolicyKind::StrongestSetB | PolicyKind::SampleAndHold))
    {
        return Err(Error::Config("Set B baselines need Set B to be a subset of Set A".into()));
    }
    let n_a = cfg.set_a_size();
    let k_max = cfg.top_k.iter().copied().max().unwrap_or(1).max(cfg.refine_top_k.unwrap_or(1)).min(n_a);
    let (window, horizon, n_inst) = (cfg.window(), cfg.horizon(), cfg.scale.n_instants);
    let noise_w = cfg.link.noise_power_w();
    let p_tx = cfg.link.tx_power_w();

    let mut logs: BTreeMap<PolicyKind, PolicyLog> = policies.iter().map(|&p| (p, PolicyLog::default())).collect();
    let mut hasher = Sha256::new();
    let mut events = Vec::new();
    let mut fallback_records = 0;
    let mut legacy_served = Vec::new();

    for drop in 0..cfg.scale.eval_drops {
        let seed = eval_drop_seed(cfg, drop);
        let mut run = DropRun::new(cfg, &scenario, drop, seed);
        let n_ues = run.num_ues();
        let mut buffers: Vec<TbpBuffer> = (0..n_ues).map(|_| TbpBuffer::new(window)).collect();
        let mut pending: Vec<VecDeque<Pending>> = vec![VecDeque::new(); n_ues];
        let mut monitor = Monitor { window: VecDeque::new(), size: cfg.monitor.window, tau: cfg.monitor.tau, fallback: false };

        for t_index in 0..n_inst {
            for u in 0..n_ues {
                let obs = run.observe(u, t_index)?;
                let ue = run.ue(u).clone();
                hash_observation(&mut hasher, drop, ue.id, &obs);
                buffers[u].push(obs.report.clone());

                // Predict for t + horizon once the window is full.
                if buffers[u].is_full() && t_index + horizon < n_inst {
                    let latest = buffers[u].latest().expect("full buffer");
                    let model_rank = match (needs_model, model) {
                        (true, Some(m)) => {
                            let input = if cfg.use_case.is_spatial() {
                                spatial_input(latest, &scenario.pattern, cfg.use_case)?
                            } else {
                                temporal_input(buffers[u].iter(), &scenario.pattern)?
                            };
                            Some(m.forward(&input, k_max)?.top_k)
                        }
                        _ => None,
                    };
                    let report_rank: Vec<usize> = latest.entries.iter().map(|e| e.0).collect();
                    let picks = policies
                        .iter()
                        .map(|&p| {
                            let pick = match p {
                                PolicyKind::Model | PolicyKind::ModelWithFallback => Pick::Ranked(model_rank.clone().expect("model checked")),
                                PolicyKind::StrongestSetB | PolicyKind::SampleAndHold => {
                                    baseline_strongest_set_b(latest, &scenario.pattern)?;
                                    Pick::Ranked(report_rank.clone())
                                }
                                PolicyKind::ExhaustiveGenie => Pick::Genie,
                            };
                            Ok((p, pick))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    pending[u].push_back(Pending { target: t_index + horizon, picks });
                }

                // Serve and score predictions due now.
                if pending[u].front().is_some_and(|p| p.target == t_index) {
                    let due = pending[u].pop_front().expect("checked");
                    let set_a = &obs.set_a;
                    let genie = exhaustive_genie(set_a);
                    let genie_rsrp = set_a.values_dbm[genie];
                    let genie_rank = ranked_set_a(set_a);
                    let interference: Vec<(Vec<ChannelRealization>, usize)> = if cfg.interference {
                        active_interferers(&scenario, seed, t_index, ue.serving_sector)
                            .into_iter()
                            .map(|(s, b)| (run.channels_from(&ue, &scenario.layout.sectors[s], run.time(t_index)), b))
                            .collect()
                    } else {
                        Vec::new()
                    };
                    let meta = RecordMeta { experiment: label.to_string(), drop_id: drop, ue_id: ue.id, t_index };
                    let n_co = cfg.scale.ues_per_sector;
                    for (policy, pick) in due.picks {
                        let mut ranked = match pick {
                            Pick::Ranked(r) => r,
                            Pick::Genie => genie_rank.clone(),
                        };
                        if policy.needs_model() {
                            if let Some(k) = cfg.refine_top_k {
                                let k = k.min(ranked.len());
                                let best = (0..k)
                                    .max_by(|&a, &b| {
                                        set_a.values_dbm[ranked[a]].total_cmp(&set_a.values_dbm[ranked[b]]).then(b.cmp(&a))
                                    })
                                    .expect("k >= 1");
                                let beam = ranked.remove(best);
                                ranked.insert(0, beam);
                            }
                        }
                        let model_record = PredictionRecord {
                            predicted_top_k: ranked.clone(),
                            genie_index: genie,
                            genie_rsrp_dbm: genie_rsrp,
                            predicted_top1_rsrp_dbm: set_a.values_dbm[ranked[0]],
                            genie_t_index: t_index,
                            predicted_t_index: set_a.t_index,
                            meta: meta.clone(),
                        };
                        let record = if policy == PolicyKind::ModelWithFallback {
                            let legacy = monitor.fallback;
                            legacy_served.push(legacy);
                            if let Some((decision, acc)) = monitor.observe(model_record.clone())? {
                                log::info!("drop {drop} t {t_index}: {decision:?} at windowed 1 dB accuracy {acc:.3}");
                                events.push(FallbackEvent { drop_id: drop, t_index, decision, acc_1db: acc });
                            }
                            if legacy {
                                fallback_records += 1;
                                PredictionRecord {
                                    predicted_top_k: genie_rank.clone(),
                                    predicted_top1_rsrp_dbm: genie_rsrp,
                                    ..model_record
                                }
                            } else {
                                model_record
                            }
                        } else {
                            model_record
                        };
                        let served = record.predicted_top_k[0];
                        let signal = dbm_to_w(obs.set_a_instant.values_dbm[served]);
                        let (panel, rx_beam) = obs.rx_choice[served];
                        let b_rx = &scenario.rx_codebooks[panel].beams[rx_beam];
                        let interf: Vec<f64> = interference
                            .iter()
                            .map(|(chs, b)| {
                                let g = beam_coefficient(&chs[panel], &scenario.set_a.beams[*b], b_rx)?;
                                Ok(p_tx * g.norm_sqr())
                            })
                            .collect::<Result<_>>()?;
                        let tput = throughput_proxy(sinr(signal, &interf, noise_w), cfg.link.bandwidth_hz, DEFAULT_OVERHEAD, n_co);
                        let log = logs.get_mut(&policy).expect("policy registered");
                        let e = log.throughput.entry((drop, ue.id)).or_insert((0.0, 0));
                        e.0 += tput;
                        e.1 += 1;
                        log.records.push(record);
                    }
                }
            }
            run.advance();
        }
    }

    let mor = cfg.mor()?;
    let counts: Vec<usize> = logs.values().map(|l| l.records.len()).collect();
    if counts.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::invalid("policies were evaluated on different record counts"));
    }
    let n_records = counts.first().copied().unwrap_or(0);
    if n_records == 0 {
        return Err(Error::invalid("campaign produced no records"));
    }
    let mut kpi = BTreeMap::new();
    let mut records = BTreeMap::new();
    for (policy, log) in logs {
        let per_ue: Vec<f64> = log.throughput.values().map(|(s, n)| s / *n as f64).collect();
        kpi.insert(policy, KpiRecord::compute(&log.records, &cfg.top_k, mor, &per_ue)?);
        records.insert(policy, log.records);
    }
    let result = ExperimentResult {
        label: label.to_string(),
        use_case: cfg.use_case,
        n_b: cfg.set_b_size(),
        n_a,
        speed_kmph: cfg.speed_kmph,
        antenna: cfg.antenna.label(),
        mor,
        kpi,
        n_records,
        fallback_events: events,
        fallback_records,
        stream_hash: hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        config_hash: json_hash(cfg)?,
        train_config_hash: None,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok(CampaignOutput { result, records, legacy_served })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::UseCase;
    use crate::models::ModelConfig;

    fn tiny(use_case: UseCase) -> SimConfig {
        let mut cfg = SimConfig { seed: 5, use_case, ..SimConfig::default() };
        cfg.layout.sectors_per_site = 1;
        cfg.scale.eval_drops = 1;
        cfg.scale.ues_per_sector = 4;
        cfg.scale.n_instants = 12;
        cfg
    }

    fn record(hit: bool) -> PredictionRecord {
        PredictionRecord {
            predicted_top_k: vec![0],
            genie_index: 0,
            genie_rsrp_dbm: -80.0,
            predicted_top1_rsrp_dbm: if hit { -80.5 } else { -90.0 },
            genie_t_index: 0,
            predicted_t_index: 0,
            meta: RecordMeta { experiment: String::new(), drop_id: 0, ue_id: 0, t_index: 0 },
        }
    }

    #[test]
    fn monitor_threshold_is_strict() {
        let window: Vec<_> = (0..10).map(|i| record(i < 8)).collect();
        assert_eq!(monitor_and_fallback(&window, 0.8).unwrap(), (MonitorDecision::KeepModel, 0.8));
        let window: Vec<_> = (0..10).map(|i| record(i < 7)).collect();
        let (d, acc) = monitor_and_fallback(&window, 0.8).unwrap();
        assert_eq!(d, MonitorDecision::FallbackLegacy);
        assert!((acc - 0.7).abs() < 1e-12);
        assert!(monitor_and_fallback(&[], 0.8).is_err());
    }

    #[test]
    fn genie_policy_is_perfect() {
        let cfg = tiny(UseCase::Sbp2);
        let res = run_inference_campaign(&cfg, None, &[PolicyKind::ExhaustiveGenie, PolicyKind::StrongestSetB], "g").unwrap();
        let g = &res.kpi[&PolicyKind::ExhaustiveGenie];
        assert_eq!(g.top1(), 1.0);
        assert_eq!(g.acc_1db, 1.0);
        assert!(g.rsrp_errors_db.iter().all(|e| *e == 0.0));
        let b = &res.kpi[&PolicyKind::StrongestSetB];
        assert!(b.top1() <= 1.0 && b.count == g.count);
        assert!(b.throughput.unwrap().p50 <= g.throughput.unwrap().p50 + 1e-9);
    }

    #[test]
    fn policies_are_paired_and_runs_reproducible() {
        let cfg = tiny(UseCase::Tbp);
        let model = Model::new(ModelConfig::for_schema(&cfg.schema()).unwrap(), 1).unwrap();
        let policies = [PolicyKind::Model, PolicyKind::ModelWithFallback, PolicyKind::SampleAndHold, PolicyKind::ExhaustiveGenie];
        let a = run_inference_campaign(&cfg, Some(&model), &policies, "p").unwrap();
        let per_ue = cfg.scale.n_instants - cfg.l_o - cfg.l_p + 1;
        assert_eq!(a.n_records, 4 * per_ue);
        assert!(a.kpi.values().all(|k| k.count == a.n_records));
        let b = run_inference_campaign(&cfg, Some(&model), &policies, "p").unwrap();
        assert_eq!(a.result_hash().unwrap(), b.result_hash().unwrap());
        assert_eq!(a.stream_hash, b.stream_hash);
    }

    #[test]
    fn untrained_model_triggers_fallback_to_legacy() {
        let mut cfg = tiny(UseCase::Sbp2);
        cfg.monitor.window = 8;
        cfg.monitor.tau = 0.99;
        let model = Model::new(ModelConfig::for_schema(&cfg.schema()).unwrap(), 3).unwrap();
        let res = run_inference_campaign(&cfg, Some(&model), &[PolicyKind::Model, PolicyKind::ModelWithFallback], "f").unwrap();
        assert_eq!(res.fallback_events.first().map(|e| e.decision), Some(MonitorDecision::FallbackLegacy));
        assert!(res.fallback_records > 0);
        assert!(res.kpi[&PolicyKind::ModelWithFallback].acc_1db >= res.kpi[&PolicyKind::Model].acc_1db);
    }

    #[test]
    fn legacy_records_have_zero_rsrp_error() {
        let mut cfg = tiny(UseCase::Sbp2);
        cfg.monitor.window = 8;
        cfg.monitor.tau = 0.99;
        let model = Model::new(ModelConfig::for_schema(&cfg.schema()).unwrap(), 3).unwrap();
        let out = run_campaign_detailed(&cfg, Some(&model), &[PolicyKind::ModelWithFallback], "f").unwrap();
        let recs = &out.records[&PolicyKind::ModelWithFallback];
        assert_eq!(recs.len(), out.legacy_served.len());
        assert_eq!(out.legacy_served.iter().filter(|l| **l).count(), out.result.fallback_records);
        for (r, legacy) in recs.iter().zip(&out.legacy_served) {
            if *legacy {
                assert_eq!(r.genie_rsrp_dbm - r.predicted_top1_rsrp_dbm, 0.0);
            }
        }
    }

    #[test]
    fn zero_threshold_never_falls_back() {
        let mut cfg = tiny(UseCase::Sbp2);
        cfg.monitor.window = 4;
        cfg.monitor.tau = 0.0;
        let model = Model::new(ModelConfig::for_schema(&cfg.schema()).unwrap(), 3).unwrap();
        let res = run_inference_campaign(&cfg, Some(&model), &[PolicyKind::ModelWithFallback], "f").unwrap();
        assert!(res.fallback_events.is_empty());
        assert_eq!(res.fallback_records, 0);
    }

    #[test]
    fn temporal_predictions_wait_for_a_full_buffer() {
        let cfg = tiny(UseCase::Tbp);
        let out = run_campaign_detailed(&cfg, None, &[PolicyKind::SampleAndHold], "b").unwrap();
        let recs = &out.records[&PolicyKind::SampleAndHold];
        let first = recs.iter().map(|r| r.meta.t_index).min().unwrap();
        assert_eq!(first, cfg.l_o - 1 + cfg.l_p);
        let mut buf = TbpBuffer::new(3);
        for _ in 0..2 {
            buf.push(MeasurementReport::default());
            assert!(!buf.is_full());
        }
        buf.push(MeasurementReport::default());
        buf.push(MeasurementReport::default());
        assert!(buf.is_full());
        assert_eq!(buf.iter().count(), 3);
    }

    #[test]
    fn rejects_missing_or_mismatched_model() {
        let cfg = tiny(UseCase::Sbp2);
        assert!(matches!(run_inference_campaign(&cfg, None, &[PolicyKind::Model], "x"), Err(Error::Config(_))));
        let tbp = tiny(UseCase::Tbp);
        let wrong = Model::new(ModelConfig::for_schema(&tbp.schema()).unwrap(), 1).unwrap();
        assert!(matches!(run_inference_campaign(&cfg, Some(&wrong), &[PolicyKind::Model], "x"), Err(Error::Schema(_))));
        assert!(run_inference_campaign(&cfg, None, &[], "x").is_err());
    }

    #[test]
    fn evaluation_drops_ignore_speed() {
        let a = tiny(UseCase::Sbp2);
        let b = SimConfig { speed_kmph: 60.0, ..a.clone() };
        let sa = Scenario::new(&a).unwrap();
        let ra = DropRun::new(&a, &sa, 0, eval_drop_seed(&a, 0));
        let rb = DropRun::new(&b, &sa, 0, eval_drop_seed(&b, 0));
        assert_eq!(ra.ue(0).position, rb.ue(0).position);
    }
}
