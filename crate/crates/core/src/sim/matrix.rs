//! Batch of experiment cells sharing trained models.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::json_hash;
use crate::models::Model;

use super::campaign::{run_inference_campaign, ExperimentResult, PolicyKind};
use super::collect::train_pipeline;
use super::config::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub label: String,
    /// Training configuration; `None` trains on `test`.
    #[serde(default)]
    pub train: Option<SimConfig>,
    pub test: SimConfig,
    pub policies: Vec<PolicyKind>,
}

impl MatrixCell {
    fn needs_model(&self) -> bool {
        self.policies.iter().any(|p| p.needs_model())
    }

    fn train_config(&self) -> &SimConfig {
        self.train.as_ref().unwrap_or(&self.test)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub cells: Vec<MatrixCell>,
}

/// Result of one cell; a failing cell does not abort the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub label: String,
    pub result: Option<ExperimentResult>,
    pub error: Option<String>,
}

/// Trains every distinct training configuration once, then evaluates all
/// cells. Output order follows `config.cells`.
pub fn run_matrix(config: &MatrixConfig) -> Vec<CellOutcome> {
    let mut wanted: BTreeMap<String, &SimConfig> = BTreeMap::new();
    let mut cell_keys = Vec::with_capacity(config.cells.len());
    for cell in &config.cells {
        let key = if cell.needs_model() {
            match json_hash(cell.train_config()) {
                Ok(h) => {
                    wanted.entry(h.clone()).or_insert(cell.train_config());
                    Some(Ok(h))
                }
                Err(e) => Some(Err(e.to_string())),
            }
        } else {
            None
        };
        cell_keys.push(key);
    }

    let trained: BTreeMap<String, std::result::Result<Model, String>> = wanted
        .into_par_iter()
        .map(|(key, cfg)| {
            log::info!("training model {}", &key[..12.min(key.len())]);
            let model = train_pipeline(cfg).map(|(m, _, _)| m).map_err(|e| e.to_string());
            (key, model)
        })
        .collect();

    config
        .cells
        .par_iter()
        .zip(cell_keys.par_iter())
        .map(|(cell, key)| {
            let run = || -> std::result::Result<ExperimentResult, String> {
                let model = match key {
                    None => None,
                    Some(Err(e)) => return Err(e.clone()),
                    Some(Ok(k)) => Some(trained[k].as_ref().map_err(|e| format!("training failed: {e}"))?),
                };
                let mut res = run_inference_campaign(&cell.test, model, &cell.policies, &cell.label).map_err(|e| e.to_string())?;
                res.train_config_hash = key.as_ref().and_then(|k| k.as_ref().ok().cloned());
                Ok(res)
            };
            match run() {
                Ok(r) => CellOutcome { label: cell.label.clone(), result: Some(r), error: None },
                Err(e) => {
                    log::warn!("cell {} failed: {e}", cell.label);
                    CellOutcome { label: cell.label.clone(), result: None, error: Some(e) }
                }
            }
        })
        .collect()
}

/// Parses a matrix file.
pub fn load_matrix(text: &str) -> Result<MatrixConfig> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_matrix_yields_no_outcomes() {
        assert!(run_matrix(&MatrixConfig::default()).is_empty());
    }

    #[test]
    fn failing_cell_is_isolated() {
        let mut good = SimConfig { seed: 3, ..SimConfig::default() };
        good.layout.sectors_per_site = 1;
        good.scale.eval_drops = 1;
        good.scale.ues_per_sector = 2;
        good.scale.n_instants = 8;
        let mut bad = good.clone();
        bad.n_b = 1000;
        let cfg = MatrixConfig {
            cells: vec![
                MatrixCell { label: "bad".into(), train: None, test: bad, policies: vec![PolicyKind::ExhaustiveGenie] },
                MatrixCell { label: "good".into(), train: None, test: good, policies: vec![PolicyKind::StrongestSetB] },
            ],
        };
        let out = run_matrix(&cfg);
        assert_eq!(out.len(), 2);
        assert!(out[0].result.is_none() && out[0].error.is_some());
        assert_eq!(out[1].label, "good");
        assert!(out[1].result.is_some());
    }
}
