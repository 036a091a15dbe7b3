//! Hyper-parameter sweep: a list of explicit combinations, each trained with
//! the shared seed list; the figure of merit is the average return over the
//! final 10% of episodes.

use super::{train_one_seed, ExperimentConfig, HarnessError, Mode, RunRecord, Summary};
use crate::agent::ReplayKind;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;

/// One point of the sweep grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepCombo {
    pub name: String,
    pub batch: usize,
    pub learning_rate: f64,
    pub filters: [usize; 2],
    pub fc_units: Vec<usize>,
    pub gamma: f64,
    pub per_alpha: f64,
    pub per_beta0: f64,
    pub capacity: usize,
}

impl Default for SweepCombo {
    fn default() -> Self {
        Self {
            name: "default".into(),
            batch: 32,
            learning_rate: 0.001,
            filters: [16, 32],
            fc_units: vec![64],
            gamma: 0.99,
            per_alpha: 0.6,
            per_beta0: 0.4,
            capacity: 50_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub name: String,
    /// Mean return over the final 10% of episodes, averaged across seeds.
    pub converged_reward: f64,
    pub per_seed: Vec<f64>,
}

fn apply_combo(cfg: &ExperimentConfig, combo: &SweepCombo) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.train.adam.minibatch = combo.batch;
    c.train.adam.learning_rate = combo.learning_rate;
    c.train.gamma = combo.gamma;
    c.train.capacity = combo.capacity;
    if let ReplayKind::Prioritized { alpha, beta0, eps } = &mut c.train.replay {
        *alpha = combo.per_alpha;
        *beta0 = combo.per_beta0;
        let _ = eps;
    }
    c.net.filters = combo.filters;
    c.net.fc_units = combo.fc_units.clone();
    c
}

/// Runs every combo with the shared seed list and reports converged rewards.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, HarnessError> {
    if cfg.sweep_combos.is_empty() {
        return Err(HarnessError::Config("sweep mode needs sweep_combos".into()));
    }
    let source =
        cfg.map.as_ref().ok_or_else(|| HarnessError::Config("sweep mode needs a map".into()))?;
    let map = source.load()?;
    let mut out = Vec::new();
    for combo in &cfg.sweep_combos {
        let ccfg = apply_combo(cfg, combo);
        let env = ccfg.build_env(map.clone());
        let per_seed: Vec<f64> = std::thread::scope(|scope| {
            let handles: Vec<_> = ccfg
                .seeds
                .iter()
                .map(|&seed| {
                    let env = &env;
                    let ccfg = &ccfg;
                    scope.spawn(move || {
                        let (rows, _) = train_one_seed(ccfg, env, seed);
                        let tail = (rows.len() / 10).max(1);
                        rows[rows.len() - tail..].iter().map(|r| r.ret).sum::<f64>() / tail as f64
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sweep job panicked")).collect()
        });
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        out.push(SweepRow { name: combo.name.clone(), converged_reward: mean, per_seed });
    }
    Ok(out)
}

pub(super) fn sweep_mode(cfg: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let rows = sweep(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut text = String::from("name,converged_reward\n");
    for r in &rows {
        let _ = writeln!(text, "{},{}", r.name, r.converged_reward);
    }
    fs::write(cfg.out_dir.join("sweep.csv"), text)?;
    let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
    fs::write(cfg.out_dir.join("summary.json"), json)?;
    Ok(RunRecord {
        config_hash: cfg.hash(),
        rows_per_seed: Vec::new(),
        summary: Summary {
            config_hash: cfg.hash(),
            mode: Mode::Sweep,
            per_seed: Vec::new(),
            mean_coverage_pct: 0.0,
            mean_overlap_pct: 0.0,
        },
    })
}
