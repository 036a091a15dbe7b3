//! Experiment orchestration: configuration, the five run modes (train, eval,
//! bench, sweep, contraction), metrics persistence, and plot-data emission.
//! Runs are deterministic per (config, seed list); seeds execute as
//! independent parallel jobs and results merge in seed order.

mod plotdata;
mod sweep;

pub use plotdata::{emit_plotdata, smooth};
pub use sweep::{sweep, SweepCombo, SweepRow};

use crate::agent::{self, EpisodeRow, EvalSummary, TrainConfig, Trainer};
use crate::contraction::{
    rate_experiment, RateSchedule, SamplingDist, TabularMdp,
};
use crate::encoder::EncoderMode;
use crate::env::{
    ActionMode, ActionSet, Env, EpisodeConfig, GridMap, MapError, MapGenParams, SensorModel,
};
use crate::net::{HeadKind, NetworkSpec, QNetwork};
use crate::planners::{self, HybridPolicy, PlannerEpisode};
use crate::Real;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("map error: {0}")]
    Map(#[from] MapError),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] crate::net::CheckpointError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
    Bench,
    Sweep,
    Contraction,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSource {
    /// Path to an ASCII map file.
    File(PathBuf),
    /// Parameters for the random generator.
    Generate(MapGenParams),
}

impl MapSource {
    pub fn load(&self) -> Result<GridMap, HarnessError> {
        match self {
            MapSource::File(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| HarnessError::Config(format!("map file {path:?}: {e}")))?;
                Ok(GridMap::parse(&text)?)
            }
            MapSource::Generate(params) => Ok(GridMap::generate(params)?),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Zigzag,
    Bastar,
    Rl,
    Hybrid,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Zigzag => "zigzag",
            Method::Bastar => "bastar",
            Method::Rl => "rl",
            Method::Hybrid => "hybrid",
        }
    }
}

/// Network architecture knobs (input size and action count come from the
/// map and action set).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub filters: [usize; 2],
    pub fc_units: Vec<usize>,
    pub dueling: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { filters: [16, 32], fc_units: vec![64], dueling: true }
    }
}

/// One experiment: a single human-editable TOML document. CLI flags override
/// individual fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Map for train/eval/noise runs.
    pub map: Option<MapSource>,
    /// Fixture list for bench mode.
    pub bench_maps: Vec<MapSource>,
    pub encoder: EncoderMode,
    pub action_mode: ActionMode,
    pub eta: f64,
    pub lambda: f64,
    /// 0 selects 4 * free-cell-count automatically.
    pub step_cap: usize,
    /// Sensor flip probability.
    pub noise_rho: f64,
    pub train: TrainConfig,
    pub net: NetConfig,
    /// Method for eval mode and training method for train mode (rl or
    /// hybrid).
    pub method: Method,
    /// Methods compared in bench mode.
    pub methods: Vec<Method>,
    pub eval_episodes: usize,
    /// Checkpoint to evaluate (eval mode with rl/hybrid).
    pub checkpoint: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Trailing window for the training summary.
    pub summary_window: usize,
    /// Moving-average window for plot data.
    pub smoothing_window: usize,
    pub sweep_combos: Vec<SweepCombo>,
    pub contraction: ContractionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Train,
            map: None,
            bench_maps: Vec::new(),
            encoder: EncoderMode::Known,
            action_mode: ActionMode::Cardinal,
            eta: 0.9,
            lambda: 0.5,
            step_cap: 0,
            noise_rho: 0.0,
            train: TrainConfig::default(),
            net: NetConfig::default(),
            method: Method::Rl,
            methods: vec![Method::Zigzag, Method::Bastar],
            eval_episodes: 10,
            checkpoint: None,
            seeds: vec![0],
            out_dir: PathBuf::from("out"),
            summary_window: 100,
            smoothing_window: 10,
            sweep_combos: Vec::new(),
            contraction: ContractionConfig::default(),
        }
    }
}

/// Parameters of the contraction-lab mode.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ContractionConfig {
    pub states: usize,
    pub actions: usize,
    pub gamma: f64,
    pub iters: usize,
    pub step_scale: f64,
    /// Geometric decay of the skewed visitation profile.
    pub skew_decay: f64,
    pub per_alpha: f64,
    pub per_eps: f64,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        Self {
            states: 5,
            actions: 2,
            gamma: 0.9,
            iters: 5000,
            step_scale: 0.5,
            skew_decay: 0.7,
            per_alpha: 0.6,
            per_eps: 1e-6,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(format!("bad config: {e}")))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| HarnessError::Config(format!("config {:?}: {e}", path.as_ref())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// FNV-1a over the canonical serialization.
    pub fn hash(&self) -> String {
        let text = self.to_toml();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seed list is empty".into()));
        }
        if !(0.0..0.5).contains(&self.noise_rho) {
            return Err(HarnessError::Config(format!(
                "noise_rho {} outside [0, 0.5)",
                self.noise_rho
            )));
        }
        if !(0.0 < self.eta && self.eta <= 1.0) {
            return Err(HarnessError::Config(format!("eta {} outside (0, 1]", self.eta)));
        }
        Ok(())
    }

    /// Builds the environment for a given map.
    pub fn build_env(&self, map: GridMap) -> Env {
        let cap = if self.step_cap == 0 { 4 * map.free_cell_count() } else { self.step_cap };
        let sensor = if self.noise_rho > 0.0 {
            SensorModel::with_noise(self.noise_rho)
        } else {
            SensorModel::noiseless()
        };
        Env::new(
            map,
            EpisodeConfig::new(self.eta, cap, self.lambda),
            sensor,
            ActionSet::new(self.action_mode),
        )
    }

    /// Network spec matching the environment and encoder mode.
    pub fn build_spec(&self, env: &Env) -> NetworkSpec {
        let (h, w) = self.encoder.tensor_dims(env.map().height(), env.map().width());
        let head = if self.net.dueling { HeadKind::Dueling } else { HeadKind::Plain };
        NetworkSpec::new(h, w, env.action_set().len())
            .with_filters(self.net.filters[0], self.net.filters[1])
            .with_fc_units(self.net.fc_units.clone())
            .with_head(head)
    }

    /// Train config with the IS-annealing horizon resolved (0 = auto:
    /// episodes * step cap).
    pub fn resolved_train(&self, env: &Env) -> TrainConfig {
        let mut t = self.train.clone();
        if t.beta_horizon == 0 {
            t.beta_horizon = t.episodes.saturating_mul(env.config().step_cap).max(1);
        }
        t
    }
}

/// Per-seed training/evaluation summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub episodes: usize,
    /// Means over the trailing summary window.
    pub mean_coverage_pct: f64,
    pub mean_overlap_pct: f64,
    pub mean_return: f64,
    /// First episode whose trailing 20-episode mean coverage reaches the
    /// target.
    pub episodes_to_threshold: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub mode: Mode,
    pub per_seed: Vec<SeedSummary>,
    pub mean_coverage_pct: f64,
    pub mean_overlap_pct: f64,
}

/// Everything a run produced, in memory.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config_hash: String,
    pub rows_per_seed: Vec<(u64, Vec<EpisodeRow>)>,
    pub summary: Summary,
}

fn seed_summary(seed: u64, rows: &[EpisodeRow], window: usize, eta_pct: f64) -> SeedSummary {
    let n = rows.len();
    let w = window.min(n).max(1);
    let tail = &rows[n - w..];
    let mean = |f: fn(&EpisodeRow) -> f64| tail.iter().map(f).sum::<f64>() / w as f64;
    SeedSummary {
        seed,
        episodes: n,
        mean_coverage_pct: mean(|r| r.coverage_pct),
        mean_overlap_pct: mean(|r| r.overlap_pct),
        mean_return: mean(|r| r.ret),
        episodes_to_threshold: episodes_to_threshold(rows, eta_pct),
    }
}

/// First episode whose trailing 20-episode mean coverage reaches the target
/// percentage.
pub fn episodes_to_threshold(rows: &[EpisodeRow], target_pct: f64) -> Option<usize> {
    const WINDOW: usize = 20;
    let mut sum = 0.0;
    for (i, row) in rows.iter().enumerate() {
        sum += row.coverage_pct;
        if i >= WINDOW {
            sum -= rows[i - WINDOW].coverage_pct;
        }
        let count = (i + 1).min(WINDOW);
        if count == WINDOW && sum / count as f64 >= target_pct {
            return Some(i);
        }
    }
    None
}

fn summarize(
    cfg: &ExperimentConfig,
    rows_per_seed: &[(u64, Vec<EpisodeRow>)],
) -> Summary {
    let per_seed: Vec<SeedSummary> = rows_per_seed
        .iter()
        .map(|(seed, rows)| seed_summary(*seed, rows, cfg.summary_window, cfg.eta * 100.0))
        .collect();
    let n = per_seed.len() as f64;
    Summary {
        config_hash: cfg.hash(),
        mode: cfg.mode,
        mean_coverage_pct: per_seed.iter().map(|s| s.mean_coverage_pct).sum::<f64>() / n,
        mean_overlap_pct: per_seed.iter().map(|s| s.mean_overlap_pct).sum::<f64>() / n,
        per_seed,
    }
}

pub fn write_rows_csv(path: &Path, rows: &[EpisodeRow]) -> Result<(), HarnessError> {
    let mut text = String::with_capacity(rows.len() * 48 + 64);
    text.push_str(EpisodeRow::CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_summary(out_dir: &Path, summary: &Summary) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(out_dir.join("summary.json"), json)?;
    Ok(())
}

fn planner_rows(env: &Env, method: Method, episodes: usize, seed0: u64) -> Vec<EpisodeRow> {
    (0..episodes)
        .map(|ep| {
            let seed = seed0.wrapping_add(ep as u64);
            let out = match method {
                Method::Zigzag => planners::zigzag_episode(env, seed),
                Method::Bastar => planners::ba_star_episode(env, seed),
                _ => unreachable!("planner_rows only handles scripted methods"),
            };
            planner_row(ep, &out)
        })
        .collect()
}

fn planner_row(episode: usize, out: &PlannerEpisode) -> EpisodeRow {
    EpisodeRow {
        episode,
        steps: out.steps,
        coverage_pct: out.coverage_pct,
        overlap_pct: out.overlap_pct,
        ret: out.ret,
        epsilon: 0.0,
        loss_mean: 0.0,
    }
}

/// Trains the hybrid controller: zigzag segments as macro transitions, RL
/// repositioning, same metrics schema as pure-RL training.
pub fn hybrid_train(
    env: &Env,
    spec: NetworkSpec,
    cfg: TrainConfig,
    mode: EncoderMode,
    seed: u64,
) -> (Vec<EpisodeRow>, Trainer) {
    use rand::{RngCore, SeedableRng};
    let mut seeder = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F01);
    let episodes = cfg.episodes;
    let early = cfg.early_stop;
    let mut trainer = Trainer::new(spec, cfg, mode, seed);
    let mut rows = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let env_seed = seeder.next_u64();
        trainer.begin_episode();
        let out = planners::hybrid_episode(env, HybridPolicy::Training(&mut trainer), env_seed);
        rows.push(EpisodeRow {
            episode,
            steps: out.steps,
            coverage_pct: out.coverage_pct,
            overlap_pct: out.overlap_pct,
            ret: out.ret,
            epsilon: trainer.epsilon_now(),
            loss_mean: trainer.episode_loss_mean(),
        });
        if let Some(stop) = early {
            if rows.len() >= stop.window {
                let tail = &rows[rows.len() - stop.window..];
                let mc = tail.iter().map(|r| r.coverage_pct).sum::<f64>() / stop.window as f64;
                if mc >= stop.min_coverage_pct {
                    break;
                }
            }
        }
    }
    (rows, trainer)
}

/// Greedy hybrid evaluation.
pub fn hybrid_evaluate(
    net: &QNetwork<Real>,
    env: &Env,
    mode: EncoderMode,
    episodes: usize,
    seed0: u64,
) -> EvalSummary {
    let mut cov = 0.0;
    let mut over = 0.0;
    let mut steps = 0.0;
    let mut ret = 0.0;
    for ep in 0..episodes {
        let out = planners::hybrid_episode(
            env,
            HybridPolicy::Frozen { net, mode },
            seed0.wrapping_add(ep as u64),
        );
        cov += out.coverage_pct;
        over += out.overlap_pct;
        steps += out.steps as f64;
        ret += out.ret;
    }
    let n = episodes as f64;
    EvalSummary {
        episodes,
        mean_coverage_pct: cov / n,
        mean_overlap_pct: over / n,
        mean_steps: steps / n,
        mean_return: ret / n,
    }
}

fn train_one_seed(cfg: &ExperimentConfig, env: &Env, seed: u64) -> (Vec<EpisodeRow>, Trainer) {
    let spec = cfg.build_spec(env);
    let tcfg = cfg.resolved_train(env);
    match cfg.method {
        Method::Hybrid => hybrid_train(env, spec, tcfg, cfg.encoder, seed),
        _ => {
            let out = agent::train(env, spec, tcfg, cfg.encoder, seed);
            (out.rows, out.trainer)
        }
    }
}

/// Train mode: one training run per seed (parallel jobs), metrics CSV and a
/// checkpoint per seed, plot data, and a summary.
fn train_mode(cfg: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let source =
        cfg.map.as_ref().ok_or_else(|| HarnessError::Config("train mode needs a map".into()))?;
    let map = source.load()?;
    let env = cfg.build_env(map);
    let results: Vec<(u64, Vec<EpisodeRow>, Trainer)> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let env = &env;
                scope.spawn(move || {
                    let (rows, trainer) = train_one_seed(cfg, env, seed);
                    (seed, rows, trainer)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed job panicked")).collect()
    });
    fs::create_dir_all(&cfg.out_dir)?;
    let mut rows_per_seed = Vec::new();
    for (seed, rows, trainer) in results {
        write_rows_csv(&cfg.out_dir.join(format!("metrics_seed{seed}.csv")), &rows)?;
        trainer
            .online()
            .save_checkpoint_file(trainer.adam_state(), cfg.out_dir.join(format!("checkpoint_seed{seed}.cvqn")))?;
        rows_per_seed.push((seed, rows));
    }
    emit_plotdata(&rows_per_seed, cfg.smoothing_window, &cfg.out_dir.join("plotdata"))?;
    let summary = summarize(cfg, &rows_per_seed);
    write_summary(&cfg.out_dir, &summary)?;
    Ok(RunRecord { config_hash: cfg.hash(), rows_per_seed, summary })
}

/// Eval mode: runs the configured method greedily and writes per-episode
/// rows plus a summary.
fn eval_mode(cfg: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let source =
        cfg.map.as_ref().ok_or_else(|| HarnessError::Config("eval mode needs a map".into()))?;
    let map = source.load()?;
    let env = cfg.build_env(map);
    let mut rows_per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let rows = match cfg.method {
            Method::Zigzag | Method::Bastar => {
                planner_rows(&env, cfg.method, cfg.eval_episodes, seed)
            }
            Method::Rl | Method::Hybrid => {
                let path = cfg.checkpoint.as_ref().ok_or_else(|| {
                    HarnessError::Config("eval of rl/hybrid needs a checkpoint".into())
                })?;
                let (net, _adam) = QNetwork::<Real>::load_checkpoint_file(path)?;
                (0..cfg.eval_episodes)
                    .map(|ep| {
                        let s = seed.wrapping_add(ep as u64);
                        match cfg.method {
                            Method::Rl => {
                                let summary = agent::evaluate(&net, &env, cfg.encoder, 1, s);
                                EpisodeRow {
                                    episode: ep,
                                    steps: summary.mean_steps as usize,
                                    coverage_pct: summary.mean_coverage_pct,
                                    overlap_pct: summary.mean_overlap_pct,
                                    ret: summary.mean_return,
                                    epsilon: 0.0,
                                    loss_mean: 0.0,
                                }
                            }
                            _ => {
                                let out = planners::hybrid_episode(
                                    &env,
                                    HybridPolicy::Frozen { net: &net, mode: cfg.encoder },
                                    s,
                                );
                                planner_row(ep, &out)
                            }
                        }
                    })
                    .collect()
            }
        };
        rows_per_seed.push((seed, rows));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    for (seed, rows) in &rows_per_seed {
        write_rows_csv(&cfg.out_dir.join(format!("metrics_seed{seed}.csv")), rows)?;
    }
    let summary = summarize(cfg, &rows_per_seed);
    write_summary(&cfg.out_dir, &summary)?;
    Ok(RunRecord { config_hash: cfg.hash(), rows_per_seed, summary })
}

/// One bench-mode result line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub map: String,
    pub mean_coverage_pct: f64,
    pub mean_overlap_pct: f64,
    pub mean_steps: f64,
    /// Training episodes to the coverage threshold (rl/hybrid only).
    pub episodes_to_threshold: Option<usize>,
}

/// Bench mode: every configured method on every fixture. RL and hybrid are
/// trained on the fixture first (per the train config), then evaluated
/// greedily.
pub fn bench(cfg: &ExperimentConfig) -> Result<Vec<BenchRow>, HarnessError> {
    if cfg.bench_maps.is_empty() {
        return Err(HarnessError::Config("bench mode needs bench_maps".into()));
    }
    let seed0 = *cfg.seeds.first().unwrap_or(&0);
    let mut out = Vec::new();
    for (mi, source) in cfg.bench_maps.iter().enumerate() {
        let map_name = match source {
            MapSource::File(p) => p.display().to_string(),
            MapSource::Generate(g) => format!("generated(seed={})", g.seed),
        };
        let map = source.load()?;
        let env = cfg.build_env(map);
        for &method in &cfg.methods {
            let row = match method {
                Method::Zigzag | Method::Bastar => {
                    let rows = planner_rows(&env, method, cfg.eval_episodes, seed0);
                    let n = rows.len() as f64;
                    BenchRow {
                        method: method.name().into(),
                        map: map_name.clone(),
                        mean_coverage_pct: rows.iter().map(|r| r.coverage_pct).sum::<f64>() / n,
                        mean_overlap_pct: rows.iter().map(|r| r.overlap_pct).sum::<f64>() / n,
                        mean_steps: rows.iter().map(|r| r.steps as f64).sum::<f64>() / n,
                        episodes_to_threshold: None,
                    }
                }
                Method::Rl | Method::Hybrid => {
                    let mut mcfg = cfg.clone();
                    mcfg.method = method;
                    let (rows, trainer) = train_one_seed(&mcfg, &env, seed0.wrapping_add(mi as u64));
                    let eval = match method {
                        Method::Rl => agent::evaluate(
                            trainer.online(),
                            &env,
                            cfg.encoder,
                            cfg.eval_episodes,
                            seed0 ^ 0xE7A1,
                        ),
                        _ => hybrid_evaluate(
                            trainer.online(),
                            &env,
                            cfg.encoder,
                            cfg.eval_episodes,
                            seed0 ^ 0xE7A1,
                        ),
                    };
                    BenchRow {
                        method: method.name().into(),
                        map: map_name.clone(),
                        mean_coverage_pct: eval.mean_coverage_pct,
                        mean_overlap_pct: eval.mean_overlap_pct,
                        mean_steps: eval.mean_steps,
                        episodes_to_threshold: episodes_to_threshold(&rows, cfg.eta * 100.0),
                    }
                }
            };
            out.push(row);
        }
    }
    Ok(out)
}

fn bench_mode(cfg: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let rows = bench(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut text =
        String::from("method,map,mean_coverage_pct,mean_overlap_pct,mean_steps,episodes_to_threshold\n");
    for r in &rows {
        let ett = r.episodes_to_threshold.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            r.method, r.map, r.mean_coverage_pct, r.mean_overlap_pct, r.mean_steps, ett
        );
    }
    fs::write(cfg.out_dir.join("bench.csv"), text)?;
    let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
    fs::write(cfg.out_dir.join("summary.json"), json)?;
    Ok(RunRecord {
        config_hash: cfg.hash(),
        rows_per_seed: Vec::new(),
        summary: Summary {
            config_hash: cfg.hash(),
            mode: cfg.mode,
            per_seed: Vec::new(),
            mean_coverage_pct: rows.iter().map(|r| r.mean_coverage_pct).sum::<f64>()
                / rows.len().max(1) as f64,
            mean_overlap_pct: rows.iter().map(|r| r.mean_overlap_pct).sum::<f64>()
                / rows.len().max(1) as f64,
        },
    })
}

/// Contraction mode: emits
/// iteration,error_uniform,error_prioritized,envelope_min,envelope_max
/// where the envelopes come from the skewed schedule's per-entry minimum and
/// maximum masses.
fn contraction_mode(cfg: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let c = &cfg.contraction;
    let seed = *cfg.seeds.first().unwrap_or(&0);
    let mdp = TabularMdp::<f64>::random(c.states, c.actions, c.gamma, seed);
    let skewed = SamplingDist::skewed(c.states * c.actions, c.skew_decay);
    let uniform = rate_experiment(&mdp, &RateSchedule::Fixed(skewed), c.iters, c.step_scale, seed)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let prioritized = rate_experiment(
        &mdp,
        &RateSchedule::Prioritized { alpha_per: c.per_alpha, eps: c.per_eps },
        c.iters,
        c.step_scale,
        seed,
    )
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut text = String::from("iteration,error_uniform,error_prioritized,envelope_min,envelope_max\n");
    for t in 0..=c.iters {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            t,
            uniform.errors[t],
            prioritized.errors[t],
            uniform.envelope_min_mass[t],
            uniform.envelope_max_mass[t]
        );
    }
    fs::write(cfg.out_dir.join("contraction.csv"), text)?;
    let summary = Summary {
        config_hash: cfg.hash(),
        mode: cfg.mode,
        per_seed: Vec::new(),
        mean_coverage_pct: 0.0,
        mean_overlap_pct: 0.0,
    };
    write_summary(&cfg.out_dir, &summary)?;
    Ok(RunRecord { config_hash: cfg.hash(), rows_per_seed: Vec::new(), summary })
}

/// Dispatches a full experiment run.
pub fn run(cfg: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    match cfg.mode {
        Mode::Train => train_mode(cfg),
        Mode::Eval => eval_mode(cfg),
        Mode::Bench => bench_mode(cfg),
        Mode::Sweep => sweep::sweep_mode(cfg),
        Mode::Contraction => contraction_mode(cfg),
    }
}

/// One noise-study result line: overlap measured at the first crossing of
/// the coverage target (or at the step cap).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseRow {
    pub method: String,
    pub rho: f64,
    pub mean_overlap_pct: f64,
    pub mean_coverage_pct: f64,
}

/// Compares methods across sensing-noise levels on one fixture. RL and
/// hybrid agents are trained under each noise level before evaluation.
pub fn noise_study(
    cfg: &ExperimentConfig,
    rho_list: &[f64],
    methods: &[Method],
) -> Result<Vec<NoiseRow>, HarnessError> {
    let source =
        cfg.map.as_ref().ok_or_else(|| HarnessError::Config("noise study needs a map".into()))?;
    let map = source.load()?;
    let seed0 = *cfg.seeds.first().unwrap_or(&0);
    let mut out = Vec::new();
    for &rho in rho_list {
        let mut ncfg = cfg.clone();
        ncfg.noise_rho = rho;
        let env = ncfg.build_env(map.clone());
        for &method in methods {
            let (cov, over) = match method {
                Method::Zigzag | Method::Bastar => {
                    let rows = planner_rows(&env, method, cfg.eval_episodes, seed0);
                    let n = rows.len() as f64;
                    (
                        rows.iter().map(|r| r.coverage_pct).sum::<f64>() / n,
                        rows.iter().map(|r| r.overlap_pct).sum::<f64>() / n,
                    )
                }
                Method::Rl | Method::Hybrid => {
                    let mut mcfg = ncfg.clone();
                    mcfg.method = method;
                    let (_rows, trainer) = train_one_seed(&mcfg, &env, seed0);
                    let eval = match method {
                        Method::Rl => agent::evaluate(
                            trainer.online(),
                            &env,
                            cfg.encoder,
                            cfg.eval_episodes,
                            seed0 ^ 0xE7A1,
                        ),
                        _ => hybrid_evaluate(
                            trainer.online(),
                            &env,
                            cfg.encoder,
                            cfg.eval_episodes,
                            seed0 ^ 0xE7A1,
                        ),
                    };
                    (eval.mean_coverage_pct, eval.mean_overlap_pct)
                }
            };
            out.push(NoiseRow {
                method: method.name().into(),
                rho,
                mean_overlap_pct: over,
                mean_coverage_pct: cov,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
