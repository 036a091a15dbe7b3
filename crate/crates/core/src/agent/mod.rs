//! Double DQN with dueling head and prioritized experience replay:
//! epsilon-greedy behavior, TD-target construction, the gradient-update loop,
//! and greedy evaluation.

mod replay;

pub use replay::{BufferError, SampledBatch, SumTreeBuffer};

use crate::encoder::{encode, EncoderMode};
use crate::env::{Env, Observation};
use crate::net::{AdamConfig, AdamState, BatchItem, NetError, NetworkSpec, QNetwork};
use crate::{Real, Tensor};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// One stored experience. `done` marks a terminal next state, which is never
/// bootstrapped.
#[derive(Clone, Debug)]
pub struct Transition {
    pub obs: Arc<Observation>,
    pub action: usize,
    pub reward: Real,
    pub next_obs: Arc<Observation>,
    pub done: bool,
}

/// Replay sampling scheme.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub enum ReplayKind {
    /// Proportional prioritized replay: P(i) = p_i^alpha / sum p^alpha with
    /// p = |TD error| + eps, IS exponent annealed beta0 -> 1.
    Prioritized { alpha: f64, beta0: f64, eps: f64 },
    Uniform,
}

impl ReplayKind {
    pub fn prioritized_default() -> Self {
        ReplayKind::Prioritized { alpha: 0.6, beta0: 0.4, eps: 1e-6 }
    }
}

/// Training-loop hyper-parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Copy online -> target every this many gradient updates.
    pub target_sync: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Env steps over which epsilon anneals linearly.
    pub eps_anneal_steps: usize,
    pub capacity: usize,
    /// Gradient updates begin once the buffer holds this many transitions.
    pub train_start: usize,
    /// One gradient update per this many env steps.
    pub train_every: usize,
    pub episodes: usize,
    pub replay: ReplayKind,
    pub adam: AdamConfig,
    /// Env-step horizon for annealing the IS exponent to 1.
    pub beta_horizon: usize,
    /// Stop training once mean coverage over a trailing window reaches the
    /// threshold (percent).
    pub early_stop: Option<EarlyStop>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EarlyStop {
    pub window: usize,
    pub min_coverage_pct: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            target_sync: 8000,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_anneal_steps: 10_000,
            capacity: 50_000,
            train_start: 1000,
            train_every: 1,
            episodes: 500,
            replay: ReplayKind::prioritized_default(),
            adam: AdamConfig::default(),
            beta_horizon: 100_000,
            early_stop: None,
        }
    }
}

/// Piecewise-linear exploration schedule.
pub fn epsilon(step: usize, cfg: &TrainConfig) -> f64 {
    if step >= cfg.eps_anneal_steps {
        return cfg.eps_end;
    }
    let frac = step as f64 / cfg.eps_anneal_steps as f64;
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
}

/// Argmax with lowest-index tie-break.
pub fn greedy_action(q: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// With probability eps a uniform action, otherwise the greedy one.
pub fn epsilon_greedy(q: &[Real], eps: f64, rng: &mut impl Rng) -> usize {
    if eps > 0.0 && rng.random_bool(eps.min(1.0)) {
        rng.random_range(0..q.len())
    } else {
        greedy_action(q)
    }
}

/// Behavior policy on an encoded state.
pub fn act(net: &QNetwork<Real>, x: &Tensor, eps: f64, rng: &mut impl Rng) -> usize {
    let q = net.forward(x.as_slice()).expect("tensor matches network input");
    epsilon_greedy(&q, eps, rng)
}

/// Double-DQN targets: y = r for terminal transitions, otherwise
/// y = r + gamma * Q_target(s', argmax_a Q_online(s', a)).
pub fn td_targets(
    online: &QNetwork<Real>,
    target: &QNetwork<Real>,
    batch: &[&Transition],
    gamma: f64,
    mode: EncoderMode,
) -> Result<Vec<Real>, NetError> {
    let mut out = Vec::with_capacity(batch.len());
    for t in batch {
        if t.done {
            out.push(t.reward);
            continue;
        }
        let next: Tensor = encode(&t.next_obs, mode);
        let q_online = online.forward(next.as_slice())?;
        let best = greedy_action(&q_online);
        let q_target = target.forward(next.as_slice())?;
        out.push(t.reward + gamma * q_target[best]);
    }
    Ok(out)
}

/// Per-episode metrics row; the CSV schema is
/// episode,steps,coverage_pct,overlap_pct,return,epsilon,loss_mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub steps: usize,
    pub coverage_pct: f64,
    pub overlap_pct: f64,
    pub ret: f64,
    pub epsilon: f64,
    pub loss_mean: f64,
}

impl EpisodeRow {
    pub const CSV_HEADER: &'static str =
        "episode,steps,coverage_pct,overlap_pct,return,epsilon,loss_mean";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.episode,
            self.steps,
            self.coverage_pct,
            self.overlap_pct,
            self.ret,
            self.epsilon,
            self.loss_mean
        )
    }
}

/// Owns the online/target networks, the replay buffer, and all counters of
/// one training run.
pub struct Trainer {
    online: QNetwork<Real>,
    target: QNetwork<Real>,
    adam: AdamState<Real>,
    buffer: SumTreeBuffer,
    cfg: TrainConfig,
    mode: EncoderMode,
    env_steps: usize,
    grad_steps: usize,
    rng: ChaCha8Rng,
    episode_losses: Vec<f64>,
}

impl Trainer {
    pub fn new(spec: NetworkSpec, cfg: TrainConfig, mode: EncoderMode, seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let net_seed = master.next_u64();
        let online = QNetwork::init(spec, net_seed);
        let mut target = online.clone();
        target.copy_weights_from(&online).expect("same spec");
        let adam = AdamState::new(&online);
        let (alpha, eps) = match cfg.replay {
            ReplayKind::Prioritized { alpha, eps, .. } => (alpha, eps),
            ReplayKind::Uniform => (0.0, 1e-6),
        };
        let buffer = SumTreeBuffer::new(cfg.capacity, alpha, eps);
        Self {
            online,
            target,
            adam,
            buffer,
            cfg,
            mode,
            env_steps: 0,
            grad_steps: 0,
            rng: master,
            episode_losses: Vec::new(),
        }
    }

    pub fn online(&self) -> &QNetwork<Real> {
        &self.online
    }

    pub fn target_net(&self) -> &QNetwork<Real> {
        &self.target
    }

    pub fn adam_state(&self) -> &AdamState<Real> {
        &self.adam
    }

    pub fn buffer(&self) -> &SumTreeBuffer {
        &self.buffer
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn encoder_mode(&self) -> EncoderMode {
        self.mode
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn grad_steps(&self) -> usize {
        self.grad_steps
    }

    pub fn epsilon_now(&self) -> f64 {
        epsilon(self.env_steps, &self.cfg)
    }

    /// Clears the per-episode loss accumulator.
    pub fn begin_episode(&mut self) {
        self.episode_losses.clear();
    }

    /// Mean training loss since [`Trainer::begin_episode`].
    pub fn episode_loss_mean(&self) -> f64 {
        if self.episode_losses.is_empty() {
            0.0
        } else {
            self.episode_losses.iter().sum::<f64>() / self.episode_losses.len() as f64
        }
    }

    /// Epsilon-greedy action index for an observation.
    pub fn select_action(&mut self, obs: &Observation) -> usize {
        let x: Tensor = encode(obs, self.mode);
        let eps = self.epsilon_now();
        let q = self.online.forward(x.as_slice()).expect("encoded tensor fits network");
        epsilon_greedy(&q, eps, &mut self.rng)
    }

    /// Greedy action index (evaluation policy).
    pub fn greedy(&self, obs: &Observation) -> usize {
        let x: Tensor = encode(obs, self.mode);
        let q = self.online.forward(x.as_slice()).expect("encoded tensor fits network");
        greedy_action(&q)
    }

    /// Stores a transition and runs the scheduled gradient updates.
    pub fn record(&mut self, t: Transition) {
        self.buffer.push(t);
        self.env_steps += 1;
        if self.env_steps.is_multiple_of(self.cfg.train_every) {
            if let Some(loss) = self.train_step() {
                self.episode_losses.push(loss);
            }
        }
    }

    fn beta_now(&self) -> f64 {
        match self.cfg.replay {
            ReplayKind::Uniform => 1.0,
            ReplayKind::Prioritized { beta0, .. } => {
                let frac = (self.env_steps as f64 / self.cfg.beta_horizon as f64).min(1.0);
                beta0 + (1.0 - beta0) * frac
            }
        }
    }

    /// One sample -> target -> backward -> Adam -> priority-update cycle.
    /// Returns the batch loss, or None before the train-start threshold.
    pub fn train_step(&mut self) -> Option<f64> {
        let batch_size = self.cfg.adam.minibatch;
        if self.buffer.len() < self.cfg.train_start.max(batch_size) {
            return None;
        }
        let sampled = match self.cfg.replay {
            ReplayKind::Prioritized { .. } => {
                self.buffer.sample(batch_size, self.beta_now(), &mut self.rng)
            }
            ReplayKind::Uniform => self.buffer.sample_uniform(batch_size, &mut self.rng),
        }
        .expect("buffer holds at least one batch");

        let transitions: Vec<&Transition> =
            sampled.indices.iter().map(|&i| self.buffer.get(i)).collect();
        let targets = td_targets(&self.online, &self.target, &transitions, self.cfg.gamma, self.mode)
            .expect("replay observations fit network");
        let xs: Vec<Tensor> = transitions.iter().map(|t| encode(&t.obs, self.mode)).collect();
        let actions: Vec<usize> = transitions.iter().map(|t| t.action).collect();
        let items: Vec<BatchItem<'_, Real>> = (0..xs.len())
            .map(|i| BatchItem {
                x: xs[i].as_slice(),
                action: actions[i],
                target: targets[i],
                weight: sampled.weights[i],
            })
            .collect();
        let out = self.online.backward(&items).expect("batch shapes are consistent");
        self.online.adam_step(&mut self.adam, &self.cfg.adam, &out.grads).expect("finite gradients");
        if let ReplayKind::Prioritized { eps, .. } = self.cfg.replay {
            for (i, &idx) in sampled.indices.iter().enumerate() {
                self.buffer.set_priority(idx, out.residuals[i].abs() + eps);
            }
        }
        self.grad_steps += 1;
        if self.grad_steps.is_multiple_of(self.cfg.target_sync) {
            self.target.copy_weights_from(&self.online).expect("same spec");
        }
        Some(out.mean_loss)
    }

    /// Runs one epsilon-greedy training episode on `env`.
    pub fn run_training_episode(
        &mut self,
        env: &Env,
        episode: usize,
        episode_seed: u64,
    ) -> EpisodeRow {
        self.begin_episode();
        let mut st = env.reset(episode_seed);
        let mut obs = Arc::new(st.observation());
        let mut ret = 0.0;
        while !st.done() {
            let action_idx = self.select_action(&obs);
            let action = env.action_set().action(action_idx);
            let out = env.step(&mut st, action).expect("episode still active");
            let next_obs = Arc::new(st.observation());
            ret += out.reward;
            self.record(Transition {
                obs: obs.clone(),
                action: action_idx,
                reward: out.reward,
                next_obs: next_obs.clone(),
                done: out.done,
            });
            obs = next_obs;
        }
        let loss_mean = self.episode_loss_mean();
        EpisodeRow {
            episode,
            steps: st.steps(),
            coverage_pct: env.coverage_fraction(&st) * 100.0,
            overlap_pct: env.overlap_fraction(&st) * 100.0,
            ret,
            epsilon: self.epsilon_now(),
            loss_mean,
        }
    }
}

/// Output of a full training run.
pub struct TrainOutput {
    pub rows: Vec<EpisodeRow>,
    pub trainer: Trainer,
}

/// Trains a pure-RL agent on `env` for the configured episode budget,
/// deterministic per seed. Per-episode env seeds derive from the master seed.
pub fn train(
    env: &Env,
    spec: NetworkSpec,
    cfg: TrainConfig,
    mode: EncoderMode,
    seed: u64,
) -> TrainOutput {
    let mut seeder = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F01);
    let early = cfg.early_stop;
    let episodes = cfg.episodes;
    let mut trainer = Trainer::new(spec, cfg, mode, seed);
    let mut rows = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let env_seed = seeder.next_u64();
        let row = trainer.run_training_episode(env, episode, env_seed);
        rows.push(row);
        if let Some(stop) = early {
            if rows.len() >= stop.window {
                let tail = &rows[rows.len() - stop.window..];
                let mean_cov =
                    tail.iter().map(|r| r.coverage_pct).sum::<f64>() / stop.window as f64;
                if mean_cov >= stop.min_coverage_pct {
                    break;
                }
            }
        }
    }
    TrainOutput { rows, trainer }
}

/// Greedy-policy evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_coverage_pct: f64,
    pub mean_overlap_pct: f64,
    pub mean_steps: f64,
    pub mean_return: f64,
}

/// Runs greedy (epsilon = 0) episodes and averages coverage and overlap.
pub fn evaluate(
    net: &QNetwork<Real>,
    env: &Env,
    mode: EncoderMode,
    episodes: usize,
    seed: u64,
) -> EvalSummary {
    let mut cov = 0.0;
    let mut over = 0.0;
    let mut steps = 0.0;
    let mut ret_sum = 0.0;
    for ep in 0..episodes {
        let mut st = env.reset(seed.wrapping_add(ep as u64));
        while !st.done() {
            let obs = st.observation();
            let x: Tensor = encode(&obs, mode);
            let q = net.forward(x.as_slice()).expect("tensor fits network");
            let action = env.action_set().action(greedy_action(&q));
            let out = env.step(&mut st, action).expect("episode still active");
            ret_sum += out.reward;
        }
        cov += env.coverage_fraction(&st) * 100.0;
        over += env.overlap_fraction(&st) * 100.0;
        steps += st.steps() as f64;
    }
    let n = episodes as f64;
    EvalSummary {
        episodes,
        mean_coverage_pct: cov / n,
        mean_overlap_pct: over / n,
        mean_steps: steps / n,
        mean_return: ret_sum / n,
    }
}

#[cfg(test)]
mod tests;
