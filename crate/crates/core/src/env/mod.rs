//! Grid-world coverage environment.
//!
//! The robot moves over a hidden occupancy grid, accumulating visit counts
//! and an online belief map from noisy adjacent-cell sensing. Rewards follow
//! the shaped scheme: +1 for entering an uncovered cell, -lambda for overlap
//! and bumps, minus an optional per-action delay cost.

mod map;

pub use map::{Cell, GridMap, MapError, MapGenParams, ObstacleShape};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cardinal heading of the robot (row 0 is the top of the grid).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub fn left(self) -> Self {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    pub fn right(self) -> Self {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }

    pub fn opposite(self) -> Self {
        self.left().left()
    }

    /// (d_row, d_col) of one step in this heading.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Heading::North => (-1, 0),
            Heading::South => (1, 0),
            Heading::East => (0, 1),
            Heading::West => (0, -1),
        }
    }
}

/// Robot pose. Heading is ignored in cardinal mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pose {
    pub row: usize,
    pub col: usize,
    pub heading: Heading,
}

/// Primitive action. Up/Down/Left/Right belong to the cardinal set,
/// Forward/RotateLeft/RotateRight to the differential set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Forward,
    RotateLeft,
    RotateRight,
}

impl Action {
    fn movement_heading(self, pose: &Pose) -> Option<Heading> {
        match self {
            Action::Up => Some(Heading::North),
            Action::Down => Some(Heading::South),
            Action::Left => Some(Heading::West),
            Action::Right => Some(Heading::East),
            Action::Forward => Some(pose.heading),
            Action::RotateLeft | Action::RotateRight => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    Cardinal,
    Differential,
}

const CARDINAL_ACTIONS: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];
const DIFFERENTIAL_ACTIONS: [Action; 3] = [Action::Forward, Action::RotateLeft, Action::RotateRight];

/// Active action list plus a per-action delay cost table.
#[derive(Clone, Debug)]
pub struct ActionSet {
    mode: ActionMode,
    costs: Vec<f64>,
}

#[derive(Debug, Error)]
#[error("action cost table has {got} entries, expected {expected}")]
pub struct ActionCostError {
    pub expected: usize,
    pub got: usize,
}

impl ActionSet {
    pub fn cardinal() -> Self {
        Self { mode: ActionMode::Cardinal, costs: vec![0.0; CARDINAL_ACTIONS.len()] }
    }

    pub fn differential() -> Self {
        Self { mode: ActionMode::Differential, costs: vec![0.0; DIFFERENTIAL_ACTIONS.len()] }
    }

    pub fn new(mode: ActionMode) -> Self {
        match mode {
            ActionMode::Cardinal => Self::cardinal(),
            ActionMode::Differential => Self::differential(),
        }
    }

    /// Replaces the cost table; one nonnegative entry per active action.
    pub fn with_costs(mut self, costs: Vec<f64>) -> Result<Self, ActionCostError> {
        if costs.len() != self.actions().len() || costs.iter().any(|c| *c < 0.0) {
            return Err(ActionCostError { expected: self.actions().len(), got: costs.len() });
        }
        self.costs = costs;
        Ok(self)
    }

    pub fn mode(&self) -> ActionMode {
        self.mode
    }

    pub fn actions(&self) -> &'static [Action] {
        match self.mode {
            ActionMode::Cardinal => &CARDINAL_ACTIONS,
            ActionMode::Differential => &DIFFERENTIAL_ACTIONS,
        }
    }

    pub fn len(&self) -> usize {
        self.actions().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, action: Action) -> Option<usize> {
        self.actions().iter().position(|&a| a == action)
    }

    pub fn action(&self, index: usize) -> Action {
        self.actions()[index]
    }

    pub fn cost(&self, action: Action) -> Option<f64> {
        self.index_of(action).map(|i| self.costs[i])
    }
}

/// Noisy occupancy sensor: each in-range cell reading flips with
/// probability `flip_prob`; `range` is a Manhattan radius (1 = the
/// 4-neighborhood).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SensorModel {
    pub flip_prob: f64,
    pub range: usize,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { flip_prob: 0.0, range: 1 }
    }
}

impl SensorModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn with_noise(flip_prob: f64) -> Self {
        assert!((0.0..0.5).contains(&flip_prob), "flip probability must be in [0, 0.5)");
        Self { flip_prob, range: 1 }
    }
}

/// Episode termination and reward-shaping parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Target coverage fraction in (0, 1].
    pub eta: f64,
    pub step_cap: usize,
    /// Overlap (and bump) penalty.
    pub lambda: f64,
}

impl EpisodeConfig {
    pub fn new(eta: f64, step_cap: usize, lambda: f64) -> Self {
        assert!(eta > 0.0 && eta <= 1.0, "eta must be in (0, 1]");
        assert!(lambda >= 0.0, "lambda must be nonnegative");
        Self { eta, step_cap, lambda }
    }

    pub fn with_cap(step_cap: usize) -> Self {
        Self::new(0.9, step_cap, 0.5)
    }
}

/// Agent-side occupancy estimate of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Belief {
    Unknown,
    Free,
    Obstacle,
}

/// What a step did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepEvent {
    NewCell,
    Overlap,
    Bump,
    Rotate,
}

/// Reward, termination flag, and event classification of one step.
#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub event: StepEvent,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step() called on a finished episode")]
    EpisodeFinished,
    #[error("action {0:?} is not part of the active action set")]
    InvalidAction(Action),
}

/// Mutable per-episode state: pose, visit counts, belief map, step counter,
/// and the sensing noise stream.
#[derive(Clone, Debug)]
pub struct EnvState {
    pose: Pose,
    visit_count: Vec<u32>,
    belief: Vec<Belief>,
    steps: usize,
    covered: usize,
    overlap_extra: usize,
    done: bool,
    width: usize,
    height: usize,
    rng: ChaCha8Rng,
}

impl EnvState {
    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn visit_count(&self, r: usize, c: usize) -> u32 {
        self.visit_count[r * self.width + c]
    }

    pub fn visited(&self, r: usize, c: usize) -> bool {
        self.visit_count(r, c) > 0
    }

    pub fn belief(&self, r: usize, c: usize) -> Belief {
        self.belief[r * self.width + c]
    }

    /// Number of distinct covered cells.
    pub fn covered_cells(&self) -> usize {
        self.covered
    }

    /// Snapshot sufficient to re-encode the policy input later.
    pub fn observation(&self) -> Observation {
        Observation {
            width: self.width,
            height: self.height,
            covered: self.visit_count.iter().map(|&v| v > 0).collect(),
            belief: self.belief.clone(),
            robot: (self.pose.row, self.pose.col),
        }
    }
}

/// Agent-visible snapshot of an [`EnvState`]: covered mask, belief map, and
/// robot cell. Replay memory stores these at actual size; encoding happens at
/// network-call time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    pub covered: Vec<bool>,
    pub belief: Vec<Belief>,
    pub robot: (usize, usize),
}

impl Observation {
    pub fn covered_at(&self, r: usize, c: usize) -> bool {
        self.covered[r * self.width + c]
    }

    pub fn belief_at(&self, r: usize, c: usize) -> Belief {
        self.belief[r * self.width + c]
    }
}

/// Immutable environment definition: hidden map, episode parameters, sensor
/// model, and action set. A single instance serves many episodes via
/// [`Env::reset`].
#[derive(Clone, Debug)]
pub struct Env {
    map: GridMap,
    cfg: EpisodeConfig,
    sensor: SensorModel,
    actions: ActionSet,
}

impl Env {
    pub fn new(map: GridMap, cfg: EpisodeConfig, sensor: SensorModel, actions: ActionSet) -> Self {
        Self { map, cfg, sensor, actions }
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn sensor(&self) -> &SensorModel {
        &self.sensor
    }

    pub fn action_set(&self) -> &ActionSet {
        &self.actions
    }

    /// Starts a fresh episode: robot at the start cell heading north, only
    /// the start cell visited, belief unknown everywhere else, one sensor
    /// sweep applied.
    pub fn reset(&self, seed: u64) -> EnvState {
        let (w, h) = (self.map.width(), self.map.height());
        let (sr, sc) = self.map.start();
        let mut state = EnvState {
            pose: Pose { row: sr, col: sc, heading: Heading::North },
            visit_count: vec![0; w * h],
            belief: vec![Belief::Unknown; w * h],
            steps: 0,
            covered: 0,
            overlap_extra: 0,
            done: false,
            width: w,
            height: h,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        state.visit_count[sr * w + sc] = 1;
        state.covered = 1;
        state.belief[sr * w + sc] = Belief::Free;
        self.sense(&mut state);
        state.done = self.is_done(&state);
        state
    }

    /// Applies one action. Movement into a free cell earns +1 on first visit
    /// and -lambda on revisits; bumps leave the pose unchanged, cost -lambda,
    /// and mark the bumped cell as a confirmed obstacle. Every step senses,
    /// advances the step counter, and re-evaluates termination.
    pub fn step(&self, state: &mut EnvState, action: Action) -> Result<StepOutcome, EnvError> {
        if state.done {
            return Err(EnvError::EpisodeFinished);
        }
        let cost = self.actions.cost(action).ok_or(EnvError::InvalidAction(action))?;
        let event;
        let reward;
        match action.movement_heading(&state.pose) {
            None => {
                state.pose.heading = match action {
                    Action::RotateLeft => state.pose.heading.left(),
                    Action::RotateRight => state.pose.heading.right(),
                    _ => unreachable!(),
                };
                event = StepEvent::Rotate;
                reward = -cost;
            }
            Some(dir) => {
                let (dr, dc) = dir.delta();
                let tr = state.pose.row as i64 + dr;
                let tc = state.pose.col as i64 + dc;
                if self.map.in_bounds(tr, tc) && self.map.is_free(tr as usize, tc as usize) {
                    let (tr, tc) = (tr as usize, tc as usize);
                    let idx = tr * state.width + tc;
                    state.pose.row = tr;
                    state.pose.col = tc;
                    if state.visit_count[idx] == 0 {
                        state.covered += 1;
                        event = StepEvent::NewCell;
                        reward = 1.0 - cost;
                    } else {
                        state.overlap_extra += 1;
                        event = StepEvent::Overlap;
                        reward = -self.cfg.lambda - cost;
                    }
                    state.visit_count[idx] += 1;
                    state.belief[idx] = Belief::Free;
                } else {
                    event = StepEvent::Bump;
                    reward = -self.cfg.lambda - cost;
                    if self.map.in_bounds(tr, tc) {
                        // Bumper contact is a noiseless detection.
                        state.belief[tr as usize * state.width + tc as usize] = Belief::Obstacle;
                    }
                }
            }
        }
        self.sense(state);
        state.steps += 1;
        state.done = self.is_done(state);
        Ok(StepOutcome { reward, done: state.done, event })
    }

    /// Samples occupancy readings for every in-bounds cell within the sensor's
    /// Manhattan radius of the robot. Each reading is correct with probability
    /// 1 - flip_prob. Visited cells are never overwritten to Obstacle.
    pub fn sense(&self, state: &mut EnvState) {
        let range = self.sensor.range as i64;
        let (pr, pc) = (state.pose.row as i64, state.pose.col as i64);
        for dr in -range..=range {
            for dc in -(range - dr.abs())..=(range - dr.abs()) {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (r, c) = (pr + dr, pc + dc);
                if !self.map.in_bounds(r, c) {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                let truth = self.map.is_free(r, c);
                let flip = self.sensor.flip_prob > 0.0 && state.rng.random_bool(self.sensor.flip_prob);
                let reading = if flip { !truth } else { truth };
                let idx = r * state.width + c;
                if state.visit_count[idx] > 0 {
                    continue;
                }
                state.belief[idx] = if reading { Belief::Free } else { Belief::Obstacle };
            }
        }
    }

    pub fn is_done(&self, state: &EnvState) -> bool {
        self.coverage_fraction(state) >= self.cfg.eta || state.steps >= self.cfg.step_cap
    }

    /// Fraction of accessible cells visited at least once.
    pub fn coverage_fraction(&self, state: &EnvState) -> f64 {
        state.covered as f64 / self.map.free_cell_count() as f64
    }

    /// Revisit mass: sum of (visits - 1) over cells, divided by the
    /// accessible area.
    pub fn overlap_fraction(&self, state: &EnvState) -> f64 {
        state.overlap_extra as f64 / self.map.free_cell_count() as f64
    }
}
