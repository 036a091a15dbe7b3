//! Classical coverage baselines and the hybrid controller.
//!
//! Zigzag (boustrophedon) sweeping, A* on the belief map, BA* (zigzag plus
//! A* repositioning to the nearest backtracking point), and Hybrid (zigzag
//! plus an RL policy for repositioning).

use crate::agent::{greedy_action, Trainer, Transition};
use crate::encoder::{encode, EncoderMode};
use crate::env::{Action, ActionMode, Belief, Env, EnvState, Heading, StepEvent};
use crate::net::QNetwork;
use crate::{Real, Tensor};
use std::collections::BinaryHeap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("goal unreachable on the belief map")]
    Unreachable,
    #[error("no backtracking candidates: coverage complete on belief")]
    NoCandidates,
}

/// Read-only grid for path planning. Unknown cells are reported passable by
/// the belief-map implementation (optimistic planning).
pub trait GridView {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn passable(&self, r: usize, c: usize) -> bool;
}

impl GridView for EnvState {
    fn width(&self) -> usize {
        EnvState::width(self)
    }

    fn height(&self) -> usize {
        EnvState::height(self)
    }

    fn passable(&self, r: usize, c: usize) -> bool {
        self.belief(r, c) != Belief::Obstacle
    }
}

impl GridView for crate::env::GridMap {
    fn width(&self) -> usize {
        crate::env::GridMap::width(self)
    }

    fn height(&self) -> usize {
        crate::env::GridMap::height(self)
    }

    fn passable(&self, r: usize, c: usize) -> bool {
        self.is_free(r, c)
    }
}

/// Explicit blocked-mask grid, mainly for tests and oracles.
#[derive(Clone, Debug)]
pub struct MaskGrid {
    pub width: usize,
    pub height: usize,
    pub blocked: Vec<bool>,
}

impl GridView for MaskGrid {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn passable(&self, r: usize, c: usize) -> bool {
        !self.blocked[r * self.width + c]
    }
}

/// 4-connected path with unit step costs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    pub cells: Vec<(usize, usize)>,
    pub cost: usize,
}

const NEIGHBOR_ORDER: [Heading; 4] = [Heading::North, Heading::South, Heading::West, Heading::East];

fn neighbor(view: &impl GridView, r: usize, c: usize, dir: Heading) -> Option<(usize, usize)> {
    let (dr, dc) = dir.delta();
    let nr = r as i64 + dr;
    let nc = c as i64 + dc;
    (nr >= 0 && nc >= 0 && (nr as usize) < view.height() && (nc as usize) < view.width())
        .then_some((nr as usize, nc as usize))
}

/// A* with the Manhattan heuristic and deterministic (f, h, row, col)
/// tie-breaking. The start cell must be passable.
pub fn astar(view: &impl GridView, start: (usize, usize), goal: (usize, usize)) -> Result<Path, PlanError> {
    let (w, h) = (view.width(), view.height());
    let idx = |(r, c): (usize, usize)| r * w + c;
    let manhattan = |(r, c): (usize, usize)| -> usize {
        r.abs_diff(goal.0) + c.abs_diff(goal.1)
    };
    if !view.passable(goal.0, goal.1) {
        return Err(PlanError::Unreachable);
    }
    let mut dist = vec![usize::MAX; w * h];
    let mut parent = vec![usize::MAX; w * h];
    // Min-heap on (f, h, row, col).
    let mut open: BinaryHeap<std::cmp::Reverse<(usize, usize, usize, usize)>> = BinaryHeap::new();
    dist[idx(start)] = 0;
    open.push(std::cmp::Reverse((manhattan(start), manhattan(start), start.0, start.1)));
    while let Some(std::cmp::Reverse((f, _hh, r, c))) = open.pop() {
        let here = (r, c);
        let g = dist[idx(here)];
        if f > g + manhattan(here) {
            continue; // stale entry
        }
        if here == goal {
            let mut cells = vec![here];
            let mut cur = idx(here);
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                cells.push((cur / w, cur % w));
            }
            cells.reverse();
            return Ok(Path { cells, cost: g });
        }
        for dir in NEIGHBOR_ORDER {
            if let Some(next) = neighbor(view, r, c, dir) {
                if !view.passable(next.0, next.1) {
                    continue;
                }
                let ng = g + 1;
                if ng < dist[idx(next)] {
                    dist[idx(next)] = ng;
                    parent[idx(next)] = idx(here);
                    open.push(std::cmp::Reverse((ng + manhattan(next), manhattan(next), next.0, next.1)));
                }
            }
        }
    }
    Err(PlanError::Unreachable)
}

/// Boustrophedon sweep state: lane axis is vertical, `lane_dir` is the
/// current in-lane direction, `sweep_dir` the lane-to-lane direction.
#[derive(Clone, Copy, Debug)]
pub struct ZigzagState {
    pub lane_dir: Heading,
    pub sweep_dir: Heading,
}

impl ZigzagState {
    /// Initial directions point away from the nearest walls.
    pub fn new(start: (usize, usize), height: usize, width: usize) -> Self {
        let lane_dir = if start.0 < height.div_ceil(2) { Heading::South } else { Heading::North };
        let sweep_dir = if start.1 < width.div_ceil(2) { Heading::East } else { Heading::West };
        Self { lane_dir, sweep_dir }
    }

    pub fn for_env(state: &EnvState) -> Self {
        let pose = state.pose();
        Self::new((pose.row, pose.col), state.height(), state.width())
    }
}

/// One zigzag decision: the heading to move in, or Blocked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlannerMove {
    Move(Heading),
    Blocked,
}

fn zigzag_target_ok(state: &EnvState, cell: (usize, usize)) -> bool {
    state.belief(cell.0, cell.1) != Belief::Obstacle && !state.visited(cell.0, cell.1)
}

/// Boustrophedon rule: continue along the lane into unvisited believed-free
/// cells; at a lane end turn into the adjacent unvisited lane (preferring
/// the current sweep direction, else reversing it); reverse along the lane
/// as a last resort. Blocked when no believed-free unvisited neighbor
/// exists.
pub fn zigzag_step(state: &EnvState, z: &mut ZigzagState) -> PlannerMove {
    let pose = state.pose();
    let at = (pose.row, pose.col);
    let ahead = neighbor(state, at.0, at.1, z.lane_dir);
    if let Some(cell) = ahead {
        if zigzag_target_ok(state, cell) {
            return PlannerMove::Move(z.lane_dir);
        }
    }
    for sweep in [z.sweep_dir, z.sweep_dir.opposite()] {
        if let Some(cell) = neighbor(state, at.0, at.1, sweep) {
            if zigzag_target_ok(state, cell) {
                z.sweep_dir = sweep;
                z.lane_dir = z.lane_dir.opposite();
                return PlannerMove::Move(sweep);
            }
        }
    }
    let back = z.lane_dir.opposite();
    if let Some(cell) = neighbor(state, at.0, at.1, back) {
        if zigzag_target_ok(state, cell) {
            z.lane_dir = back;
            return PlannerMove::Move(back);
        }
    }
    PlannerMove::Blocked
}

/// Primitive actions realizing a move in `dir`: the single cardinal action,
/// or minimal rotations plus Forward in differential mode.
pub fn dir_to_actions(mode: ActionMode, heading: Heading, dir: Heading) -> Vec<Action> {
    match mode {
        ActionMode::Cardinal => vec![match dir {
            Heading::North => Action::Up,
            Heading::South => Action::Down,
            Heading::West => Action::Left,
            Heading::East => Action::Right,
        }],
        ActionMode::Differential => {
            let mut actions = Vec::with_capacity(3);
            if heading == dir {
                // already aligned
            } else if heading.right() == dir {
                actions.push(Action::RotateRight);
            } else if heading.left() == dir {
                actions.push(Action::RotateLeft);
            } else {
                actions.push(Action::RotateRight);
                actions.push(Action::RotateRight);
            }
            actions.push(Action::Forward);
            actions
        }
    }
}

/// Visited cells adjacent to at least one believed-free unvisited cell,
/// in (row, col) order.
pub fn backtrack_candidates(state: &EnvState) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..state.height() {
        for c in 0..state.width() {
            if !state.visited(r, c) {
                continue;
            }
            let frontier = NEIGHBOR_ORDER.iter().any(|&d| {
                neighbor(state, r, c, d).is_some_and(|(nr, nc)| {
                    state.belief(nr, nc) == Belief::Free && !state.visited(nr, nc)
                })
            });
            if frontier {
                out.push((r, c));
            }
        }
    }
    out
}

/// Candidate with the minimal A* cost from `from`; ties break by (row, col).
pub fn nearest_backtrack(
    state: &EnvState,
    from: (usize, usize),
    candidates: &[(usize, usize)],
) -> Result<((usize, usize), Path), PlanError> {
    if candidates.is_empty() {
        return Err(PlanError::NoCandidates);
    }
    let mut best: Option<((usize, usize), Path)> = None;
    for &cand in candidates {
        match astar(state, from, cand) {
            Err(PlanError::Unreachable) => continue,
            Err(e) => return Err(e),
            Ok(path) => {
                let better = match &best {
                    None => true,
                    Some((_, b)) => path.cost < b.cost,
                };
                if better {
                    best = Some((cand, path));
                }
            }
        }
    }
    best.ok_or(PlanError::Unreachable)
}

/// Episode-level metrics shared by the scripted controllers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlannerEpisode {
    pub steps: usize,
    pub coverage_pct: f64,
    pub overlap_pct: f64,
    pub ret: f64,
    /// Number of repositioning phases (BA*/Hybrid only).
    pub repositions: usize,
}

fn finish(env: &Env, st: &EnvState, ret: f64, repositions: usize) -> PlannerEpisode {
    PlannerEpisode {
        steps: st.steps(),
        coverage_pct: env.coverage_fraction(st) * 100.0,
        overlap_pct: env.overlap_fraction(st) * 100.0,
        ret,
        repositions,
    }
}

/// Executes one move decision (rotations plus translation in differential
/// mode). Returns the last step outcome, or None if the episode ended before
/// any action ran.
fn execute_move(
    env: &Env,
    st: &mut EnvState,
    dir: Heading,
    ret: &mut f64,
) -> Option<StepEvent> {
    let mut last = None;
    for action in dir_to_actions(env.action_set().mode(), st.pose().heading, dir) {
        if st.done() {
            break;
        }
        let out = env.step(st, action).expect("episode active");
        *ret += out.reward;
        last = Some(out.event);
    }
    last
}

/// Pure zigzag episode: sweep until Blocked, episode termination, or step
/// cap.
pub fn zigzag_episode(env: &Env, seed: u64) -> PlannerEpisode {
    let mut st = env.reset(seed);
    let mut z = ZigzagState::for_env(&st);
    let mut ret = 0.0;
    while !st.done() {
        match zigzag_step(&st, &mut z) {
            PlannerMove::Blocked => break,
            PlannerMove::Move(dir) => {
                execute_move(env, &mut st, dir, &mut ret);
            }
        }
    }
    finish(env, &st, ret, 0)
}

/// BA*: zigzag until Blocked, then follow the A* path to the nearest
/// backtracking candidate (replanning on bumps or belief changes), and
/// repeat until the candidate list empties or the episode terminates.
pub fn ba_star_episode(env: &Env, seed: u64) -> PlannerEpisode {
    let mut st = env.reset(seed);
    let mut z = ZigzagState::for_env(&st);
    let mut ret = 0.0;
    let mut repositions = 0;
    'outer: while !st.done() {
        while !st.done() {
            match zigzag_step(&st, &mut z) {
                PlannerMove::Blocked => break,
                PlannerMove::Move(dir) => {
                    execute_move(env, &mut st, dir, &mut ret);
                }
            }
        }
        if st.done() {
            break;
        }
        let candidates = backtrack_candidates(&st);
        if candidates.is_empty() {
            break; // coverage complete on the belief map
        }
        let pose = st.pose();
        let Ok((_, path)) = nearest_backtrack(&st, (pose.row, pose.col), &candidates) else {
            break;
        };
        repositions += 1;
        for &cell in &path.cells[1..] {
            if st.done() {
                break 'outer;
            }
            if st.belief(cell.0, cell.1) == Belief::Obstacle {
                continue 'outer; // belief changed under us: replan
            }
            let pose = st.pose();
            let dir = direction_between((pose.row, pose.col), cell)
                .expect("A* path cells are 4-adjacent");
            if let Some(StepEvent::Bump) = execute_move(env, &mut st, dir, &mut ret) {
                continue 'outer; // replan
            }
        }
    }
    finish(env, &st, ret, repositions)
}

fn direction_between(from: (usize, usize), to: (usize, usize)) -> Option<Heading> {
    let dr = to.0 as i64 - from.0 as i64;
    let dc = to.1 as i64 - from.1 as i64;
    match (dr, dc) {
        (-1, 0) => Some(Heading::North),
        (1, 0) => Some(Heading::South),
        (0, -1) => Some(Heading::West),
        (0, 1) => Some(Heading::East),
        _ => None,
    }
}

/// Repositioning policy for [`hybrid_episode`].
pub enum HybridPolicy<'a> {
    /// Epsilon-greedy actions; zigzag segments become macro transitions and
    /// repositioning steps per-step transitions, all pushed into the replay
    /// buffer (one gradient update per recorded transition).
    Training(&'a mut Trainer),
    /// Greedy evaluation on frozen parameters.
    Frozen { net: &'a QNetwork<Real>, mode: EncoderMode },
}

/// Hybrid controller: zigzag while free area remains in reach, otherwise let
/// the RL policy drive primitive actions until a new cell is entered, then
/// resume sweeping.
pub fn hybrid_episode(env: &Env, mut policy: HybridPolicy<'_>, seed: u64) -> PlannerEpisode {
    let mut st = env.reset(seed);
    let mut z = ZigzagState::for_env(&st);
    let mut ret = 0.0;
    let mut repositions = 0;
    'outer: while !st.done() {
        // Zigzag segment, summarized as one macro transition when training.
        let mut seg_start: Option<Arc<crate::env::Observation>> = None;
        let mut seg_first_action: usize = 0;
        let mut seg_reward = 0.0;
        while !st.done() {
            match zigzag_step(&st, &mut z) {
                PlannerMove::Blocked => break,
                PlannerMove::Move(dir) => {
                    if seg_start.is_none() {
                        seg_start = Some(Arc::new(st.observation()));
                        let first = dir_to_actions(env.action_set().mode(), st.pose().heading, dir)
                            [0];
                        seg_first_action =
                            env.action_set().index_of(first).expect("planner action in set");
                    }
                    for action in
                        dir_to_actions(env.action_set().mode(), st.pose().heading, dir)
                    {
                        if st.done() {
                            break;
                        }
                        let out = env.step(&mut st, action).expect("episode active");
                        ret += out.reward;
                        seg_reward += out.reward;
                    }
                }
            }
        }
        if let (HybridPolicy::Training(trainer), Some(obs)) = (&mut policy, seg_start) {
            trainer.record(Transition {
                obs,
                action: seg_first_action,
                reward: seg_reward,
                next_obs: Arc::new(st.observation()),
                done: st.done(),
            });
        }
        if st.done() {
            break;
        }
        // Repositioning: RL primitives until a new cell is entered.
        repositions += 1;
        loop {
            if st.done() {
                break 'outer;
            }
            let obs = Arc::new(st.observation());
            let action_idx = match &mut policy {
                HybridPolicy::Training(trainer) => trainer.select_action(&obs),
                HybridPolicy::Frozen { net, mode } => {
                    let x: Tensor = encode(&obs, *mode);
                    greedy_action(&net.forward(x.as_slice()).expect("tensor fits network"))
                }
            };
            let action = env.action_set().action(action_idx);
            let out = env.step(&mut st, action).expect("episode active");
            ret += out.reward;
            if let HybridPolicy::Training(trainer) = &mut policy {
                trainer.record(Transition {
                    obs,
                    action: action_idx,
                    reward: out.reward,
                    next_obs: Arc::new(st.observation()),
                    done: out.done,
                });
            }
            if out.event == StepEvent::NewCell {
                break;
            }
        }
    }
    finish(env, &st, ret, repositions)
}
