//! Scripted experts and offline dataset construction.

mod io;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

pub use io::{load, read_dataset, save, write_dataset, HEADER};

use crate::error::{Error, Result};
use crate::gcenv::{clip_action, Action, EnvId, EnvSpec, EnvState, Goal, MazeLayout, PUSH_RADIUS};

pub const EXPERT_VERSION: &str = "v1";
/// Push-station offset behind the box, opposite the box-to-goal direction.
pub const PUSH_STATION_OFFSET: f64 = 0.65;
/// Distance to the push station under which the expert pushes.
pub const PUSH_STATION_TOLERANCE: f64 = 0.3;
/// Distance beyond the contact radius where the expert starts sliding
/// around the box instead of walking into it.
pub const DETOUR_BAND: f64 = 0.3;
/// Step cap per fragment path cell in stitch mode.
pub const STEPS_PER_FRAGMENT_CELL: usize = 8;

/// States `s_0..=s_T` and actions `a_0..a_{T-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<EnvState>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn new(states: Vec<EnvState>, actions: Vec<Action>) -> Result<Self> {
        if actions.is_empty() || states.len() != actions.len() + 1 {
            return Err(Error::Dataset(format!(
                "trajectory needs >= 1 action and one more state than actions (got {} states, {} actions)",
                states.len(),
                actions.len()
            )));
        }
        Ok(Trajectory { states, actions })
    }

    /// Number of actions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn final_state(&self) -> &EnvState {
        self.states.last().expect("non-empty trajectory")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollectMode {
    Navigate,
    Stitch,
}

impl fmt::Display for CollectMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CollectMode::Navigate => "navigate",
            CollectMode::Stitch => "stitch",
        })
    }
}

impl FromStr for CollectMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "navigate" => Ok(CollectMode::Navigate),
            "stitch" => Ok(CollectMode::Stitch),
            _ => Err(Error::param(format!("unknown collection mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub mode: CollectMode,
    pub sigma: f64,
    pub seed: u64,
    pub expert: String,
    /// Fragment length in path cells (stitch mode only).
    pub fragment_cells: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub env: EnvId,
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

impl OfflineDataset {
    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_transitions() == 0 {
            return Err(Error::Dataset("dataset has no transitions".into()));
        }
        let maze = self.env.is_maze();
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.is_empty() || t.states.len() != t.len() + 1 {
                return Err(Error::Dataset(format!("trajectory {i} is malformed")));
            }
            if t.states.iter().any(|s| matches!(s, EnvState::Point { .. }) != maze) {
                return Err(Error::Dataset(format!("trajectory {i} has states from another environment")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectConfig {
    pub mode: CollectMode,
    pub sigma: f64,
    pub target_transitions: usize,
    pub fragment_cells: usize,
    pub seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            mode: CollectMode::Navigate,
            sigma: 0.0,
            target_transitions: 50_000,
            fragment_cells: 4,
            seed: 0,
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::param(format!("noise sigma must be >= 0, got {}", self.sigma)));
        }
        if self.target_transitions == 0 || self.fragment_cells == 0 {
            return Err(Error::param("transition target and fragment length must be >= 1"));
        }
        Ok(())
    }
}

fn unit_toward(from: [f64; 2], to: [f64; 2]) -> Action {
    let v = [to[0] - from[0], to[1] - from[1]];
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n < 1e-12 {
        return [0.0, 0.0];
    }
    clip_action([v[0] / n, v[1] / n])
}

/// Replaces the inward radial part of `v` with a tangential slide when the
/// agent is close to the box and heading into it.
fn detour(agent: [f64; 2], box_pos: [f64; 2], v: Action) -> Action {
    let r = [agent[0] - box_pos[0], agent[1] - box_pos[1]];
    let n = (r[0] * r[0] + r[1] * r[1]).sqrt();
    if n > PUSH_RADIUS + DETOUR_BAND || n < 1e-12 {
        return v;
    }
    let rh = [r[0] / n, r[1] / n];
    let inward = v[0] * rh[0] + v[1] * rh[1];
    if inward >= 0.0 {
        return v;
    }
    let mut t = [v[0] - inward * rh[0], v[1] - inward * rh[1]];
    let tn = (t[0] * t[0] + t[1] * t[1]).sqrt();
    if tn < 1e-6 {
        t = [-rh[1], rh[0]];
    } else {
        t = [t[0] / tn, t[1] / tn];
    }
    clip_action(t)
}

/// Noiseless scripted expert.
///
/// Maze: head for the center of the next cell on a BFS path to the goal's
/// cell (for the goal point itself once in that cell). Push arena: walk to
/// the push station behind the box, sliding around the box if it is in the
/// way, then drive into the box center.
pub fn expert_action(spec: &EnvSpec, s: &EnvState, g: &Goal) -> Result<Action> {
    match *s {
        EnvState::Point { pos } => {
            let layout = spec
                .layout()
                .ok_or_else(|| Error::contract("point state in a non-maze environment"))?;
            let here = MazeLayout::cell_of(pos[0], pos[1]);
            let there = MazeLayout::cell_of(g.0[0], g.0[1]);
            if here == there {
                return Ok(unit_toward(pos, g.0));
            }
            let path = layout
                .shortest_path(here, there)
                .ok_or_else(|| Error::contract(format!("goal cell {there:?} unreachable from {here:?}")))?;
            Ok(unit_toward(pos, MazeLayout::center(path[1])))
        }
        EnvState::Push { agent, box_pos } => {
            let to_goal = unit_toward(box_pos, g.0);
            if to_goal == [0.0, 0.0] {
                return Ok([0.0, 0.0]);
            }
            let station = [
                box_pos[0] - PUSH_STATION_OFFSET * to_goal[0],
                box_pos[1] - PUSH_STATION_OFFSET * to_goal[1],
            ];
            let d = ((agent[0] - station[0]).powi(2) + (agent[1] - station[1]).powi(2)).sqrt();
            if d > PUSH_STATION_TOLERANCE {
                Ok(detour(agent, box_pos, unit_toward(agent, station)))
            } else {
                Ok(unit_toward(agent, box_pos))
            }
        }
    }
}

/// Rolls the expert with Gaussian action noise until success or `cap`
/// steps. Returns the trajectory and whether it ended in success.
pub fn rollout_expert<R: Rng + ?Sized>(
    spec: &EnvSpec,
    start: EnvState,
    goal: &Goal,
    sigma: f64,
    cap: usize,
    rng: &mut R,
) -> Result<(Trajectory, bool)> {
    let noise = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?)
    } else {
        None
    };
    let mut states = vec![start];
    let mut actions = Vec::new();
    let mut s = start;
    let mut success = false;
    for _ in 0..cap {
        let mut a = expert_action(spec, &s, goal)?;
        if let Some(n) = &noise {
            a = clip_action([a[0] + n.sample(rng), a[1] + n.sample(rng)]);
        }
        s = spec.step(&s, a);
        actions.push(a);
        states.push(s);
        if spec.is_success(&s, goal) {
            success = true;
            break;
        }
    }
    Ok((Trajectory::new(states, actions)?, success))
}

/// One trajectory of the collection, seeded by `seed + index`.
fn collect_one(spec: &EnvSpec, cfg: &CollectConfig, index: u64) -> Result<(Trajectory, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(index));
    match cfg.mode {
        CollectMode::Navigate => {
            let start = spec.reset_with(&mut rng);
            let goal = loop {
                let g = spec.random_goal(&mut rng);
                if !spec.is_success(&start, &g) {
                    break g;
                }
            };
            rollout_expert(spec, start, &goal, cfg.sigma, spec.max_episode_len, &mut rng)
        }
        CollectMode::Stitch => {
            let layout = spec
                .layout()
                .ok_or_else(|| Error::param("stitch mode needs a maze environment"))?;
            loop {
                let start = spec.reset_with(&mut rng);
                let p = start.agent();
                let cell = MazeLayout::cell_of(p[0], p[1]);
                let mut k = cfg.fragment_cells;
                let mut cands = layout.cells_at_distance(cell, k);
                while cands.is_empty() && k > 1 {
                    k -= 1;
                    cands = layout.cells_at_distance(cell, k);
                }
                let target = cands[rng.gen_range(0..cands.len())];
                let goal = Goal([
                    target.0 as f64 + rng.gen_range(0.1..0.9),
                    target.1 as f64 + rng.gen_range(0.1..0.9),
                ]);
                if spec.is_success(&start, &goal) {
                    continue;
                }
                let cap = cfg.fragment_cells * STEPS_PER_FRAGMENT_CELL;
                return rollout_expert(spec, start, &goal, cfg.sigma, cap, &mut rng);
            }
        }
    }
}

/// Summary of a collection run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollectStats {
    pub trajectories: usize,
    pub successes: usize,
}

impl CollectStats {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trajectories.max(1) as f64
    }
}

/// Collects trajectories until the transition target is met.
pub fn collect(spec: &EnvSpec, cfg: &CollectConfig) -> Result<OfflineDataset> {
    collect_with_stats(spec, cfg).map(|(d, _)| d)
}

pub fn collect_with_stats(spec: &EnvSpec, cfg: &CollectConfig) -> Result<(OfflineDataset, CollectStats)> {
    cfg.validate()?;
    spec.validate()?;
    const WAVE: u64 = 64;
    let mut trajectories = Vec::new();
    let mut total = 0;
    let mut successes = 0;
    let mut next = 0u64;
    'outer: loop {
        let wave: Vec<Result<(Trajectory, bool)>> =
            (next..next + WAVE).into_par_iter().map(|i| collect_one(spec, cfg, i)).collect();
        next += WAVE;
        for r in wave {
            let (t, ok) = r?;
            total += t.len();
            successes += ok as usize;
            trajectories.push(t);
            if total >= cfg.target_transitions {
                break 'outer;
            }
        }
    }
    let stats = CollectStats { trajectories: trajectories.len(), successes };
    let ds = OfflineDataset {
        env: spec.id,
        meta: DatasetMeta {
            mode: cfg.mode,
            sigma: cfg.sigma,
            seed: cfg.seed,
            expert: EXPERT_VERSION.into(),
            fragment_cells: (cfg.mode == CollectMode::Stitch).then_some(cfg.fragment_cells),
        },
        trajectories,
    };
    Ok((ds, stats))
}

/// Uniformly random `ceil(fraction * N)` whole trajectories, original order
/// preserved.
pub fn subsample(ds: &OfflineDataset, fraction: f64, seed: u64) -> Result<OfflineDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let n = ds.trajectories.len();
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1));
    if k >= n {
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = index::sample(&mut rng, n, k).into_vec();
    keep.sort_unstable();
    Ok(OfflineDataset {
        env: ds.env,
        meta: ds.meta.clone(),
        trajectories: keep.into_iter().map(|i| ds.trajectories[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcenv::NUM_EVAL_TASKS;

    fn medium() -> EnvSpec {
        EnvSpec::new(EnvId::PointMazeMedium)
    }

    #[test]
    fn straight_line_and_zero_actions() {
        let spec = medium();
        let s = EnvState::Point { pos: [1.2, 1.5] };
        assert_eq!(expert_action(&spec, &s, &Goal([1.8, 1.5])).unwrap(), [1.0, 0.0]);
        assert_eq!(expert_action(&spec, &s, &Goal([1.2, 1.5])).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn corrupted_layout_is_contract_error() {
        let mut walls = vec![true; 25];
        walls[6] = false; // (1,1)
        walls[8] = false; // (3,1) isolated
        let mut spec = medium();
        spec.arena = crate::gcenv::Arena::Maze(MazeLayout::from_walls_unchecked(5, 5, walls));
        let s = EnvState::Point { pos: [1.5, 1.5] };
        assert!(matches!(expert_action(&spec, &s, &Goal([3.5, 1.5])), Err(Error::Contract(_))));
    }

    #[test]
    fn noiseless_expert_solves_every_maze_task() {
        for id in [EnvId::PointMazeMedium, EnvId::PointMazeLarge] {
            let spec = EnvSpec::new(id);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for i in 0..NUM_EVAL_TASKS {
                let (s, g) = spec.sample_eval_task(i).unwrap();
                let (_, ok) = rollout_expert(&spec, s, &g, 0.0, 200, &mut rng).unwrap();
                assert!(ok, "{id} task {i}");
            }
        }
    }

    #[test]
    fn fraction_out_of_range_rejected() {
        let ds = collect(&medium(), &CollectConfig { target_transitions: 100, ..Default::default() }).unwrap();
        assert!(subsample(&ds, 0.0, 0).is_err());
        assert!(subsample(&ds, 1.5, 0).is_err());
        assert_eq!(subsample(&ds, 1.0, 0).unwrap(), ds);
    }

    #[test]
    fn negative_sigma_rejected() {
        let cfg = CollectConfig { sigma: -0.1, ..Default::default() };
        assert!(collect(&medium(), &cfg).is_err());
    }
}
