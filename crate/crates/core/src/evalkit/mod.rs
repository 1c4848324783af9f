//! Success-rate evaluation and diagnostics.

mod rank;
mod sweep;

pub use rank::{effective_rank, latent_effective_rank, spearman, symmetric_eigenvalues};
pub use sweep::{
    goal_dyn_error_vs_success, no_representation_control, noise_grid, robust_cells, robustness_suite, run_ablation,
    summarize, AblationVariant, GdynRow, RobustCell, RobustConfig, RobustRow, SummaryRow, FRACTIONS,
    LOCOMOTION_NOISE, MANIPULATION_NOISE,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{policy, q_value, AgentParams};
use crate::datagen::PUSH_STATION_OFFSET;
use crate::error::{Error, Result};
use crate::gcenv::{Action, Arena, EnvSpec, EnvState, Goal, MazeLayout, NUM_EVAL_TASKS};
use crate::ndmath::Tensor;
use crate::repr::{encode_state, ReprParams};
use crate::sampler::{mc_return, DEFAULT_MC_WINDOW};

/// Largest per-coordinate offset applied to evaluation starts.
pub const START_JITTER: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_task: Vec<f64>,
    pub mean_success: f64,
    pub mean_length: f64,
    pub episodes: usize,
    pub seed: u64,
}

/// Start of episode `episode` of a task: the task start with a seeded
/// offset of at most [`START_JITTER`] per coordinate (episode 0 is the
/// exact task start). Offsets that would leave the start cell or break the
/// push separation are redrawn.
pub fn jittered_start(spec: &EnvSpec, start: &EnvState, seed: u64, task: usize, episode: usize) -> EnvState {
    if episode == 0 {
        return *start;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((task as u64) << 32) | episode as u64);
    let mut j = |p: [f64; 2]| [p[0] + rng.gen_range(-START_JITTER..START_JITTER), p[1] + rng.gen_range(-START_JITTER..START_JITTER)];
    for _ in 0..64 {
        let cand = match *start {
            EnvState::Point { pos } => {
                let p = j(pos);
                if MazeLayout::cell_of(p[0], p[1]) != MazeLayout::cell_of(pos[0], pos[1]) {
                    continue;
                }
                EnvState::Point { pos: p }
            }
            EnvState::Push { agent, box_pos } => EnvState::Push { agent: j(agent), box_pos: j(box_pos) },
        };
        if spec.is_valid_state(&cand) {
            return cand;
        }
    }
    *start
}

/// Rolls a batched policy from each start towards `goal` for at most
/// `max_steps` steps. Returns per-episode state sequences (ending at the
/// first success or the step cap).
pub fn rollout_batch(
    spec: &EnvSpec,
    starts: &[EnvState],
    goal: &Goal,
    max_steps: usize,
    policy: &mut dyn FnMut(&[EnvState], &Goal) -> Result<Vec<Action>>,
) -> Result<Vec<Vec<EnvState>>> {
    let mut paths: Vec<Vec<EnvState>> = starts.iter().map(|s| vec![*s]).collect();
    let mut active: Vec<usize> = (0..starts.len()).filter(|&i| !spec.is_success(&starts[i], goal)).collect();
    for _ in 0..max_steps {
        if active.is_empty() {
            break;
        }
        let cur: Vec<EnvState> = active.iter().map(|&i| *paths[i].last().expect("non-empty")).collect();
        let acts = policy(&cur, goal)?;
        if acts.len() != cur.len() {
            return Err(Error::contract("policy returned the wrong number of actions"));
        }
        let mut still = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            let next = spec.step(&cur[k], acts[k]);
            paths[i].push(next);
            if !spec.is_success(&next, goal) {
                still.push(i);
            }
        }
        active = still;
    }
    Ok(paths)
}

/// Wraps the learned actor as a batched policy.
pub fn learned_policy<'a>(
    spec: &'a EnvSpec,
    repr: &'a ReprParams,
    agent: &'a AgentParams,
) -> impl FnMut(&[EnvState], &Goal) -> Result<Vec<Action>> + 'a {
    move |states: &[EnvState], g: &Goal| {
        let s = Tensor::from_rows(&states.iter().map(|s| spec.state_features(s)).collect::<Vec<_>>())?;
        let gf = spec.goal_features(g);
        let gs = Tensor::from_rows(&vec![gf; states.len()])?;
        let a = policy(repr, agent, &s, &gs)?;
        Ok((0..a.rows()).map(|r| [a.row(r)[0], a.row(r)[1]]).collect())
    }
}

/// Success rates of an arbitrary batched policy on the five fixed tasks.
pub fn evaluate_policy(
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
    policy: &mut dyn FnMut(&[EnvState], &Goal) -> Result<Vec<Action>>,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::param("episodes per task must be >= 1"));
    }
    let mut per_task = Vec::with_capacity(NUM_EVAL_TASKS);
    let mut lengths = 0usize;
    for task in 0..NUM_EVAL_TASKS {
        let (start, goal) = spec.sample_eval_task(task)?;
        let starts: Vec<EnvState> = (0..episodes).map(|e| jittered_start(spec, &start, seed, task, e)).collect();
        let paths = rollout_batch(spec, &starts, &goal, spec.max_episode_len, policy)?;
        let wins = paths.iter().filter(|p| spec.is_success(p.last().expect("non-empty"), &goal)).count();
        lengths += paths.iter().map(|p| p.len() - 1).sum::<usize>();
        per_task.push(wins as f64 / episodes as f64);
    }
    Ok(EvalReport {
        mean_success: per_task.iter().sum::<f64>() / per_task.len() as f64,
        mean_length: lengths as f64 / (episodes * NUM_EVAL_TASKS) as f64,
        per_task,
        episodes,
        seed,
    })
}

pub fn evaluate(
    repr: &ReprParams,
    agent: &AgentParams,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut pol = learned_policy(spec, repr, agent);
    evaluate_policy(spec, episodes, seed, &mut pol)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueCell {
    /// Grid point where the agent (maze) or box (push arena) starts.
    pub point: [f64; 2],
    pub q: f64,
    pub mc: f64,
    pub error: f64,
    /// Steps the policy rollout took (capped at the window).
    pub rollout_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueErrorMap {
    pub goal: Goal,
    pub cells: Vec<ValueCell>,
}

impl ValueErrorMap {
    pub fn mean_abs_error(&self) -> f64 {
        self.cells.iter().map(|c| c.error.abs()).sum::<f64>() / self.cells.len().max(1) as f64
    }
}

/// Grid starts for a value map. Maze: `resolution²` points per free cell.
/// Push arena: the box on a `5·resolution` grid over `[0.5, 4.5]²` with the
/// agent at the push station behind it.
pub fn value_map_starts(spec: &EnvSpec, goal: &Goal, resolution: usize) -> Vec<([f64; 2], EnvState)> {
    let r = resolution.max(1);
    let offs: Vec<f64> = (0..r).map(|i| (i as f64 + 0.5) / r as f64).collect();
    match &spec.arena {
        Arena::Maze(l) => {
            let mut out = Vec::new();
            for (cx, cy) in l.free_cells() {
                for oy in &offs {
                    for ox in &offs {
                        let p = [cx as f64 + ox, cy as f64 + oy];
                        out.push((p, EnvState::Point { pos: p }));
                    }
                }
            }
            out
        }
        Arena::Open { .. } => {
            let n = 5 * r;
            let mut out = Vec::new();
            for iy in 0..n {
                for ix in 0..n {
                    let b = [0.5 + 4.0 * ix as f64 / (n - 1) as f64, 0.5 + 4.0 * iy as f64 / (n - 1) as f64];
                    let d = [goal.0[0] - b[0], goal.0[1] - b[1]];
                    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
                    let u = if len < 1e-9 { [1.0, 0.0] } else { [d[0] / len, d[1] / len] };
                    let agent = [
                        (b[0] - PUSH_STATION_OFFSET * u[0]).clamp(0.0, 5.0),
                        (b[1] - PUSH_STATION_OFFSET * u[1]).clamp(0.0, 5.0),
                    ];
                    let s = EnvState::Push { agent, box_pos: b };
                    if spec.is_valid_state(&s) {
                        out.push((b, s));
                    }
                }
            }
            out
        }
    }
}

/// Critic estimate minus the discounted return of the policy's own rollout
/// from every grid point.
pub fn value_error_map(
    repr: &ReprParams,
    agent: &AgentParams,
    spec: &EnvSpec,
    goal: &Goal,
    resolution: usize,
    gamma: f64,
) -> Result<ValueErrorMap> {
    let starts = value_map_starts(spec, goal, resolution);
    let states: Vec<EnvState> = starts.iter().map(|(_, s)| *s).collect();
    let s = Tensor::from_rows(&states.iter().map(|s| spec.state_features(s)).collect::<Vec<_>>())?;
    let g = Tensor::from_rows(&vec![spec.goal_features(goal); states.len()])?;
    let q = q_value(repr, agent, &s, &g)?;
    let mut pol = learned_policy(spec, repr, agent);
    let paths = rollout_batch(spec, &states, goal, DEFAULT_MC_WINDOW, &mut pol)?;
    let mut cells = Vec::with_capacity(states.len());
    for (i, ((p, _), path)) in starts.iter().zip(&paths).enumerate() {
        let mc = rollout_return(spec, path, goal, gamma)?;
        let qv = q.data()[i];
        cells.push(ValueCell { point: *p, q: qv, mc, error: qv - mc, rollout_len: path.len() - 1 });
    }
    Ok(ValueErrorMap { goal: *goal, cells })
}

/// Discounted return of a recorded rollout under the sampler convention.
pub fn rollout_return(spec: &EnvSpec, path: &[EnvState], goal: &Goal, gamma: f64) -> Result<f64> {
    let reach = path.iter().position(|s| spec.is_success(s, goal));
    mc_return(0, reach, gamma, DEFAULT_MC_WINDOW)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceStep {
    pub state: EnvState,
    pub action: Action,
    pub q: f64,
    pub latent_dist: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub final_state: EnvState,
    pub success: bool,
}

impl EpisodeTrace {
    /// Spearman correlation of step index against latent goal distance.
    pub fn distance_trend(&self) -> Option<f64> {
        let t: Vec<f64> = (0..self.steps.len()).map(|i| i as f64).collect();
        let d: Vec<f64> = self.steps.iter().map(|s| s.latent_dist).collect();
        spearman(&t, &d)
    }

    pub const CSV_HEADER: &'static str = "t,x,y,a0,a1,q,latent_dist";

    pub fn csv_rows(&self) -> Vec<String> {
        self.steps
            .iter()
            .enumerate()
            .map(|(t, s)| {
                let p = s.state.agent();
                format!("{t},{},{},{},{},{},{}", p[0], p[1], s.action[0], s.action[1], s.q, s.latent_dist)
            })
            .collect()
    }
}

/// Rollout from an explicit start, recording `Q` and `‖z_t − z_g‖` each step.
pub fn trace_from(
    repr: &ReprParams,
    agent: &AgentParams,
    spec: &EnvSpec,
    start: EnvState,
    goal: &Goal,
) -> Result<EpisodeTrace> {
    let g = Tensor::from_rows(&[spec.goal_features(goal)])?;
    let zg = encode_state(repr, &g)?;
    let mut s = start;
    let mut steps = Vec::new();
    let mut success = spec.is_success(&s, goal);
    while !success && steps.len() < spec.max_episode_len {
        let sf = Tensor::from_rows(&[spec.state_features(&s)])?;
        let zs = encode_state(repr, &sf)?;
        let a = policy(repr, agent, &sf, &g)?;
        let q = q_value(repr, agent, &sf, &g)?.item();
        let dist = zs.data().iter().zip(zg.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let action = [a.data()[0], a.data()[1]];
        steps.push(TraceStep { state: s, action, q, latent_dist: dist });
        s = spec.step(&s, action);
        success = spec.is_success(&s, goal);
    }
    Ok(EpisodeTrace { steps, final_state: s, success })
}

pub fn episode_trace(repr: &ReprParams, agent: &AgentParams, spec: &EnvSpec, task: usize) -> Result<EpisodeTrace> {
    let (s, g) = spec.sample_eval_task(task)?;
    trace_from(repr, agent, spec, s, &g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcenv::EnvId;

    #[test]
    fn zero_policy_never_succeeds() {
        let spec = EnvSpec::new(EnvId::PointMazeMedium);
        let mut zero = |s: &[EnvState], _: &Goal| Ok(vec![[0.0, 0.0]; s.len()]);
        let r = evaluate_policy(&spec, 3, 0, &mut zero).unwrap();
        assert_eq!(r.mean_success, 0.0);
        assert_eq!(r.mean_length, 200.0);
    }

    #[test]
    fn goal_at_start_succeeds_at_step_zero() {
        let spec = EnvSpec::new(EnvId::PushBox);
        let s = EnvState::Push { agent: [1.0, 1.0], box_pos: [2.0, 2.0] };
        let mut zero = |s: &[EnvState], _: &Goal| Ok(vec![[0.0, 0.0]; s.len()]);
        let paths = rollout_batch(&spec, &[s], &Goal([2.0, 2.0]), 200, &mut zero).unwrap();
        assert_eq!(paths[0].len(), 1);
    }

    #[test]
    fn jitter_stays_valid_and_in_cell() {
        for id in EnvId::ALL {
            let spec = EnvSpec::new(id);
            for task in 0..NUM_EVAL_TASKS {
                let (s, g) = spec.sample_eval_task(task).unwrap();
                assert_eq!(jittered_start(&spec, &s, 3, task, 0), s);
                for e in 1..40 {
                    let j = jittered_start(&spec, &s, 3, task, e);
                    assert!(spec.is_valid_state(&j));
                    assert!(!spec.is_success(&j, &g));
                    assert_eq!(j, jittered_start(&spec, &s, 3, task, e));
                    if let (EnvState::Point { pos: a }, EnvState::Point { pos: b }) = (s, j) {
                        assert_eq!(MazeLayout::cell_of(a[0], a[1]), MazeLayout::cell_of(b[0], b[1]));
                    }
                }
            }
        }
    }

    #[test]
    fn value_map_covers_free_cells() {
        let spec = EnvSpec::new(EnvId::PointMazeMedium);
        let g = Goal([1.5, 1.5]);
        let starts = value_map_starts(&spec, &g, 1);
        assert_eq!(starts.len(), spec.layout().unwrap().free_cells().len());
        let push = EnvSpec::new(EnvId::PushBox);
        let starts = value_map_starts(&push, &Goal([2.5, 2.5]), 1);
        // border boxes whose station would leave the arena are skipped
        for iy in 1..4 {
            for ix in 1..4 {
                let b = [0.5 + ix as f64, 0.5 + iy as f64];
                assert!(starts.iter().any(|(p, _)| *p == b), "{b:?}");
            }
        }
        assert!(starts.iter().all(|(_, s)| push.is_valid_state(s)));
    }
}
