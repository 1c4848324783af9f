//! Chunk and n-step batches with hindsight-relabeled goals.

use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::datagen::{OfflineDataset, Trajectory};
use crate::error::{Error, Result};
use crate::gcenv::{Action, EnvSpec, EnvState, Goal};

pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_NSTEP: usize = 3;
pub const DEFAULT_HORIZON: usize = 5;
/// Horizon of the pessimistic return for goals a trajectory never reaches.
pub const DEFAULT_MC_WINDOW: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelabelStrategy {
    pub p_future: f64,
    pub p_random: f64,
    pub p_current: f64,
    pub p_geo: f64,
}

impl Default for RelabelStrategy {
    fn default() -> Self {
        RelabelStrategy { p_future: 0.5, p_random: 0.3, p_current: 0.2, p_geo: 0.2 }
    }
}

impl RelabelStrategy {
    pub fn current() -> Self {
        RelabelStrategy { p_future: 0.0, p_random: 0.0, p_current: 1.0, ..Default::default() }
    }

    pub fn future(p_geo: f64) -> Self {
        RelabelStrategy { p_future: 1.0, p_random: 0.0, p_current: 0.0, p_geo }
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_future, self.p_random, self.p_current];
        if ps.iter().any(|p| !(*p >= 0.0)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("relabel probabilities must be >= 0 and sum to 1, got {ps:?}")));
        }
        if !(self.p_geo > 0.0 && self.p_geo <= 1.0) {
            return Err(Error::param(format!("p_geo must lie in (0, 1], got {}", self.p_geo)));
        }
        Ok(())
    }
}

/// Rows of `H`-step trajectory chunks.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkBatch {
    pub horizon: usize,
    /// `states[b]` holds `s_0..=s_H`.
    pub states: Vec<Vec<EnvState>>,
    pub actions: Vec<Vec<Action>>,
    pub goals: Vec<Goal>,
    /// `mc_returns[b][h]` is the return from `s_h` under `goals[b]`.
    pub mc_returns: Vec<Vec<f64>>,
    pub reached: Vec<bool>,
}

impl ChunkBatch {
    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NStepBatch {
    pub n: usize,
    pub states: Vec<EnvState>,
    pub actions: Vec<Action>,
    pub goals: Vec<Goal>,
    pub returns: Vec<f64>,
    pub next_states: Vec<EnvState>,
    /// 0 when the goal was reached inside the window.
    pub masks: Vec<f64>,
}

impl NStepBatch {
    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }
}

/// First `j >= from` with `s_j` inside the goal ball.
pub fn first_success(spec: &EnvSpec, traj: &Trajectory, from: usize, g: &Goal) -> Option<usize> {
    (from..traj.states.len()).find(|&j| spec.is_success(&traj.states[j], g))
}

/// Relabels a goal for index `t` and returns it with the first index
/// `j >= t` at which the trajectory is inside its success ball.
pub fn relabel_goal<R: Rng + ?Sized>(
    spec: &EnvSpec,
    ds: &OfflineDataset,
    traj: &Trajectory,
    t: usize,
    strat: &RelabelStrategy,
    rng: &mut R,
) -> Result<(Goal, Option<usize>)> {
    if t >= traj.len() {
        return Err(Error::contract(format!("index {t} out of range for trajectory of length {}", traj.len())));
    }
    let u: f64 = rng.gen();
    let goal = if u < strat.p_future {
        let extra = if strat.p_geo >= 1.0 {
            0
        } else {
            Geometric::new(strat.p_geo).map_err(|e| Error::param(e.to_string()))?.sample(rng)
        };
        let delta = (1 + extra as usize).min(traj.len() - t);
        spec.goal_of(&traj.states[t + delta])
    } else if u < strat.p_future + strat.p_random {
        let other = &ds.trajectories[rng.gen_range(0..ds.trajectories.len())];
        spec.goal_of(&other.states[rng.gen_range(0..other.states.len())])
    } else {
        spec.goal_of(&traj.states[t])
    };
    let reach = first_success(spec, traj, t, &goal);
    Ok((goal, reach))
}

/// `-(1 + γ + ... + γ^(K-1))` with `K = reach - t`, or `W` terms when the
/// goal is never reached.
pub fn mc_return(t: usize, reach: Option<usize>, gamma: f64, window: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) || window == 0 {
        return Err(Error::param(format!("need 0 < gamma < 1 and W >= 1 (gamma={gamma}, W={window})")));
    }
    let k = match reach {
        Some(j) if j < t => return Err(Error::contract(format!("reach index {j} precedes t={t}"))),
        Some(j) => j - t,
        None => window,
    };
    Ok(-discounted_ones(gamma, k))
}

/// `1 + γ + ... + γ^(k-1)`, summed term by term.
pub fn discounted_ones(gamma: f64, k: usize) -> f64 {
    let mut s = 0.0;
    let mut g = 1.0;
    for _ in 0..k {
        s += g;
        g *= gamma;
    }
    s
}

/// Cumulative count of valid start indices (`t <= len - span`).
fn start_table(ds: &OfflineDataset, span: usize) -> Vec<usize> {
    let mut acc = 0;
    ds.trajectories
        .iter()
        .map(|t| {
            if t.len() >= span {
                acc += t.len() - span + 1;
            }
            acc
        })
        .collect()
}

fn sample_start<R: Rng + ?Sized>(table: &[usize], rng: &mut R) -> (usize, usize) {
    let total = *table.last().expect("non-empty table");
    let u = rng.gen_range(0..total);
    let i = table.partition_point(|&c| c <= u);
    let before = if i == 0 { 0 } else { table[i - 1] };
    (i, u - before)
}

pub fn sample_chunk<R: Rng + ?Sized>(
    spec: &EnvSpec,
    ds: &OfflineDataset,
    horizon: usize,
    strat: &RelabelStrategy,
    gamma: f64,
    window: usize,
    batch: usize,
    rng: &mut R,
) -> Result<ChunkBatch> {
    if horizon == 0 || batch == 0 {
        return Err(Error::param("horizon and batch size must be >= 1"));
    }
    strat.validate()?;
    mc_return(0, None, gamma, window)?;
    let table = start_table(ds, horizon);
    if table.last().copied().unwrap_or(0) == 0 {
        return Err(Error::Dataset(format!("no trajectory has length >= {horizon}")));
    }
    let mut out = ChunkBatch {
        horizon,
        states: Vec::with_capacity(batch),
        actions: Vec::with_capacity(batch),
        goals: Vec::with_capacity(batch),
        mc_returns: Vec::with_capacity(batch),
        reached: Vec::with_capacity(batch),
    };
    for _ in 0..batch {
        let (i, t) = sample_start(&table, rng);
        let traj = &ds.trajectories[i];
        let (goal, reach) = relabel_goal(spec, ds, traj, t, strat, rng)?;
        let mut rets = Vec::with_capacity(horizon);
        let mut j = reach;
        for h in 0..horizon {
            if matches!(j, Some(r) if r < t + h) {
                j = first_success(spec, traj, t + h, &goal);
            }
            rets.push(mc_return(t + h, j, gamma, window)?);
        }
        out.states.push(traj.states[t..=t + horizon].to_vec());
        out.actions.push(traj.actions[t..t + horizon].to_vec());
        out.goals.push(goal);
        out.mc_returns.push(rets);
        out.reached.push(reach.is_some());
    }
    Ok(out)
}

pub fn nstep_batch<R: Rng + ?Sized>(
    spec: &EnvSpec,
    ds: &OfflineDataset,
    n: usize,
    gamma: f64,
    strat: &RelabelStrategy,
    batch: usize,
    rng: &mut R,
) -> Result<NStepBatch> {
    if n == 0 || batch == 0 {
        return Err(Error::param("n and batch size must be >= 1"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::param(format!("need 0 < gamma < 1, got {gamma}")));
    }
    strat.validate()?;
    let table = start_table(ds, n);
    if table.last().copied().unwrap_or(0) == 0 {
        return Err(Error::Dataset(format!("no trajectory has length >= {n}")));
    }
    let mut out = NStepBatch {
        n,
        states: Vec::with_capacity(batch),
        actions: Vec::with_capacity(batch),
        goals: Vec::with_capacity(batch),
        returns: Vec::with_capacity(batch),
        next_states: Vec::with_capacity(batch),
        masks: Vec::with_capacity(batch),
    };
    for _ in 0..batch {
        let (i, t) = sample_start(&table, rng);
        let traj = &ds.trajectories[i];
        let (goal, _) = relabel_goal(spec, ds, traj, t, strat, rng)?;
        let hit = (0..n).find(|&k| spec.is_success(&traj.states[t + k + 1], &goal));
        let (ret, next, mask) = match hit {
            Some(k) => (-discounted_ones(gamma, k), traj.states[t + k + 1], 0.0),
            None => (-discounted_ones(gamma, n), traj.states[t + n], 1.0),
        };
        out.states.push(traj.states[t]);
        out.actions.push(traj.actions[t]);
        out.goals.push(goal);
        out.returns.push(ret);
        out.next_states.push(next);
        out.masks.push(mask);
    }
    Ok(out)
}
