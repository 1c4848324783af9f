//! Multi-scale predictive representation learner.
//!
//! A state encoder `E_s`, a state-action encoder `E_sa` and five heads
//! (forward dynamics, inverse dynamics, goal-conditioned dynamics,
//! goal-conditioned action, return) trained on an `H`-step latent unroll.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gcenv::EnvSpec;
use crate::ndmath::{hard_copy, mlp_forward, mlp_forward_tape, Activation, Grads, ParamSet, Tape, Tensor, Var};
use crate::sampler::ChunkBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReprConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    /// Rescale `E_s` outputs row-wise to unit mean absolute value.
    pub latent_norm: bool,
}

impl Default for ReprConfig {
    fn default() -> Self {
        ReprConfig { latent_dim: 64, hidden: 256, hidden_layers: 2, activation: Activation::Relu, latent_norm: true }
    }
}

impl ReprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::param("latent and hidden widths must be >= 1"));
        }
        Ok(())
    }

    pub(crate) fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat(self.hidden).take(self.hidden_layers));
        w.push(output);
        w
    }
}

/// The five loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Dynamics,
    Inverse,
    GoalDynamics,
    GoalAction,
    Reward,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Dynamics, Term::Inverse, Term::GoalDynamics, Term::GoalAction, Term::Reward];

    pub fn name(self) -> &'static str {
        match self {
            Term::Dynamics => "dyn",
            Term::Inverse => "inv",
            Term::GoalDynamics => "gdyn",
            Term::GoalAction => "gact",
            Term::Reward => "rew",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub dynamics: f64,
    pub inverse: f64,
    pub goal_dynamics: f64,
    pub goal_action: f64,
    pub reward: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { dynamics: 1.0, inverse: 1.0, goal_dynamics: 1.0, goal_action: 1.0, reward: 1.0 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights { dynamics: 0.0, inverse: 0.0, goal_dynamics: 0.0, goal_action: 0.0, reward: 0.0 }
    }

    pub fn get(&self, t: Term) -> f64 {
        match t {
            Term::Dynamics => self.dynamics,
            Term::Inverse => self.inverse,
            Term::GoalDynamics => self.goal_dynamics,
            Term::GoalAction => self.goal_action,
            Term::Reward => self.reward,
        }
    }

    pub fn set(&mut self, t: Term, v: f64) {
        *match t {
            Term::Dynamics => &mut self.dynamics,
            Term::Inverse => &mut self.inverse,
            Term::GoalDynamics => &mut self.goal_dynamics,
            Term::GoalAction => &mut self.goal_action,
            Term::Reward => &mut self.reward,
        } = v;
    }

    pub fn with(mut self, t: Term, v: f64) -> Self {
        self.set(t, v);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ws = Term::ALL.map(|t| self.get(t));
        if ws.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::param(format!("loss weights must be finite and >= 0, got {ws:?}")));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(Error::param("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

/// Unweighted per-term losses summed over the unroll, plus the weighted
/// total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub dynamics: f64,
    pub inverse: f64,
    pub goal_dynamics: f64,
    pub goal_action: f64,
    pub reward: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,L_dyn,L_inv,L_gdyn,L_gact,L_rew,total";

    pub fn get(&self, t: Term) -> f64 {
        match t {
            Term::Dynamics => self.dynamics,
            Term::Inverse => self.inverse,
            Term::GoalDynamics => self.goal_dynamics,
            Term::GoalAction => self.goal_action,
            Term::Reward => self.reward,
        }
    }

    fn add(&mut self, t: Term, v: f64) {
        *match t {
            Term::Dynamics => &mut self.dynamics,
            Term::Inverse => &mut self.inverse,
            Term::GoalDynamics => &mut self.goal_dynamics,
            Term::GoalAction => &mut self.goal_action,
            Term::Reward => &mut self.reward,
        } += v;
    }

    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.dynamics, self.inverse, self.goal_dynamics, self.goal_action, self.reward, self.total
        )
    }
}

/// Encoders `ψ` and heads `ω`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprParams {
    pub e_s: ParamSet,
    pub e_sa: ParamSet,
    pub f_dyn: ParamSet,
    pub f_inv: ParamSet,
    pub f_gdyn: ParamSet,
    pub f_gact: ParamSet,
    pub f_rew: ParamSet,
    pub activation: Activation,
    pub latent_norm: bool,
}

impl ReprParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ReprConfig, state_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.latent_dim;
        let p = ReprParams {
            e_s: ParamSet::mlp("e_s", &cfg.widths(state_dim, d), rng),
            e_sa: ParamSet::mlp("e_sa", &cfg.widths(d + action_dim, d), rng),
            f_dyn: ParamSet::mlp("f_dyn", &cfg.widths(d, d), rng),
            f_inv: ParamSet::mlp("f_inv", &cfg.widths(2 * d, action_dim), rng),
            f_gdyn: ParamSet::mlp("f_gdyn", &cfg.widths(2 * d, d), rng),
            f_gact: ParamSet::mlp("f_gact", &cfg.widths(2 * d, action_dim), rng),
            f_rew: ParamSet::mlp("f_rew", &cfg.widths(2 * d, 1), rng),
            activation: cfg.activation,
            latent_norm: cfg.latent_norm,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn latent_dim(&self) -> usize {
        self.e_s.output_width()
    }

    pub fn state_dim(&self) -> usize {
        self.e_s.input_width()
    }

    pub fn action_dim(&self) -> usize {
        self.e_sa.input_width() - self.latent_dim()
    }

    pub fn sets(&self) -> [&ParamSet; 7] {
        [&self.e_s, &self.e_sa, &self.f_dyn, &self.f_inv, &self.f_gdyn, &self.f_gact, &self.f_rew]
    }

    pub fn sets_mut(&mut self) -> [&mut ParamSet; 7] {
        [
            &mut self.e_s,
            &mut self.e_sa,
            &mut self.f_dyn,
            &mut self.f_inv,
            &mut self.f_gdyn,
            &mut self.f_gact,
            &mut self.f_rew,
        ]
    }

    /// Parameter set of the head behind a loss term.
    pub fn head(&self, t: Term) -> &ParamSet {
        match t {
            Term::Dynamics => &self.f_dyn,
            Term::Inverse => &self.f_inv,
            Term::GoalDynamics => &self.f_gdyn,
            Term::GoalAction => &self.f_gact,
            Term::Reward => &self.f_rew,
        }
    }

    pub fn head_mut(&mut self, t: Term) -> &mut ParamSet {
        match t {
            Term::Dynamics => &mut self.f_dyn,
            Term::Inverse => &mut self.f_inv,
            Term::GoalDynamics => &mut self.f_gdyn,
            Term::GoalAction => &mut self.f_gact,
            Term::Reward => &mut self.f_rew,
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.sets().iter().map(|p| p.num_scalars()).sum()
    }

    /// Checks the widths that tie the networks to one latent space.
    pub fn validate(&self) -> Result<()> {
        let d = self.latent_dim();
        let a = self.e_sa.input_width().checked_sub(d).filter(|a| *a > 0);
        let Some(a) = a else {
            return Err(Error::contract("e_sa input must be latent width plus action width"));
        };
        let want = [
            (&self.e_sa, d + a, d),
            (&self.f_dyn, d, d),
            (&self.f_inv, 2 * d, a),
            (&self.f_gdyn, 2 * d, d),
            (&self.f_gact, 2 * d, a),
            (&self.f_rew, 2 * d, 1),
        ];
        for (p, i, o) in want {
            if p.input_width() != i || p.output_width() != o {
                return Err(Error::contract(format!(
                    "`{}` maps {} -> {}, expected {i} -> {o}",
                    p.name(),
                    p.input_width(),
                    p.output_width()
                )));
            }
        }
        Ok(())
    }
}

/// Frozen encoder copies; only ever replaced by a hard copy.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetReprParams {
    pub e_s: ParamSet,
    pub e_sa: ParamSet,
}

impl TargetReprParams {
    pub fn from_online(p: &ReprParams) -> Self {
        TargetReprParams { e_s: hard_copy(&p.e_s), e_sa: hard_copy(&p.e_sa) }
    }
}

fn check_width(what: &str, t: &Tensor, want: usize) -> Result<()> {
    if t.shape().len() != 2 || t.cols() != want {
        return Err(Error::contract(format!("{what} must have {want} columns, got shape {:?}", t.shape())));
    }
    Ok(())
}

fn check_rows(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::contract(format!("batch sizes differ ({} vs {})", a.rows(), b.rows())));
    }
    Ok(())
}

/// `E_s` on a batch of state (or padded goal) features.
pub fn encode_state(p: &ReprParams, s: &Tensor) -> Result<Tensor> {
    check_width("state input", s, p.state_dim())?;
    let z = mlp_forward(&p.e_s, s, p.activation)?;
    Ok(if p.latent_norm { z.avg_l1_norm() } else { z })
}

pub fn encode_state_action(p: &ReprParams, z_s: &Tensor, a: &Tensor) -> Result<Tensor> {
    check_width("latent input", z_s, p.latent_dim())?;
    check_width("action input", a, p.action_dim())?;
    check_rows(z_s, a)?;
    mlp_forward(&p.e_sa, &z_s.concat_cols(a)?, p.activation)
}

fn pair_head(p: &ReprParams, net: &ParamSet, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    check_width("latent input", x, p.latent_dim())?;
    check_width("latent input", y, p.latent_dim())?;
    check_rows(x, y)?;
    mlp_forward(net, &x.concat_cols(y)?, p.activation)
}

pub fn predict_forward(p: &ReprParams, z_sa: &Tensor) -> Result<Tensor> {
    check_width("latent input", z_sa, p.latent_dim())?;
    mlp_forward(&p.f_dyn, z_sa, p.activation)
}

pub fn predict_inverse(p: &ReprParams, z_s: &Tensor, z_next: &Tensor) -> Result<Tensor> {
    pair_head(p, &p.f_inv, z_s, z_next)
}

pub fn predict_goal_dyn(p: &ReprParams, z_s: &Tensor, z_g: &Tensor) -> Result<Tensor> {
    pair_head(p, &p.f_gdyn, z_s, z_g)
}

pub fn predict_goal_act(p: &ReprParams, z_s: &Tensor, z_g: &Tensor) -> Result<Tensor> {
    pair_head(p, &p.f_gact, z_s, z_g)
}

pub fn predict_reward(p: &ReprParams, z_sa: &Tensor, z_g: &Tensor) -> Result<Tensor> {
    pair_head(p, &p.f_rew, z_sa, z_g)
}

/// A chunk batch as feature tensors, one tensor per unroll step.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkTensors {
    /// `H + 1` tensors of shape `(B, state_dim)`.
    pub states: Vec<Tensor>,
    /// `H` tensors of shape `(B, action_dim)`.
    pub actions: Vec<Tensor>,
    pub goals: Tensor,
    /// `H` tensors of shape `(B, 1)`.
    pub mc_returns: Vec<Tensor>,
}

impl ChunkTensors {
    pub fn from_batch(spec: &EnvSpec, b: &ChunkBatch) -> Result<Self> {
        if b.is_empty() {
            return Err(Error::contract("empty chunk batch"));
        }
        let h = b.horizon;
        let states = (0..=h)
            .map(|k| {
                let rows: Vec<Vec<f64>> = b.states.iter().map(|r| spec.state_features(&r[k])).collect();
                Tensor::from_rows(&rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let actions = (0..h)
            .map(|k| Tensor::from_rows(&b.actions.iter().map(|r| r[k]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let goals: Vec<Vec<f64>> = b.goals.iter().map(|g| spec.goal_features(g)).collect();
        let mc_returns = (0..h)
            .map(|k| Tensor::from_rows(&b.mc_returns.iter().map(|r| [r[k]]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChunkTensors { states, actions, goals: Tensor::from_rows(&goals)?, mc_returns })
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn batch_size(&self) -> usize {
        self.goals.rows()
    }

    fn validate(&self, p: &ReprParams) -> Result<()> {
        let h = self.horizon();
        if h == 0 || self.states.len() != h + 1 || self.mc_returns.len() != h {
            return Err(Error::contract("chunk needs H >= 1 actions, H + 1 states and H returns"));
        }
        check_width("goal input", &self.goals, p.state_dim())?;
        for s in &self.states {
            check_width("state input", s, p.state_dim())?;
            check_rows(s, &self.goals)?;
        }
        for (a, m) in self.actions.iter().zip(&self.mc_returns) {
            check_width("action input", a, p.action_dim())?;
            check_width("return target", m, 1)?;
            check_rows(a, &self.goals)?;
            check_rows(m, &self.goals)?;
        }
        Ok(())
    }
}

/// How the latent state is carried between unroll steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Unroll {
    /// `z^{h+1} = f_dyn(z^h_sa)`.
    #[default]
    OpenLoop,
    /// `z^{h+1} = E_s(s_{h+1})`.
    ClosedLoop,
}

impl std::str::FromStr for Unroll {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" => Ok(Unroll::OpenLoop),
            "closed" => Ok(Unroll::ClosedLoop),
            _ => Err(Error::param(format!("unknown unroll mode `{s}` (open|closed)"))),
        }
    }
}

impl fmt::Display for Unroll {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unroll::OpenLoop => "open",
            Unroll::ClosedLoop => "closed",
        })
    }
}

/// Weighted multi-step loss, its gradients with respect to the online
/// encoders and heads, and the per-term report.
pub fn repr_loss(
    p: &ReprParams,
    targets: &TargetReprParams,
    batch: &ChunkTensors,
    weights: &LossWeights,
    unroll: Unroll,
) -> Result<(f64, Grads, LossReport)> {
    weights.validate()?;
    p.validate()?;
    batch.validate(p)?;
    let act = p.activation;
    let mut tape = Tape::new();
    let fwd = |tape: &mut Tape, net: &ParamSet, x: Var| mlp_forward_tape(tape, net, x, act, true);
    let enc = |tape: &mut Tape, x: &Tensor| -> Result<Var> {
        let x = tape.constant(x.clone());
        let z = mlp_forward_tape(tape, &p.e_s, x, act, true)?;
        Ok(if p.latent_norm { tape.avg_l1_norm(z) } else { z })
    };

    let mut zs = enc(&mut tape, &batch.states[0])?;
    let zg = enc(&mut tape, &batch.goals)?;

    let mut report = LossReport::default();
    let mut total: Option<Var> = None;
    for h in 0..batch.horizon() {
        let a = tape.constant(batch.actions[h].clone());
        let sa = tape.concat(zs, a)?;
        let zsa = fwd(&mut tape, &p.e_sa, sa)?;
        let zt = mlp_forward(&targets.e_s, &batch.states[h + 1], act)?;
        let target = tape.constant(if p.latent_norm { zt.avg_l1_norm() } else { zt });

        let next = fwd(&mut tape, &p.f_dyn, zsa)?;
        let l_dyn = tape.mse(next, target)?;
        let inv_in = tape.concat(zs, target)?;
        let inv = fwd(&mut tape, &p.f_inv, inv_in)?;
        let l_inv = tape.mse(inv, a)?;
        let sg = tape.concat(zs, zg)?;
        let gd = fwd(&mut tape, &p.f_gdyn, sg)?;
        let l_gdyn = tape.mse(gd, target)?;
        let ga = fwd(&mut tape, &p.f_gact, sg)?;
        let l_gact = tape.mse(ga, a)?;
        let rin = tape.concat(zsa, zg)?;
        let r = fwd(&mut tape, &p.f_rew, rin)?;
        let mc = tape.constant(batch.mc_returns[h].clone());
        let l_rew = tape.mse(r, mc)?;

        for (term, v) in Term::ALL.into_iter().zip([l_dyn, l_inv, l_gdyn, l_gact, l_rew]) {
            let val = tape.value(v).item();
            if !val.is_finite() {
                return Err(Error::Numeric { term: term.name().into(), step: h });
            }
            report.add(term, val);
            let scaled = tape.scale(v, weights.get(term));
            total = Some(match total {
                Some(t) => tape.add(t, scaled)?,
                None => scaled,
            });
        }

        zs = match unroll {
            Unroll::OpenLoop => next,
            Unroll::ClosedLoop => enc(&mut tape, &batch.states[h + 1])?,
        };
    }
    let total = total.expect("H >= 1");
    report.total = tape.value(total).item();
    if !report.total.is_finite() {
        return Err(Error::Numeric { term: "total".into(), step: batch.horizon() - 1 });
    }
    let grads = tape.backward(total)?;
    Ok((report.total, grads, report))
}
