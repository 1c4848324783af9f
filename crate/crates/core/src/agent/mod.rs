//! Latent goal-conditioned actor-critic and the alternating training loop.

mod checkpoint;
mod config;
mod trainer;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use config::TrainConfig;
pub use trainer::{train, StepMetrics, TrainState, Trainer};

use rand::Rng;

use crate::error::{Error, Result};
use crate::gcenv::{Action, EnvSpec, EnvState, Goal};
use crate::ndmath::{
    adam_step, hard_copy, mlp_forward, mlp_forward_tape, Activation, AdamConfig, AdamState, Grads, ParamSet, Tape,
    Tensor,
};
use crate::repr::{encode_state, encode_state_action, ReprParams};
use crate::sampler::NStepBatch;

pub const HUBER_DELTA: f64 = 1.0;
/// Added to the detached `mean |Q|` normaliser of the actor's Q term.
pub const Q_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    /// Fixed multiplier on the critic network's output.
    pub q_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig { hidden: 256, hidden_layers: 2, q_scale: 100.0 }
    }
}

/// Actor `π(z_s ‖ z_g)` (tanh-squashed) and critic
/// `Q = q_scale · MLP(z_sa ‖ z_g)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams {
    pub actor: ParamSet,
    pub critic: ParamSet,
    pub activation: Activation,
    pub q_scale: f64,
}

impl AgentParams {
    pub fn init<R: Rng + ?Sized>(
        cfg: &AgentConfig,
        latent_dim: usize,
        action_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let widths = |out: usize| {
            let mut w = vec![2 * latent_dim];
            w.extend(std::iter::repeat(cfg.hidden).take(cfg.hidden_layers));
            w.push(out);
            w
        };
        AgentParams {
            actor: ParamSet::mlp("actor", &widths(action_dim), rng),
            critic: ParamSet::mlp("critic", &widths(1), rng),
            activation,
            q_scale: cfg.q_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetAgentParams {
    pub actor: ParamSet,
    pub critic: ParamSet,
}

impl TargetAgentParams {
    pub fn from_online(a: &AgentParams) -> Self {
        TargetAgentParams { actor: hard_copy(&a.actor), critic: hard_copy(&a.critic) }
    }
}

fn squash(t: Tensor) -> Tensor {
    t.map(f64::tanh)
}

/// Batched deterministic policy on latent inputs.
pub fn policy_latent(actor: &ParamSet, act: Activation, z_s: &Tensor, z_g: &Tensor) -> Result<Tensor> {
    Ok(squash(mlp_forward(actor, &z_s.concat_cols(z_g)?, act)?))
}

/// Batched deterministic policy on state and goal features.
pub fn policy(repr: &ReprParams, agent: &AgentParams, s: &Tensor, g: &Tensor) -> Result<Tensor> {
    policy_latent(&agent.actor, agent.activation, &encode_state(repr, s)?, &encode_state(repr, g)?)
}

pub fn act(spec: &EnvSpec, repr: &ReprParams, agent: &AgentParams, s: &EnvState, g: &Goal) -> Result<Action> {
    let sf = Tensor::from_rows(&[spec.state_features(s)])?;
    let gf = Tensor::from_rows(&[spec.goal_features(g)])?;
    let a = policy(repr, agent, &sf, &gf)?;
    Ok([a.data()[0], a.data()[1]])
}

/// `Q(z_sa ‖ z_g)` for a batch, shape `(B, 1)`.
pub fn q_latent(critic: &ParamSet, act: Activation, scale: f64, z_sa: &Tensor, z_g: &Tensor) -> Result<Tensor> {
    Ok(mlp_forward(critic, &z_sa.concat_cols(z_g)?, act)?.map(|q| scale * q))
}

/// Q of the current policy's own action at `(s, g)`.
pub fn q_value(repr: &ReprParams, agent: &AgentParams, s: &Tensor, g: &Tensor) -> Result<Tensor> {
    let zs = encode_state(repr, s)?;
    let zg = encode_state(repr, g)?;
    let a = policy_latent(&agent.actor, agent.activation, &zs, &zg)?;
    q_latent(&agent.critic, agent.activation, agent.q_scale, &encode_state_action(repr, &zs, &a)?, &zg)
}

/// An n-step batch as feature tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct RlTensors {
    pub states: Tensor,
    pub actions: Tensor,
    pub goals: Tensor,
    pub returns: Tensor,
    pub next_states: Tensor,
    pub masks: Tensor,
    pub n: usize,
}

impl RlTensors {
    pub fn from_batch(spec: &EnvSpec, b: &NStepBatch) -> Result<Self> {
        let feats = |xs: &[EnvState]| Tensor::from_rows(&xs.iter().map(|s| spec.state_features(s)).collect::<Vec<_>>());
        let col = |xs: &[f64]| Tensor::from_rows(&xs.iter().map(|v| [*v]).collect::<Vec<_>>());
        Ok(RlTensors {
            states: feats(&b.states)?,
            actions: Tensor::from_rows(&b.actions)?,
            goals: Tensor::from_rows(&b.goals.iter().map(|g| spec.goal_features(g)).collect::<Vec<_>>())?,
            returns: col(&b.returns)?,
            next_states: feats(&b.next_states)?,
            masks: col(&b.masks)?,
            n: b.n,
        })
    }
}

/// Encoder outputs for an RL batch; computed without a tape, so no RL
/// gradient can reach the encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct RlLatents {
    pub z_s: Tensor,
    pub z_g: Tensor,
    pub z_sa: Tensor,
    pub z_next: Tensor,
}

impl RlLatents {
    pub fn compute(repr: &ReprParams, t: &RlTensors) -> Result<Self> {
        let z_s = encode_state(repr, &t.states)?;
        let z_sa = encode_state_action(repr, &z_s, &t.actions)?;
        Ok(RlLatents { z_g: encode_state(repr, &t.goals)?, z_next: encode_state(repr, &t.next_states)?, z_s, z_sa })
    }
}

/// `y = R + m γⁿ Q̄(E_sa(z', π̄(z', z_g)), z_g)`, optionally clipped to
/// `[-1/(1-γ), 0]`.
pub fn critic_targets(
    repr: &ReprParams,
    targets: &TargetAgentParams,
    act: Activation,
    q_scale: f64,
    lat: &RlLatents,
    t: &RlTensors,
    gamma: f64,
    clip: bool,
) -> Result<Tensor> {
    let a_next = policy_latent(&targets.actor, act, &lat.z_next, &lat.z_g)?;
    let zsa_next = encode_state_action(repr, &lat.z_next, &a_next)?;
    let q_next = q_latent(&targets.critic, act, q_scale, &zsa_next, &lat.z_g)?;
    let disc = gamma.powi(t.n as i32);
    let lo = -1.0 / (1.0 - gamma);
    let mut y = Vec::with_capacity(q_next.len());
    for ((r, m), q) in t.returns.data().iter().zip(t.masks.data()).zip(q_next.data()) {
        let v = r + m * disc * q;
        if !v.is_finite() {
            return Err(Error::Numeric { term: "critic_target".into(), step: 0 });
        }
        y.push(if clip { v.clamp(lo, 0.0) } else { v });
    }
    Tensor::matrix(y.len(), 1, y)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticStats {
    pub loss: f64,
    pub mean_q: f64,
    pub mean_target: f64,
}

/// Huber loss of `Q(z_sa ‖ z_g)` against fixed targets, with gradients for
/// the critic only.
pub fn critic_loss(
    critic: &ParamSet,
    act: Activation,
    q_scale: f64,
    lat: &RlLatents,
    y: &Tensor,
) -> Result<(f64, Grads, CriticStats)> {
    let mut tape = Tape::new();
    let inp = tape.constant(lat.z_sa.concat_cols(&lat.z_g)?);
    let raw = mlp_forward_tape(&mut tape, critic, inp, act, true)?;
    let q = tape.scale(raw, q_scale);
    let yv = tape.constant(y.clone());
    let d = tape.sub(q, yv)?;
    let loss = tape.mean_huber(d, HUBER_DELTA)?;
    let val = tape.value(loss).item();
    if !val.is_finite() {
        return Err(Error::Numeric { term: "critic".into(), step: 0 });
    }
    let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
    let stats = CriticStats { loss: val, mean_q: mean(tape.value(q)), mean_target: mean(y) };
    Ok((val, tape.backward(loss)?, stats))
}

#[allow(clippy::too_many_arguments)]
pub fn critic_update(
    repr: &ReprParams,
    agent: &mut AgentParams,
    targets: &TargetAgentParams,
    lat: &RlLatents,
    t: &RlTensors,
    gamma: f64,
    clip: bool,
    opt: &mut AdamState,
    adam: &AdamConfig,
) -> Result<CriticStats> {
    let y = critic_targets(repr, targets, agent.activation, agent.q_scale, lat, t, gamma, clip)?;
    let (_, g, stats) = critic_loss(&agent.critic, agent.activation, agent.q_scale, lat, &y)?;
    agent.critic = adam_step(&agent.critic, &g, opt, adam)?;
    Ok(stats)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ActorStats {
    pub loss: f64,
    pub bc: f64,
    pub mean_q: f64,
}

/// `-q_weight · mean Q / (mean|Q| + 1e-6) + bc_weight · mse(π, a)`.
///
/// The normaliser is treated as a constant; pass `norm` to pin it (for
/// finite-difference checks), otherwise it is measured on this batch.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss(
    repr: &ReprParams,
    agent: &AgentParams,
    lat: &RlLatents,
    actions: &Tensor,
    bc_weight: f64,
    q_weight: f64,
    norm: Option<f64>,
) -> Result<(f64, Grads, ActorStats)> {
    let act = agent.activation;
    let mut tape = Tape::new();
    let inp = tape.constant(lat.z_s.concat_cols(&lat.z_g)?);
    let pre = mlp_forward_tape(&mut tape, &agent.actor, inp, act, true)?;
    let pi = tape.tanh(pre);
    let a = tape.constant(actions.clone());
    let bc = tape.mse(pi, a)?;
    let mut loss = tape.scale(bc, bc_weight);
    let mut mean_q = 0.0;
    if q_weight != 0.0 {
        let zs = tape.constant(lat.z_s.clone());
        let sa = tape.concat(zs, pi)?;
        let zsa = mlp_forward_tape(&mut tape, &repr.e_sa, sa, repr.activation, false)?;
        let zg = tape.constant(lat.z_g.clone());
        let qin = tape.concat(zsa, zg)?;
        let raw = mlp_forward_tape(&mut tape, &agent.critic, qin, act, false)?;
        let q = tape.scale(raw, agent.q_scale);
        let qv = tape.value(q);
        mean_q = qv.data().iter().sum::<f64>() / qv.len() as f64;
        let n = norm.unwrap_or_else(|| qv.data().iter().map(|v| v.abs()).sum::<f64>() / qv.len() as f64 + Q_NORM_EPS);
        let qm = tape.mean(q);
        let qt = tape.scale(qm, -q_weight / n);
        loss = tape.add(loss, qt)?;
    }
    let val = tape.value(loss).item();
    if !val.is_finite() {
        return Err(Error::Numeric { term: "actor".into(), step: 0 });
    }
    let stats = ActorStats { loss: val, bc: tape.value(bc).item(), mean_q };
    Ok((val, tape.backward(loss)?, stats))
}

#[allow(clippy::too_many_arguments)]
pub fn actor_update(
    repr: &ReprParams,
    agent: &mut AgentParams,
    lat: &RlLatents,
    actions: &Tensor,
    bc_weight: f64,
    q_weight: f64,
    opt: &mut AdamState,
    adam: &AdamConfig,
) -> Result<ActorStats> {
    let (_, g, stats) = actor_loss(repr, agent, lat, actions, bc_weight, q_weight, None)?;
    agent.actor = adam_step(&agent.actor, &g, opt, adam)?;
    Ok(stats)
}
