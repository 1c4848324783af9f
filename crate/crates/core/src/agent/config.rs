use sha2::{Digest, Sha256};

use super::AgentConfig;
use crate::error::{Error, Result};
use crate::ndmath::{Activation, AdamConfig};
use crate::repr::{LossWeights, ReprConfig, Unroll};
use crate::sampler::{RelabelStrategy, DEFAULT_GAMMA, DEFAULT_HORIZON, DEFAULT_MC_WINDOW, DEFAULT_NSTEP};

/// Everything that shapes a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    /// Target refresh / representation update period `K`.
    pub period: u64,
    /// Representation updates per trigger `R`.
    pub repr_updates: usize,
    pub horizon: usize,
    pub nstep: usize,
    pub gamma: f64,
    pub mc_window: usize,
    pub bc_weight: f64,
    pub q_weight: f64,
    pub rl_batch: usize,
    pub chunk_batch: usize,
    pub weights: LossWeights,
    pub relabel: RelabelStrategy,
    /// Goal relabelling for the actor's batch.
    pub actor_relabel: RelabelStrategy,
    pub seed: u64,
    pub lr_repr: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub repr: ReprConfig,
    pub agent: AgentConfig,
    pub unroll: Unroll,
    pub repr_enabled: bool,
    pub critic_enabled: bool,
    pub clip_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 30_000,
            period: 100,
            repr_updates: 10,
            horizon: DEFAULT_HORIZON,
            nstep: DEFAULT_NSTEP,
            gamma: DEFAULT_GAMMA,
            mc_window: DEFAULT_MC_WINDOW,
            bc_weight: 1.0,
            q_weight: 1.0,
            rl_batch: 128,
            chunk_batch: 64,
            weights: LossWeights::default(),
            relabel: RelabelStrategy::default(),
            actor_relabel: RelabelStrategy::future(DEFAULT_ACTOR_P_GEO),
            seed: 0,
            lr_repr: 3e-4,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            repr: ReprConfig { latent_dim: 32, hidden: 64, ..ReprConfig::default() },
            agent: AgentConfig { hidden: 64, ..AgentConfig::default() },
            unroll: Unroll::OpenLoop,
            repr_enabled: true,
            critic_enabled: true,
            clip_targets: true,
        }
    }
}

pub const DEFAULT_ACTOR_P_GEO: f64 = 0.02;

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::param(format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::param(format!("invalid value `{v}` for `{key}` (true|false)"))),
    }
}

impl TrainConfig {
    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.period == 0 || self.horizon == 0 || self.nstep == 0 || self.repr_updates == 0 {
            return Err(Error::param("steps, period, horizon, nstep and repr_updates must be >= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::param(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.bc_weight >= 0.0) || !(self.q_weight >= 0.0) {
            return Err(Error::param("bc_weight and q_weight must be >= 0"));
        }
        if self.rl_batch == 0 || self.chunk_batch == 0 || self.mc_window == 0 {
            return Err(Error::param("batch sizes and mc_window must be >= 1"));
        }
        for lr in [self.lr_repr, self.lr_actor, self.lr_critic] {
            if !(lr > 0.0) {
                return Err(Error::param(format!("learning rates must be > 0, got {lr}")));
            }
        }
        if self.repr_enabled {
            self.weights.validate()?;
        }
        self.relabel.validate()?;
        self.actor_relabel.validate()?;
        self.repr.validate()?;
        if self.agent.hidden == 0 {
            return Err(Error::param("agent hidden width must be >= 1"));
        }
        if !(self.agent.q_scale > 0.0) || !self.agent.q_scale.is_finite() {
            return Err(Error::param(format!("q_scale must be > 0, got {}", self.agent.q_scale)));
        }
        Ok(())
    }

    /// Canonical `key=value` listing; `set` accepts every key.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let w = &self.weights;
        let r = &self.relabel;
        vec![
            ("steps", self.steps.to_string()),
            ("period", self.period.to_string()),
            ("repr_updates", self.repr_updates.to_string()),
            ("horizon", self.horizon.to_string()),
            ("nstep", self.nstep.to_string()),
            ("gamma", self.gamma.to_string()),
            ("mc_window", self.mc_window.to_string()),
            ("bc_weight", self.bc_weight.to_string()),
            ("q_weight", self.q_weight.to_string()),
            ("rl_batch", self.rl_batch.to_string()),
            ("chunk_batch", self.chunk_batch.to_string()),
            ("lambda_dyn", w.dynamics.to_string()),
            ("lambda_inv", w.inverse.to_string()),
            ("lambda_gdyn", w.goal_dynamics.to_string()),
            ("lambda_gact", w.goal_action.to_string()),
            ("lambda_rew", w.reward.to_string()),
            ("p_future", r.p_future.to_string()),
            ("p_random", r.p_random.to_string()),
            ("p_current", r.p_current.to_string()),
            ("p_geo", r.p_geo.to_string()),
            ("actor_p_future", self.actor_relabel.p_future.to_string()),
            ("actor_p_random", self.actor_relabel.p_random.to_string()),
            ("actor_p_current", self.actor_relabel.p_current.to_string()),
            ("actor_p_geo", self.actor_relabel.p_geo.to_string()),
            ("seed", self.seed.to_string()),
            ("lr_repr", self.lr_repr.to_string()),
            ("lr_actor", self.lr_actor.to_string()),
            ("lr_critic", self.lr_critic.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("latent_dim", self.repr.latent_dim.to_string()),
            ("hidden", self.repr.hidden.to_string()),
            ("hidden_layers", self.repr.hidden_layers.to_string()),
            ("activation", self.repr.activation.to_string()),
            ("latent_norm", self.repr.latent_norm.to_string()),
            ("agent_hidden", self.agent.hidden.to_string()),
            ("agent_hidden_layers", self.agent.hidden_layers.to_string()),
            ("q_scale", self.agent.q_scale.to_string()),
            ("unroll", self.unroll.to_string()),
            ("repr_enabled", self.repr_enabled.to_string()),
            ("critic_enabled", self.critic_enabled.to_string()),
            ("clip_targets", self.clip_targets.to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        TrainConfig::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "steps" => self.steps = parse(key, v)?,
            "period" => self.period = parse(key, v)?,
            "repr_updates" => self.repr_updates = parse(key, v)?,
            "horizon" => self.horizon = parse(key, v)?,
            "nstep" => self.nstep = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "mc_window" => self.mc_window = parse(key, v)?,
            "bc_weight" => self.bc_weight = parse(key, v)?,
            "q_weight" => self.q_weight = parse(key, v)?,
            "rl_batch" => self.rl_batch = parse(key, v)?,
            "chunk_batch" => self.chunk_batch = parse(key, v)?,
            "lambda_dyn" => self.weights.dynamics = parse(key, v)?,
            "lambda_inv" => self.weights.inverse = parse(key, v)?,
            "lambda_gdyn" => self.weights.goal_dynamics = parse(key, v)?,
            "lambda_gact" => self.weights.goal_action = parse(key, v)?,
            "lambda_rew" => self.weights.reward = parse(key, v)?,
            "p_future" => self.relabel.p_future = parse(key, v)?,
            "p_random" => self.relabel.p_random = parse(key, v)?,
            "p_current" => self.relabel.p_current = parse(key, v)?,
            "p_geo" => self.relabel.p_geo = parse(key, v)?,
            "actor_p_future" => self.actor_relabel.p_future = parse(key, v)?,
            "actor_p_random" => self.actor_relabel.p_random = parse(key, v)?,
            "actor_p_current" => self.actor_relabel.p_current = parse(key, v)?,
            "actor_p_geo" => self.actor_relabel.p_geo = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "lr_repr" => self.lr_repr = parse(key, v)?,
            "lr_actor" => self.lr_actor = parse(key, v)?,
            "lr_critic" => self.lr_critic = parse(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "latent_dim" => self.repr.latent_dim = parse(key, v)?,
            "hidden" => self.repr.hidden = parse(key, v)?,
            "hidden_layers" => self.repr.hidden_layers = parse(key, v)?,
            "activation" => self.repr.activation = v.trim().parse::<Activation>()?,
            "latent_norm" => self.repr.latent_norm = parse_bool(key, v)?,
            "agent_hidden" => self.agent.hidden = parse(key, v)?,
            "agent_hidden_layers" => self.agent.hidden_layers = parse(key, v)?,
            "q_scale" => self.agent.q_scale = parse(key, v)?,
            "unroll" => self.unroll = v.trim().parse()?,
            "repr_enabled" => self.repr_enabled = parse_bool(key, v)?,
            "critic_enabled" => self.critic_enabled = parse_bool(key, v)?,
            "clip_targets" => self.clip_targets = parse_bool(key, v)?,
            _ => return Err(Error::param(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// SHA-256 over every entry except `steps`, so a run can be extended.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "steps" {
                h.update(format!("{k}={v}\n"));
            }
        }
        format!("{:x}", h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip_through_set() {
        let mut c = TrainConfig { gamma: 0.95, seed: 7, repr_enabled: false, ..Default::default() };
        c.weights.reward = 0.25;
        c.unroll = Unroll::ClosedLoop;
        c.repr.activation = Activation::Tanh;
        let mut d = TrainConfig::default();
        for (k, v) in c.entries() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn hash_ignores_step_count_only() {
        let a = TrainConfig::default();
        let b = TrainConfig { steps: 5, ..a.clone() };
        let c = TrainConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn unknown_key_and_bad_values_rejected() {
        let mut c = TrainConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("gamma", "x").is_err());
        assert!(c.set("clip_targets", "maybe").is_err());
        c.gamma = 1.0;
        assert!(c.validate().is_err());
    }
}
