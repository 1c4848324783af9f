use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    actor_update, critic_update, AgentParams, RlLatents, RlTensors, TargetAgentParams, TrainConfig,
};
use crate::datagen::OfflineDataset;
use crate::error::{Error, Result};
use crate::gcenv::EnvSpec;
use crate::ndmath::{adam_step, hard_copy, AdamState};
use crate::repr::{repr_loss, ChunkTensors, LossReport, ReprParams, TargetReprParams};
use crate::sampler::{nstep_batch, sample_chunk};

/// Parameters, targets and optimiser state of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub repr: ReprParams,
    pub target_repr: TargetReprParams,
    pub agent: AgentParams,
    pub target_agent: TargetAgentParams,
    /// One slot per representation parameter set, in `ReprParams::sets` order.
    pub repr_opt: Vec<AdamState>,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub step: u64,
    pub repr_update_count: u64,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig, state_dim: usize, action_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let repr = ReprParams::init(&cfg.repr, state_dim, action_dim, &mut rng)?;
        let agent = AgentParams::init(&cfg.agent, cfg.repr.latent_dim, action_dim, cfg.repr.activation, &mut rng);
        Ok(TrainState {
            target_repr: TargetReprParams::from_online(&repr),
            target_agent: TargetAgentParams::from_online(&agent),
            repr_opt: repr.sets().iter().map(|p| AdamState::new(p)).collect(),
            actor_opt: AdamState::new(&agent.actor),
            critic_opt: AdamState::new(&agent.critic),
            repr,
            agent,
            step: 0,
            repr_update_count: 0,
        })
    }

    fn refresh_targets(&mut self) {
        self.target_repr = TargetReprParams::from_online(&self.repr);
        self.target_agent =
            TargetAgentParams { actor: hard_copy(&self.agent.actor), critic: hard_copy(&self.agent.critic) };
    }
}

/// One row of the metrics stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub critic_loss: Option<f64>,
    pub actor_loss: f64,
    pub mean_q: Option<f64>,
    /// Mean report over the representation updates made this step.
    pub repr: Option<LossReport>,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,critic_loss,actor_loss,mean_q,repr_total,L_dyn,L_inv,L_gdyn,L_gact,L_rew";

    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let r = self.repr;
        format!(
            "{},{},{:e},{},{},{},{},{},{},{}",
            self.step,
            o(self.critic_loss),
            self.actor_loss,
            o(self.mean_q),
            o(r.map(|r| r.total)),
            o(r.map(|r| r.dynamics)),
            o(r.map(|r| r.inverse)),
            o(r.map(|r| r.goal_dynamics)),
            o(r.map(|r| r.goal_action)),
            o(r.map(|r| r.reward)),
        )
    }
}

/// Owns the mutable state of a run and advances it one step at a time.
pub struct Trainer<'a> {
    spec: EnvSpec,
    ds: &'a OfflineDataset,
    cfg: TrainConfig,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(ds: &'a OfflineDataset, cfg: TrainConfig) -> Result<Self> {
        let spec = EnvSpec::new(ds.env);
        let state = TrainState::init(&cfg, spec.feature_dim(), 2)?;
        Self::resume(ds, cfg, state)
    }

    pub fn resume(ds: &'a OfflineDataset, cfg: TrainConfig, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        ds.validate()?;
        let spec = EnvSpec::new(ds.env);
        if state.repr.state_dim() != spec.feature_dim() {
            return Err(Error::contract(format!(
                "encoder expects {} state features, `{}` provides {}",
                state.repr.state_dim(),
                ds.env,
                spec.feature_dim()
            )));
        }
        let longest = ds.trajectories.iter().map(|t| t.len()).max().unwrap_or(0);
        if longest < cfg.horizon.max(cfg.nstep) {
            return Err(Error::Dataset(format!(
                "longest trajectory has {longest} steps; horizon {} and nstep {} need more",
                cfg.horizon, cfg.nstep
            )));
        }
        Ok(Trainer { spec, ds, cfg, state })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Advances to step `t = state.step + 1`: on multiples of `K` refresh all
    /// targets and run `R` representation updates; then one critic and one
    /// actor update.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let t = self.state.step + 1;
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(t);
        let at = |e: Error| match e {
            Error::Numeric { term, .. } => Error::Numeric { term, step: t as usize },
            other => other,
        };

        let mut repr_report = None;
        if t % cfg.period == 0 {
            self.state.refresh_targets();
            if cfg.repr_enabled {
                let mut acc = LossReport::default();
                for _ in 0..cfg.repr_updates {
                    let b = sample_chunk(
                        &self.spec,
                        self.ds,
                        cfg.horizon,
                        &cfg.relabel,
                        cfg.gamma,
                        cfg.mc_window,
                        cfg.chunk_batch,
                        &mut rng,
                    )?;
                    let bt = ChunkTensors::from_batch(&self.spec, &b)?;
                    let (_, g, rep) =
                        repr_loss(&self.state.repr, &self.state.target_repr, &bt, &cfg.weights, cfg.unroll).map_err(at)?;
                    let adam = cfg.adam(cfg.lr_repr);
                    for (p, opt) in self.state.repr.sets_mut().into_iter().zip(self.state.repr_opt.iter_mut()) {
                        *p = adam_step(p, &g, opt, &adam)?;
                    }
                    self.state.repr_update_count += 1;
                    acc.dynamics += rep.dynamics;
                    acc.inverse += rep.inverse;
                    acc.goal_dynamics += rep.goal_dynamics;
                    acc.goal_action += rep.goal_action;
                    acc.reward += rep.reward;
                    acc.total += rep.total;
                }
                let k = cfg.repr_updates as f64;
                repr_report = Some(LossReport {
                    dynamics: acc.dynamics / k,
                    inverse: acc.inverse / k,
                    goal_dynamics: acc.goal_dynamics / k,
                    goal_action: acc.goal_action / k,
                    reward: acc.reward / k,
                    total: acc.total / k,
                });
            }
        }

        let b = nstep_batch(&self.spec, self.ds, cfg.nstep, cfg.gamma, &cfg.relabel, cfg.rl_batch, &mut rng)?;
        let bt = RlTensors::from_batch(&self.spec, &b)?;
        let lat = RlLatents::compute(&self.state.repr, &bt)?;
        let critic = if cfg.critic_enabled {
            Some(
                critic_update(
                    &self.state.repr,
                    &mut self.state.agent,
                    &self.state.target_agent,
                    &lat,
                    &bt,
                    cfg.gamma,
                    cfg.clip_targets,
                    &mut self.state.critic_opt,
                    &cfg.adam(cfg.lr_critic),
                )
                .map_err(at)?,
            )
        } else {
            None
        };
        let q_weight = if cfg.critic_enabled { cfg.q_weight } else { 0.0 };
        let ab = nstep_batch(&self.spec, self.ds, 1, cfg.gamma, &cfg.actor_relabel, cfg.rl_batch, &mut rng)?;
        let abt = RlTensors::from_batch(&self.spec, &ab)?;
        let alat = RlLatents::compute(&self.state.repr, &abt)?;
        let actor = actor_update(
            &self.state.repr,
            &mut self.state.agent,
            &alat,
            &abt.actions,
            cfg.bc_weight,
            q_weight,
            &mut self.state.actor_opt,
            &cfg.adam(cfg.lr_actor),
        )
        .map_err(at)?;

        self.state.step = t;
        Ok(StepMetrics {
            step: t,
            critic_loss: critic.map(|c| c.loss),
            actor_loss: actor.loss,
            mean_q: critic.map(|c| c.mean_q),
            repr: repr_report,
        })
    }

    /// Steps until `state.step == cfg.steps`, handing each metrics row to
    /// `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(&StepMetrics)) -> Result<()> {
        while self.state.step < self.cfg.steps {
            let m = self.step()?;
            sink(&m);
        }
        Ok(())
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }
}

/// Full run from a fresh initialisation.
pub fn train(ds: &OfflineDataset, cfg: &TrainConfig) -> Result<(TrainState, Vec<StepMetrics>)> {
    let mut tr = Trainer::new(ds, cfg.clone())?;
    let mut metrics = Vec::with_capacity(cfg.steps as usize);
    tr.run(|m| metrics.push(*m))?;
    Ok((tr.into_state(), metrics))
}
