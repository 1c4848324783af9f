use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{evaluate, EvalReport};
use crate::agent::{train, TrainConfig, TrainState};
use crate::datagen::{collect, subsample, CollectConfig, CollectMode, OfflineDataset};
use crate::error::{Error, Result};
use crate::gcenv::{EnvId, EnvSpec};
use crate::repr::{repr_loss, ChunkTensors, LossWeights, Term};
use crate::sampler::sample_chunk;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationVariant {
    D,
    DI,
    DIR,
    DirGact,
    DirGdyn,
    Full,
    Gcbc,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 7] = [
        AblationVariant::D,
        AblationVariant::DI,
        AblationVariant::DIR,
        AblationVariant::DirGact,
        AblationVariant::DirGdyn,
        AblationVariant::Full,
        AblationVariant::Gcbc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationVariant::D => "D",
            AblationVariant::DI => "DI",
            AblationVariant::DIR => "DIR",
            AblationVariant::DirGact => "DIR_gact",
            AblationVariant::DirGdyn => "DIR_gdyn",
            AblationVariant::Full => "FULL",
            AblationVariant::Gcbc => "GCBC",
        }
    }

    /// Terms switched on by the variant (none for GCBC).
    pub fn terms(self) -> &'static [Term] {
        use Term::*;
        match self {
            AblationVariant::D => &[Dynamics],
            AblationVariant::DI => &[Dynamics, Inverse],
            AblationVariant::DIR => &[Dynamics, Inverse, Reward],
            AblationVariant::DirGact => &[Dynamics, Inverse, Reward, GoalAction],
            AblationVariant::DirGdyn => &[Dynamics, Inverse, Reward, GoalDynamics],
            AblationVariant::Full => &Term::ALL,
            AblationVariant::Gcbc => &[],
        }
    }

    /// Masks `base` weights: enabled terms keep their base value, the rest
    /// become zero.
    pub fn mask(self, base: &LossWeights) -> LossWeights {
        let mut w = LossWeights::zero();
        for &t in self.terms() {
            w.set(t, base.get(t));
        }
        w
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.weights = self.mask(&base.weights);
        if self == AblationVariant::Gcbc {
            c.repr_enabled = false;
            c.critic_enabled = false;
            c.q_weight = 0.0;
        }
        c
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param(format!("unknown ablation variant `{s}` (D|DI|DIR|DIR_gact|DIR_gdyn|FULL|GCBC)")))
    }
}

/// Critic and actor trained on a frozen, randomly initialised encoder.
pub fn no_representation_control(base: &TrainConfig) -> TrainConfig {
    TrainConfig { weights: LossWeights::zero(), repr_enabled: false, ..base.clone() }
}

pub fn run_ablation(
    variant: AblationVariant,
    base: &TrainConfig,
    ds: &OfflineDataset,
    episodes: usize,
    eval_seed: u64,
) -> Result<(EvalReport, TrainState)> {
    let cfg = variant.apply(base);
    let (state, _) = train(ds, &cfg)?;
    let spec = EnvSpec::new(ds.env);
    Ok((evaluate(&state.repr, &state.agent, &spec, episodes, eval_seed)?, state))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GdynRow {
    /// Mean per-step goal-dynamics error on held-out chunks.
    pub l_gdyn: f64,
    pub success: f64,
}

impl GdynRow {
    pub const CSV_HEADER: &'static str = "checkpoint,L_gdyn,success";
}

/// One row per `(checkpoint, held-out dataset)` pair. Every checkpoint sees
/// the same `chunks` chunks drawn with `seed`.
pub fn goal_dyn_error_vs_success(
    checkpoints: &[(&TrainState, &OfflineDataset)],
    cfg: &TrainConfig,
    chunks: usize,
    episodes: usize,
    seed: u64,
) -> Result<Vec<GdynRow>> {
    if checkpoints.len() < 2 {
        return Err(Error::param("need at least two checkpoints"));
    }
    checkpoints
        .iter()
        .map(|(st, ds)| {
            let spec = EnvSpec::new(ds.env);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = sample_chunk(&spec, ds, cfg.horizon, &cfg.relabel, cfg.gamma, cfg.mc_window, chunks, &mut rng)?;
            let bt = ChunkTensors::from_batch(&spec, &b)?;
            let (_, _, rep) = repr_loss(&st.repr, &st.target_repr, &bt, &LossWeights::default(), cfg.unroll)?;
            let ev = evaluate(&st.repr, &st.agent, &spec, episodes, seed)?;
            Ok(GdynRow { l_gdyn: rep.goal_dynamics / cfg.horizon as f64, success: ev.mean_success })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustConfig {
    pub base: TrainConfig,
    pub transitions: usize,
    /// Noise of the datasets in the fraction and stitch protocols.
    pub base_sigma: f64,
    pub fragment_cells: usize,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub eval_seed: u64,
    pub jobs: usize,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            base: TrainConfig::default(),
            transitions: 50_000,
            base_sigma: 0.2,
            fragment_cells: 4,
            seeds: vec![0, 1, 2],
            episodes: 50,
            eval_seed: 0,
            jobs: 1,
        }
    }
}

pub const FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const LOCOMOTION_NOISE: [f64; 4] = [0.2, 0.3, 0.4, 0.5];
pub const MANIPULATION_NOISE: [f64; 4] = [0.1, 0.2, 0.3, 0.4];

pub fn noise_grid(env: EnvId) -> [f64; 4] {
    if env.is_maze() {
        LOCOMOTION_NOISE
    } else {
        MANIPULATION_NOISE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustCell {
    pub protocol: &'static str,
    pub variant: AblationVariant,
    pub mode: CollectMode,
    pub sigma: f64,
    pub fraction: f64,
    pub seed: u64,
}

/// Cells in id order: fraction grid, noise grid, then (maze only) FULL and
/// GCBC on navigate and stitch datasets; each repeated per seed.
pub fn robust_cells(env: EnvId, rc: &RobustConfig) -> Vec<RobustCell> {
    let mut out = Vec::new();
    for &seed in &rc.seeds {
        let cell = |protocol, variant, mode, sigma, fraction| RobustCell { protocol, variant, mode, sigma, fraction, seed };
        for f in FRACTIONS {
            out.push(cell("fraction", AblationVariant::Full, CollectMode::Navigate, rc.base_sigma, f));
        }
        for s in noise_grid(env) {
            out.push(cell("noise", AblationVariant::Full, CollectMode::Navigate, s, 1.0));
        }
        if env.is_maze() {
            for mode in [CollectMode::Navigate, CollectMode::Stitch] {
                for v in [AblationVariant::Full, AblationVariant::Gcbc] {
                    out.push(cell("stitch", v, mode, rc.base_sigma, 1.0));
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustRow {
    pub env: EnvId,
    pub protocol: String,
    pub variant: AblationVariant,
    pub mode: CollectMode,
    pub sigma: f64,
    pub fraction: f64,
    pub seed: u64,
    pub success: f64,
    pub length: f64,
}

impl RobustRow {
    pub const CSV_HEADER: &'static str = "env,protocol,variant,mode,sigma,fraction,seed,success,episode_length";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.env, self.protocol, self.variant, self.mode, self.sigma, self.fraction, self.seed, self.success, self.length
        )
    }
}

fn run_cell(env: EnvId, rc: &RobustConfig, c: &RobustCell) -> Result<RobustRow> {
    let spec = EnvSpec::new(env);
    let ds = collect(
        &spec,
        &CollectConfig {
            mode: c.mode,
            sigma: c.sigma,
            target_transitions: rc.transitions,
            fragment_cells: rc.fragment_cells,
            seed: c.seed,
        },
    )?;
    let ds = subsample(&ds, c.fraction, c.seed)?;
    let base = TrainConfig { seed: c.seed, ..rc.base.clone() };
    let (ev, _) = run_ablation(c.variant, &base, &ds, rc.episodes, rc.eval_seed)?;
    Ok(RobustRow {
        env,
        protocol: c.protocol.to_string(),
        variant: c.variant,
        mode: c.mode,
        sigma: c.sigma,
        fraction: c.fraction,
        seed: c.seed,
        success: ev.mean_success,
        length: ev.mean_length,
    })
}

/// Runs every cell of [`robust_cells`] on at most `jobs` worker threads;
/// rows come back in cell-id order regardless of scheduling.
pub fn robustness_suite(env: EnvId, rc: &RobustConfig) -> Result<Vec<RobustRow>> {
    let cells = robust_cells(env, rc);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(rc.jobs.max(1))
        .build()
        .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))?;
    pool.install(|| cells.par_iter().map(|c| run_cell(env, rc, c)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub protocol: String,
    pub variant: AblationVariant,
    pub mode: CollectMode,
    pub sigma: f64,
    pub fraction: f64,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub n: usize,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str = "protocol,variant,mode,sigma,fraction,mean_success,std_success,seeds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.protocol, self.variant, self.mode, self.sigma, self.fraction, self.mean, self.std, self.n
        )
    }
}

/// Mean ± std of success per cell (rows grouped across seeds, first-seen order).
pub fn summarize(rows: &[RobustRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<(SummaryRow, Vec<f64>)> = Vec::new();
    for r in rows {
        let key = |s: &SummaryRow| {
            s.protocol == r.protocol && s.variant == r.variant && s.mode == r.mode && s.sigma == r.sigma && s.fraction == r.fraction
        };
        match groups.iter_mut().find(|(s, _)| key(s)) {
            Some((_, v)) => v.push(r.success),
            None => groups.push((
                SummaryRow {
                    protocol: r.protocol.clone(),
                    variant: r.variant,
                    mode: r.mode,
                    sigma: r.sigma,
                    fraction: r.fraction,
                    mean: 0.0,
                    std: 0.0,
                    n: 0,
                },
                vec![r.success],
            )),
        }
    }
    groups
        .into_iter()
        .map(|(mut s, v)| {
            let n = v.len() as f64;
            s.mean = v.iter().sum::<f64>() / n;
            s.std = (v.iter().map(|x| (x - s.mean).powi(2)).sum::<f64>() / n).sqrt();
            s.n = v.len();
            s
        })
        .collect()
}
