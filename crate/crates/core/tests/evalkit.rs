use mspr::agent::{train, AgentConfig, AgentParams, TrainConfig};
use mspr::datagen::{collect, expert_action, CollectConfig, CollectMode, OfflineDataset};
use mspr::evalkit::{
    goal_dyn_error_vs_success, noise_grid, no_representation_control, robust_cells, summarize, AblationVariant,
    RobustConfig, RobustRow, FRACTIONS,
};
use mspr::evalkit::{
    effective_rank, evaluate_policy, jittered_start, learned_policy, rollout_batch, rollout_return, spearman,
    trace_from, value_error_map, value_map_starts, EpisodeTrace, START_JITTER,
};
use mspr::gcenv::{Action, EnvId, EnvSpec, EnvState, Goal, NUM_EVAL_TASKS};
use mspr::ndmath::{Activation, ParamSet, Tensor};
use mspr::repr::{repr_loss, ChunkTensors, LossWeights, ReprConfig, ReprParams, TargetReprParams, Term, Unroll};
use mspr::sampler::{sample_chunk, RelabelStrategy, DEFAULT_MC_WINDOW};
use mspr::Result;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn expert(spec: &EnvSpec) -> impl FnMut(&[EnvState], &Goal) -> Result<Vec<Action>> + '_ {
    move |states, g| states.iter().map(|s| expert_action(spec, s, g)).collect()
}

fn models(spec: &EnvSpec, seed: u64) -> (ReprParams, AgentParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rc = ReprConfig { latent_dim: 4, hidden: 8, hidden_layers: 1, ..Default::default() };
    let repr = ReprParams::init(&rc, spec.feature_dim(), 2, &mut rng).unwrap();
    let ac = AgentConfig { hidden: 8, hidden_layers: 1, ..Default::default() };
    let agent = AgentParams::init(&ac, 4, 2, Activation::Relu, &mut rng);
    (repr, agent)
}

fn tiny_cfg() -> TrainConfig {
    let mut c = TrainConfig { steps: 8, period: 4, repr_updates: 1, horizon: 3, rl_batch: 16, chunk_batch: 8, ..Default::default() };
    c.repr = ReprConfig { latent_dim: 4, hidden: 8, hidden_layers: 1, ..Default::default() };
    c.agent = AgentConfig { hidden: 8, hidden_layers: 1, ..Default::default() };
    c
}

fn small_dataset(seed: u64) -> OfflineDataset {
    let spec = EnvSpec::new(EnvId::PointMazeMedium);
    collect(&spec, &CollectConfig { sigma: 0.2, target_transitions: 2000, seed, ..Default::default() }).unwrap()
}

fn oracle_return(reach: Option<usize>, gamma: f64) -> f64 {
    let k = reach.unwrap_or(DEFAULT_MC_WINDOW) as i32;
    -(1.0 - gamma.powi(k)) / (1.0 - gamma)
}

#[test]
fn expert_policy_solves_every_environment() {
    for env in EnvId::ALL {
        let spec = EnvSpec::new(env);
        let mut pol = expert(&spec);
        let r = evaluate_policy(&spec, 10, 0, &mut pol).unwrap();
        assert!(r.mean_success >= 0.95, "{env}: {r:?}");
        assert_eq!(r.per_task.len(), NUM_EVAL_TASKS);
        assert!(r.mean_length > 0.0 && r.mean_length <= spec.max_episode_len as f64);
    }
}

#[test]
fn evaluation_is_reproducible_from_the_seed() {
    let spec = EnvSpec::new(EnvId::PointMazeLarge);
    let (repr, agent) = models(&spec, 1);
    let mut a = learned_policy(&spec, &repr, &agent);
    let r1 = evaluate_policy(&spec, 4, 9, &mut a).unwrap();
    let r2 = evaluate_policy(&spec, 4, 9, &mut a).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn jittered_starts_stay_valid_and_close() {
    for env in EnvId::ALL {
        let spec = EnvSpec::new(env);
        for task in 0..NUM_EVAL_TASKS {
            let (start, _) = spec.sample_eval_task(task).unwrap();
            assert_eq!(jittered_start(&spec, &start, 3, task, 0), start);
            for e in 1..20 {
                let s = jittered_start(&spec, &start, 3, task, e);
                assert!(spec.is_valid_state(&s));
                let (a, b) = (s.agent(), start.agent());
                assert!((a[0] - b[0]).abs() <= START_JITTER && (a[1] - b[1]).abs() <= START_JITTER);
            }
        }
    }
}

#[test]
fn value_map_mc_matches_an_independent_rollout() {
    let spec = EnvSpec::new(EnvId::PointMazeMedium);
    let (repr, agent) = models(&spec, 2);
    let (_, goal) = spec.sample_eval_task(0).unwrap();
    let gamma = 0.99;
    let map = value_error_map(&repr, &agent, &spec, &goal, 1, gamma).unwrap();
    let starts: Vec<EnvState> = value_map_starts(&spec, &goal, 1).into_iter().map(|(_, s)| s).collect();
    assert_eq!(map.cells.len(), starts.len());
    let mut pol = learned_policy(&spec, &repr, &agent);
    let paths = rollout_batch(&spec, &starts, &goal, DEFAULT_MC_WINDOW, &mut pol).unwrap();
    let bound = 1.0 / (1.0 - gamma);
    for (c, p) in map.cells.iter().zip(&paths) {
        let reach = p.iter().position(|s| spec.is_success(s, &goal));
        let mc = oracle_return(reach, gamma);
        assert!((c.mc - mc).abs() < 1e-9, "{} vs {mc}", c.mc);
        assert!((-bound - 1e-9..=0.0).contains(&c.mc));
        assert_eq!(c.error, c.q - c.mc);
        assert_eq!(c.rollout_len, p.len() - 1);
    }
    let at_goal = map.cells.iter().find(|c| spec.is_success(&EnvState::Point { pos: c.point }, &goal)).unwrap();
    assert_eq!(at_goal.mc, 0.0);
    assert_eq!(at_goal.rollout_len, 0);
}

#[test]
fn value_map_covers_every_free_cell() {
    let spec = EnvSpec::new(EnvId::PointMazeMedium);
    let n_free = spec.layout().unwrap().free_cells().len();
    let g = Goal([1.5, 1.5]);
    assert_eq!(value_map_starts(&spec, &g, 1).len(), n_free);
    assert_eq!(value_map_starts(&spec, &g, 3).len(), 9 * n_free);
    let push = EnvSpec::new(EnvId::PushBox);
    let starts = value_map_starts(&push, &Goal([4.0, 4.0]), 1);
    assert!(!starts.is_empty() && starts.len() <= 25);
    assert!(starts.iter().all(|(_, s)| push.is_valid_state(s)));
}

#[test]
fn rollout_return_of_expert_path() {
    let spec = EnvSpec::new(EnvId::PointMazeMedium);
    let (start, goal) = spec.sample_eval_task(1).unwrap();
    let mut pol = expert(&spec);
    let path = rollout_batch(&spec, &[start], &goal, DEFAULT_MC_WINDOW, &mut pol).unwrap().remove(0);
    let k = path.len() - 1;
    assert!(spec.is_success(path.last().unwrap(), &goal));
    assert!((rollout_return(&spec, &path, &goal, 0.9).unwrap() - oracle_return(Some(k), 0.9)).abs() < 1e-12);
    assert!((rollout_return(&spec, &path[..1], &goal, 0.9).unwrap() - oracle_return(None, 0.9)).abs() < 1e-12);
}

#[test]
fn traces_record_every_step() {
    let spec = EnvSpec::new(EnvId::PointMazeMedium);
    let (repr, agent) = models(&spec, 3);
    let (start, goal) = spec.sample_eval_task(0).unwrap();
    let tr = trace_from(&repr, &agent, &spec, start, &goal).unwrap();
    assert_eq!(tr.steps[0].state, start);
    assert!(tr.success || tr.steps.len() == spec.max_episode_len);
    assert_eq!(tr.csv_rows().len(), tr.steps.len());
    assert_eq!(EpisodeTrace::CSV_HEADER.split(',').count(), tr.csv_rows()[0].split(',').count());
    if let Some(r) = tr.distance_trend() {
        assert!((-1.0..=1.0).contains(&r));
    }
    let at_goal = trace_from(&repr, &agent, &spec, EnvState::Point { pos: goal.0 }, &goal).unwrap();
    assert!(at_goal.success && at_goal.steps.is_empty());
}

fn svd_effective_rank(z: &Tensor) -> f64 {
    let (n, d) = (z.rows(), z.cols());
    let mut m = nalgebra::DMatrix::from_row_slice(n, d, z.data());
    for j in 0..d {
        let mean = m.column(j).mean();
        m.column_mut(j).add_scalar_mut(-mean);
    }
    let sv = m.singular_values();
    let total: f64 = sv.iter().sum();
    let h: f64 = sv.iter().map(|s| s / total).filter(|p| *p > 0.0).map(|p| -p * p.ln()).sum();
    h.exp()
}

#[test]
fn effective_rank_of_reference_latents() {
    let same = Tensor::from_rows(&vec![[0.3, -1.0, 2.0, 0.5]; 16]).unwrap();
    assert_eq!(effective_rank(&same), 1.0);

    let d = 6;
    let mut rows = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut r = vec![0.0; d];
            r[i] = s;
            rows.push(r);
        }
    }
    let basis = Tensor::from_rows(&rows).unwrap();
    assert!((effective_rank(&basis) - d as f64).abs() < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gauss: Vec<f64> = (0..512 * 8).map(|_| StandardNormal.sample(&mut rng)).collect();
    let g = Tensor::matrix(512, 8, gauss).unwrap();
    let er = effective_rank(&g);
    assert!((7.0..=8.0).contains(&er), "{er}");
    assert!((er - svd_effective_rank(&g)).abs() < 1e-8);
}

#[test]
fn spearman_extremes() {
    let x: Vec<f64> = (0..20).map(f64::from).collect();
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    assert_eq!(spearman(&x, &sq), Some(1.0));
    let neg: Vec<f64> = x.iter().map(|v| -v.powi(3)).collect();
    assert_eq!(spearman(&x, &neg), Some(-1.0));
    assert_eq!(spearman(&[1.0], &[2.0]), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn effective_rank_is_bounded(n in 2usize..24, d in 1usize..7, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = Tensor::matrix(n, d, data).unwrap();
        let er = effective_rank(&z);
        prop_assert!(er >= 1.0 && er <= d.min(n) as f64 + 1e-12);
        prop_assert!((er - svd_effective_rank(&z).clamp(1.0, d.min(n) as f64)).abs() < 1e-6);
    }

    #[test]
    fn spearman_is_a_correlation(x in prop::collection::vec(-5.0f64..5.0, 2..30), seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = x.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Some(r) = spearman(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert_eq!(spearman(&y, &x), Some(r));
        }
    }
}

#[test]
fn ablation_masks() {
    let base = LossWeights::default();
    assert_eq!(AblationVariant::Full.mask(&base), base);
    let d = AblationVariant::D.mask(&base);
    assert_eq!(Term::ALL.iter().filter(|&&t| d.get(t) == 0.0).count(), 4);
    assert_eq!(d.get(Term::Dynamics), 1.0);
    let dir_gact = AblationVariant::DirGact.mask(&base);
    assert_eq!(dir_gact.get(Term::GoalDynamics), 0.0);
    assert_eq!(dir_gact.get(Term::GoalAction), 1.0);
    for v in AblationVariant::ALL {
        assert_eq!(v.as_str().parse::<AblationVariant>().unwrap(), v);
        assert_eq!(v.to_string().to_lowercase().parse::<AblationVariant>().unwrap(), v);
    }
    assert!("DIRT".parse::<AblationVariant>().is_err());
    let gcbc = AblationVariant::Gcbc.apply(&TrainConfig::default());
    assert!(!gcbc.repr_enabled && !gcbc.critic_enabled && gcbc.q_weight == 0.0);
    let ctl = no_representation_control(&TrainConfig::default());
    assert!(!ctl.repr_enabled && ctl.critic_enabled);
    assert_eq!(ctl.weights, LossWeights::zero());
}

fn perturb_all(p: &ParamSet, eps: f64) -> ParamSet {
    let mut q = p.clone();
    let keys: Vec<String> = q.entries().iter().map(|(k, _)| k.to_string()).collect();
    for k in keys {
        let t = q.get(&k).unwrap();
        let shape = t.shape().to_vec();
        let d = t.data().iter().map(|v| v + eps).collect();
        q.set(&k, Tensor::new(shape, d).unwrap()).unwrap();
    }
    q
}

#[test]
fn masked_heads_do_not_affect_the_loss() {
    let ds = small_dataset(0);
    let spec = EnvSpec::new(ds.env);
    let (repr, _) = models(&spec, 5);
    let tg = TargetReprParams::from_online(&repr);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let b = sample_chunk(&spec, &ds, 3, &RelabelStrategy::default(), 0.99, DEFAULT_MC_WINDOW, 8, &mut rng).unwrap();
    let bt = ChunkTensors::from_batch(&spec, &b).unwrap();
    for v in AblationVariant::ALL {
        if v == AblationVariant::Gcbc {
            continue;
        }
        let w = v.mask(&LossWeights::default());
        let (base, _, _) = repr_loss(&repr, &tg, &bt, &w, Unroll::OpenLoop).unwrap();
        for t in Term::ALL {
            if w.get(t) != 0.0 {
                continue;
            }
            let mut p = repr.clone();
            let head = match t {
                Term::Dynamics => &mut p.f_dyn,
                Term::Inverse => &mut p.f_inv,
                Term::GoalDynamics => &mut p.f_gdyn,
                Term::GoalAction => &mut p.f_gact,
                Term::Reward => &mut p.f_rew,
            };
            *head = perturb_all(head, 0.5);
            let (l, _, _) = repr_loss(&p, &tg, &bt, &w, Unroll::OpenLoop).unwrap();
            assert!((l - base).abs() <= 1e-12, "{v} {t:?}: {base} vs {l}");
        }
    }
}

#[test]
fn goal_dynamics_rows_track_checkpoints() {
    let ds = small_dataset(1);
    let heldout = small_dataset(2);
    let cfg = tiny_cfg();
    let init = mspr::agent::TrainState::init(&cfg, 2, 2).unwrap();
    let trained = train(&ds, &TrainConfig { steps: 120, period: 1, repr_updates: 1, ..cfg.clone() }).unwrap().0;
    assert!(goal_dyn_error_vs_success(&[(&init, &heldout)], &cfg, 16, 1, 0).is_err());
    let same = goal_dyn_error_vs_success(&[(&init, &heldout), (&init, &heldout)], &cfg, 32, 1, 0).unwrap();
    assert_eq!(same[0], same[1]);
    let rows = goal_dyn_error_vs_success(&[(&init, &heldout), (&trained, &heldout)], &cfg, 32, 1, 0).unwrap();
    assert!(rows[1].l_gdyn < rows[0].l_gdyn, "{rows:?}");
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.success)));
}

#[test]
fn robustness_grids() {
    let rc = RobustConfig { seeds: vec![0, 1], ..Default::default() };
    let maze = robust_cells(EnvId::PointMazeLarge, &rc);
    assert_eq!(maze.len(), 2 * (FRACTIONS.len() + 4 + 4));
    assert_eq!(noise_grid(EnvId::PointMazeLarge), [0.2, 0.3, 0.4, 0.5]);
    assert_eq!(noise_grid(EnvId::PushBox), [0.1, 0.2, 0.3, 0.4]);
    let push = robust_cells(EnvId::PushBox, &rc);
    assert_eq!(push.len(), 2 * (FRACTIONS.len() + 4));
    assert!(push.iter().all(|c| c.protocol != "stitch"));
    assert!(maze.iter().filter(|c| c.protocol == "fraction").all(|c| c.sigma == rc.base_sigma));
}

#[test]
fn summaries_average_over_seeds() {
    let row = |seed, success| RobustRow {
        env: EnvId::PushBox,
        protocol: "noise".into(),
        variant: AblationVariant::Full,
        mode: CollectMode::Navigate,
        sigma: 0.1,
        fraction: 1.0,
        seed,
        success,
        length: 10.0,
    };
    let s = summarize(&[row(0, 0.2), row(1, 0.6), row(2, 0.4)]);
    assert_eq!(s.len(), 1);
    assert!((s[0].mean - 0.4).abs() < 1e-12);
    assert!((s[0].std - (0.08f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!(s[0].n, 3);
    assert_eq!(RobustRow::CSV_HEADER.split(',').count(), row(0, 0.0).csv_row().split(',').count());
}
