use mspr::datagen::{
    collect, collect_with_stats, expert_action, load, rollout_expert, save, subsample, CollectConfig, CollectMode,
    OfflineDataset,
};
use mspr::gcenv::{EnvId, EnvSpec, EnvState, MazeLayout};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(mode: CollectMode, sigma: f64, n: usize, seed: u64) -> CollectConfig {
    CollectConfig { mode, sigma, target_transitions: n, seed, ..Default::default() }
}

fn replays(spec: &EnvSpec, ds: &OfflineDataset) -> bool {
    ds.trajectories.iter().all(|t| {
        let mut s = t.states[0];
        t.actions.iter().zip(&t.states[1..]).all(|(a, want)| {
            s = spec.step(&s, *a);
            s.values().iter().zip(want.values()).all(|(x, y)| (x - y).abs() <= 1e-12)
        })
    })
}

#[test]
fn noiseless_navigate_mostly_succeeds() {
    let spec = EnvSpec::new(EnvId::PointMazeMedium);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = 0;
    for i in 0..100 {
        let start = spec.reset(1000 + i);
        let goal = spec.random_goal(&mut rng);
        if spec.is_success(&start, &goal) {
            ok += 1;
            continue;
        }
        ok += rollout_expert(&spec, start, &goal, 0.0, 200, &mut rng).unwrap().1 as usize;
    }
    assert!(ok >= 90, "{ok}/100");
}

#[test]
fn noiseless_expert_meets_success_radius_design() {
    for id in EnvId::ALL {
        let spec = EnvSpec::new(id);
        let (_, st) = collect_with_stats(&spec, &cfg(CollectMode::Navigate, 0.0, 4000, 1)).unwrap();
        assert!(st.success_rate() >= 0.95, "{id}: {}", st.success_rate());
    }
}

#[test]
fn corner_to_corner_noiseless_rollout_succeeds() {
    let spec = EnvSpec::new(EnvId::PointMazeMedium);
    let start = EnvState::Point { pos: MazeLayout::center((1, 1)) };
    let goal = mspr::gcenv::Goal(MazeLayout::center((5, 5)));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (t, ok) = rollout_expert(&spec, start, &goal, 0.0, 200, &mut rng).unwrap();
    assert!(ok && t.len() <= 200);
    assert_eq!(expert_action(&spec, t.final_state(), &goal).unwrap().len(), 2);
}

#[test]
fn stitch_fragments_never_span_the_long_task() {
    let spec = EnvSpec::new(EnvId::PointMazeLarge);
    let ds = collect(&spec, &cfg(CollectMode::Stitch, 0.2, 20_000, 3)).unwrap();
    let max_len = ds.trajectories.iter().map(|t| t.len()).max().unwrap();
    assert!(max_len <= 32, "{max_len}");
    let (s, g) = spec.sample_eval_task(4).unwrap();
    let a = s.agent();
    let (sc, gc) = (MazeLayout::cell_of(a[0], a[1]), MazeLayout::cell_of(g.0[0], g.0[1]));
    assert!(max_len < spec.layout().unwrap().distance(sc, gc).unwrap() * 4);
    let spanning = ds
        .trajectories
        .iter()
        .filter(|t| {
            let cells: Vec<_> = t.states.iter().map(|s| MazeLayout::cell_of(s.agent()[0], s.agent()[1])).collect();
            cells.contains(&sc) && cells.contains(&gc)
        })
        .count();
    assert_eq!(spanning, 0);
}

#[test]
fn noise_never_raises_success_and_lengthens_paths() {
    for id in EnvId::ALL {
        let spec = EnvSpec::new(id);
        let mut rates = Vec::new();
        let mut lens = Vec::new();
        for sigma in [0.0, 0.1, 0.2, 0.3, 0.4, 0.5] {
            let (mut r, mut l) = (0.0, 0.0);
            for seed in 0..3 {
                let (ds, st) = collect_with_stats(&spec, &cfg(CollectMode::Navigate, sigma, 2000, seed)).unwrap();
                r += st.success_rate() / 3.0;
                l += ds.num_transitions() as f64 / st.trajectories as f64 / 3.0;
            }
            rates.push(r);
            lens.push(l);
        }
        for w in rates.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{id}: {rates:?}");
        }
        assert!(lens[5] > lens[0], "{id}: {lens:?}");
    }
}

#[test]
fn collection_is_deterministic_and_meets_target() {
    let spec = EnvSpec::new(EnvId::PushBox);
    let c = cfg(CollectMode::Navigate, 0.3, 1500, 9);
    let a = collect(&spec, &c).unwrap();
    assert_eq!(a, collect(&spec, &c).unwrap());
    assert!(a.num_transitions() >= 1500);
    let without_last = a.num_transitions() - a.trajectories.last().unwrap().len();
    assert!(without_last < 1500);
}

#[test]
fn subsample_examples() {
    let spec = EnvSpec::new(EnvId::PointMazeMedium);
    let mut ds = collect(&spec, &cfg(CollectMode::Navigate, 0.2, 3000, 2)).unwrap();
    ds.trajectories.truncate(100);
    let half = subsample(&ds, 0.5, 4).unwrap();
    assert_eq!(half.trajectories.len(), 50);
    assert_eq!(half, subsample(&ds, 0.5, 4).unwrap());
    assert_ne!(half, subsample(&ds, 0.5, 5).unwrap());
    assert_eq!(subsample(&ds, 0.25, 0).unwrap().trajectories.len(), 25);
    assert_eq!(subsample(&ds, 0.001, 0).unwrap().trajectories.len(), 1);
    // whole trajectories, original order
    let mut last = 0;
    for t in &half.trajectories {
        let i = ds.trajectories.iter().position(|u| u == t).unwrap();
        assert!(i >= last);
        last = i;
    }
}

#[test]
fn file_round_trip() {
    let spec = EnvSpec::new(EnvId::PointMazeLarge);
    let ds = collect(&spec, &cfg(CollectMode::Stitch, 0.4, 500, 7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    save(&ds, &p).unwrap();
    assert_eq!(load(&p).unwrap(), ds);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stored_trajectories_replay(seed in 0u64..10_000, sigma in 0.0f64..0.6, env in 0usize..3, stitch: bool) {
        let id = EnvId::ALL[env];
        let spec = EnvSpec::new(id);
        let mode = if stitch && id.is_maze() { CollectMode::Stitch } else { CollectMode::Navigate };
        let ds = collect(&spec, &cfg(mode, sigma, 300, seed)).unwrap();
        prop_assert!(replays(&spec, &ds));
        prop_assert!(ds.trajectories.iter().all(|t| t.states.iter().all(|s| spec.is_valid_state(s))));
    }

    #[test]
    fn subsample_count_is_ceiling(n in 1usize..60, frac in 0.01f64..1.0, seed: u64) {
        let spec = EnvSpec::new(EnvId::PointMazeMedium);
        let mut ds = collect(&spec, &cfg(CollectMode::Navigate, 0.0, 60 * 30, 0)).unwrap();
        prop_assume!(ds.trajectories.len() >= n);
        ds.trajectories.truncate(n);
        let sub = subsample(&ds, frac, seed).unwrap();
        prop_assert_eq!(sub.trajectories.len(), ((frac * n as f64).ceil() as usize).max(1));
    }
}
