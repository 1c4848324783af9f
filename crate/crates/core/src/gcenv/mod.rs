//! Deterministic goal-conditioned toy environments: a continuous point maze
//! (two layouts) and an open push-box arena.
//!
//! Coordinates are in cell units. Rewards follow the sparse convention
//! `0` on success, `-1` otherwise.

mod layout;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use layout::{Cell, MazeLayout};

use crate::error::{Error, Result};

pub type Action = [f64; 2];

/// Distance kept between the agent and a wall face after a blocked move.
pub const WALL_MARGIN: f64 = 0.01;
/// Minimum agent-box separation enforced by the push rule.
pub const PUSH_RADIUS: f64 = 0.6;
pub const ARENA_SIZE: f64 = 5.0;
pub const NUM_EVAL_TASKS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvId {
    PointMazeMedium,
    PointMazeLarge,
    PushBox,
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [EnvId::PointMazeMedium, EnvId::PointMazeLarge, EnvId::PushBox];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::PointMazeMedium => "pointmaze_medium",
            EnvId::PointMazeLarge => "pointmaze_large",
            EnvId::PushBox => "pushbox",
        }
    }

    pub fn is_maze(self) -> bool {
        !matches!(self, EnvId::PushBox)
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown environment `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Arena {
    Maze(MazeLayout),
    /// Square `[0, size]^2` without interior walls.
    Open { size: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvState {
    Point { pos: [f64; 2] },
    Push { agent: [f64; 2], box_pos: [f64; 2] },
}

impl EnvState {
    pub fn agent(&self) -> [f64; 2] {
        match *self {
            EnvState::Point { pos } => pos,
            EnvState::Push { agent, .. } => agent,
        }
    }

    /// Raw coordinates as stored in dataset files.
    pub fn values(&self) -> Vec<f64> {
        match *self {
            EnvState::Point { pos } => pos.to_vec(),
            EnvState::Push { agent, box_pos } => vec![agent[0], agent[1], box_pos[0], box_pos[1]],
        }
    }

    pub fn from_values(id: EnvId, v: &[f64]) -> Result<Self> {
        match (id.is_maze(), v) {
            (true, &[x, y]) => Ok(EnvState::Point { pos: [x, y] }),
            (false, &[ax, ay, bx, by]) => Ok(EnvState::Push { agent: [ax, ay], box_pos: [bx, by] }),
            _ => Err(Error::dim(format!("{id} state needs {} values, got {}", state_len(id), v.len()))),
        }
    }
}

pub fn state_len(id: EnvId) -> usize {
    if id.is_maze() {
        2
    } else {
        4
    }
}

/// Target position: the agent position in mazes, the box position in the
/// push arena.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Goal(pub [f64; 2]);

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub id: EnvId,
    pub arena: Arena,
    /// Cell units moved per unit action.
    pub action_scale: f64,
    pub success_radius: f64,
    pub max_episode_len: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn clip_action(a: Action) -> Action {
    [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)]
}

impl EnvSpec {
    pub fn new(id: EnvId) -> Self {
        let (arena, eps) = match id {
            EnvId::PointMazeMedium => (Arena::Maze(MazeLayout::medium()), 0.5),
            EnvId::PointMazeLarge => (Arena::Maze(MazeLayout::large()), 0.5),
            EnvId::PushBox => (Arena::Open { size: ARENA_SIZE }, 0.4),
        };
        EnvSpec { id, arena, action_scale: 0.25, success_radius: eps, max_episode_len: 200 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.action_scale > 0.0) {
            return Err(Error::param("action scale must be positive"));
        }
        if !(self.success_radius > 0.0) {
            return Err(Error::param("success radius must be positive"));
        }
        if self.max_episode_len == 0 {
            return Err(Error::param("max episode length must be at least 1"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Option<&MazeLayout> {
        match &self.arena {
            Arena::Maze(l) => Some(l),
            Arena::Open { .. } => None,
        }
    }

    fn extent(&self) -> [f64; 2] {
        match &self.arena {
            Arena::Maze(l) => [l.width() as f64, l.height() as f64],
            Arena::Open { size } => [*size, *size],
        }
    }

    /// Network input width shared by states and goals.
    pub fn feature_dim(&self) -> usize {
        match self.id {
            EnvId::PushBox => 5,
            _ => 2,
        }
    }

    /// Coordinates rescaled to `[-1, 1]`. Push-arena states carry a trailing
    /// goal-slot indicator of 0.
    pub fn state_features(&self, s: &EnvState) -> Vec<f64> {
        let [w, h] = self.extent();
        let n = |v: f64, e: f64| 2.0 * v / e - 1.0;
        match *s {
            EnvState::Point { pos } => vec![n(pos[0], w), n(pos[1], h)],
            EnvState::Push { agent, box_pos } => vec![
                n(agent[0], w),
                n(agent[1], h),
                n(box_pos[0], w),
                n(box_pos[1], h),
                0.0,
            ],
        }
    }

    /// Goals share the state feature layout; in the push arena the goal
    /// fills the box slot, the agent slot is zero and the indicator is 1.
    pub fn goal_features(&self, g: &Goal) -> Vec<f64> {
        let [w, h] = self.extent();
        let n = |v: f64, e: f64| 2.0 * v / e - 1.0;
        match self.id {
            EnvId::PushBox => vec![0.0, 0.0, n(g.0[0], w), n(g.0[1], h), 1.0],
            _ => vec![n(g.0[0], w), n(g.0[1], h)],
        }
    }

    /// Goal-space projection of a state.
    pub fn goal_of(&self, s: &EnvState) -> Goal {
        match *s {
            EnvState::Point { pos } => Goal(pos),
            EnvState::Push { box_pos, .. } => Goal(box_pos),
        }
    }

    fn achieved(&self, s: &EnvState) -> [f64; 2] {
        self.goal_of(s).0
    }

    /// Inclusive goal test: `dist <= success_radius`.
    pub fn is_success(&self, s: &EnvState, g: &Goal) -> bool {
        dist(self.achieved(s), g.0) <= self.success_radius
    }

    pub fn reward(&self, s_next: &EnvState, g: &Goal) -> f64 {
        if self.is_success(s_next, g) {
            0.0
        } else {
            -1.0
        }
    }

    /// Whether a state satisfies the free-space / arena invariants.
    pub fn is_valid_state(&self, s: &EnvState) -> bool {
        match (&self.arena, s) {
            (Arena::Maze(l), EnvState::Point { pos }) => !l.is_wall_at(pos[0], pos[1]),
            (Arena::Open { size }, EnvState::Push { agent, box_pos }) => {
                let inside = |p: &[f64; 2]| p.iter().all(|&v| (0.0..=*size).contains(&v));
                inside(agent) && inside(box_pos) && dist(*agent, *box_pos) >= PUSH_RADIUS - 1e-9
            }
            _ => false,
        }
    }

    /// Uniformly random point in a uniformly random free cell (mazes), or
    /// a non-overlapping agent/box pair (push arena). Deterministic per seed.
    pub fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset_with(&mut rng)
    }

    pub fn reset_with<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        match &self.arena {
            Arena::Maze(l) => EnvState::Point { pos: random_point_in_free_cell(l, rng) },
            Arena::Open { size } => {
                let box_pos = [rng.gen_range(0.75..size - 0.75), rng.gen_range(0.75..size - 0.75)];
                loop {
                    let agent = [rng.gen_range(0.0..*size), rng.gen_range(0.0..*size)];
                    if dist(agent, box_pos) >= PUSH_RADIUS {
                        return EnvState::Push { agent, box_pos };
                    }
                }
            }
        }
    }

    /// Uniformly random goal from the goal space.
    pub fn random_goal<R: Rng + ?Sized>(&self, rng: &mut R) -> Goal {
        match &self.arena {
            Arena::Maze(l) => Goal(random_point_in_free_cell(l, rng)),
            Arena::Open { size } => Goal([rng.gen_range(0.5..size - 0.5), rng.gen_range(0.5..size - 0.5)]),
        }
    }

    /// Deterministic transition. Action components are clipped to `[-1, 1]`.
    pub fn step(&self, s: &EnvState, a: Action) -> EnvState {
        let a = clip_action(a);
        let d = [self.action_scale * a[0], self.action_scale * a[1]];
        match (&self.arena, *s) {
            (Arena::Maze(l), EnvState::Point { pos }) => EnvState::Point { pos: maze_move(l, pos, d) },
            (Arena::Open { size }, EnvState::Push { agent, box_pos }) => {
                let (agent, box_pos) = push_move(*size, agent, box_pos, d);
                EnvState::Push { agent, box_pos }
            }
            _ => panic!("state does not belong to environment {}", self.id),
        }
    }

    /// One of five fixed `(start, goal)` pairs, ordered by path length.
    pub fn sample_eval_task(&self, index: usize) -> Result<(EnvState, Goal)> {
        if index >= NUM_EVAL_TASKS {
            return Err(Error::param(format!("task index {index} out of range 0..{NUM_EVAL_TASKS}")));
        }
        let c = |x: usize, y: usize| MazeLayout::center((x, y));
        let task = match self.id {
            EnvId::PointMazeMedium => {
                const T: [((usize, usize), (usize, usize)); 5] =
                    [((1, 1), (3, 3)), ((2, 1), (2, 5)), ((5, 1), (1, 5)), ((1, 1), (5, 5)), ((5, 1), (1, 3))];
                let ((sx, sy), (gx, gy)) = T[index];
                (EnvState::Point { pos: c(sx, sy) }, Goal(c(gx, gy)))
            }
            EnvId::PointMazeLarge => {
                const T: [((usize, usize), (usize, usize)); 5] =
                    [((1, 1), (7, 1)), ((1, 1), (2, 9)), ((1, 1), (9, 5)), ((9, 1), (1, 9)), ((1, 1), (9, 9))];
                let ((sx, sy), (gx, gy)) = T[index];
                (EnvState::Point { pos: c(sx, sy) }, Goal(c(gx, gy)))
            }
            EnvId::PushBox => {
                const T: [([f64; 2], [f64; 2], [f64; 2]); 5] = [
                    ([1.0, 2.5], [2.0, 2.5], [3.0, 2.5]),
                    ([1.0, 1.0], [2.0, 2.0], [3.5, 2.0]),
                    ([4.0, 1.0], [2.5, 2.5], [1.0, 3.5]),
                    ([2.5, 4.0], [3.5, 3.5], [1.0, 1.0]),
                    ([4.5, 0.5], [1.0, 4.0], [4.0, 1.0]),
                ];
                let (agent, box_pos, goal) = T[index];
                (EnvState::Push { agent, box_pos }, Goal(goal))
            }
        };
        Ok(task)
    }
}

fn random_point_in_free_cell<R: Rng + ?Sized>(l: &MazeLayout, rng: &mut R) -> [f64; 2] {
    let free = l.free_cells();
    let (cx, cy) = free[rng.gen_range(0..free.len())];
    [
        cx as f64 + rng.gen_range(WALL_MARGIN..1.0 - WALL_MARGIN),
        cy as f64 + rng.gen_range(WALL_MARGIN..1.0 - WALL_MARGIN),
    ]
}

/// Axis-separable move: x first, then y. A blocked axis stops `WALL_MARGIN`
/// short of the wall face.
fn maze_move(l: &MazeLayout, pos: [f64; 2], d: [f64; 2]) -> [f64; 2] {
    let mut p = pos;
    for axis in 0..2 {
        if d[axis] == 0.0 {
            continue;
        }
        let mut cand = p;
        cand[axis] += d[axis];
        if l.is_wall_at(cand[0], cand[1]) {
            let face = if d[axis] > 0.0 {
                cand[axis].floor() - WALL_MARGIN
            } else {
                cand[axis].floor() + 1.0 + WALL_MARGIN
            };
            // never move backwards when already hugging the face
            cand[axis] = if d[axis] > 0.0 { face.max(p[axis]) } else { face.min(p[axis]) };
        }
        p = cand;
    }
    p
}

fn push_move(size: f64, agent: [f64; 2], box_pos: [f64; 2], d: [f64; 2]) -> ([f64; 2], [f64; 2]) {
    let clamp = |p: [f64; 2]| [p[0].clamp(0.0, size), p[1].clamp(0.0, size)];
    let mut agent = clamp([agent[0] + d[0], agent[1] + d[1]]);
    let mut box_pos = box_pos;
    let sep = dist(agent, box_pos);
    if sep < PUSH_RADIUS {
        let u = direction(agent, box_pos, d);
        box_pos = clamp([agent[0] + PUSH_RADIUS * u[0], agent[1] + PUSH_RADIUS * u[1]]);
        // a box pinned against the boundary pushes the agent back instead
        if dist(agent, box_pos) < PUSH_RADIUS {
            let v = direction(box_pos, agent, [-d[0], -d[1]]);
            agent = clamp([box_pos[0] + PUSH_RADIUS * v[0], box_pos[1] + PUSH_RADIUS * v[1]]);
        }
    }
    (agent, box_pos)
}

/// Unit vector from `from` to `to`, falling back to the motion direction
/// (then +x) when the points coincide.
fn direction(from: [f64; 2], to: [f64; 2], motion: [f64; 2]) -> [f64; 2] {
    for v in [[to[0] - from[0], to[1] - from[1]], motion, [1.0, 0.0]] {
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n];
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maze() -> EnvSpec {
        EnvSpec::new(EnvId::PointMazeMedium)
    }

    #[test]
    fn reset_is_deterministic_and_valid() {
        for id in EnvId::ALL {
            let spec = EnvSpec::new(id);
            assert_eq!(spec.reset(7), spec.reset(7));
            for seed in 0..1000 {
                assert!(spec.is_valid_state(&spec.reset(seed)), "{id} seed {seed}");
            }
        }
    }

    #[test]
    fn different_seeds_give_different_states() {
        let spec = maze();
        let differ = (0..100u64).filter(|&k| spec.reset(2 * k) != spec.reset(2 * k + 1)).count();
        assert!(differ >= 99);
    }

    #[test]
    fn free_step_moves_by_action_scale() {
        let spec = maze();
        let s = EnvState::Point { pos: [1.5, 1.5] };
        assert_eq!(spec.step(&s, [1.0, 0.0]), EnvState::Point { pos: [1.75, 1.5] });
        assert_eq!(spec.step(&s, [0.0, 0.0]), s);
        // clipping
        assert_eq!(spec.step(&s, [7.0, 0.0]), EnvState::Point { pos: [1.75, 1.5] });
    }

    #[test]
    fn blocked_step_stops_short_of_the_wall() {
        let spec = maze();
        // cell (0,1) is border wall; moving -x from x=1.1
        let s = EnvState::Point { pos: [1.1, 1.5] };
        let EnvState::Point { pos } = spec.step(&s, [-1.0, 0.0]) else { unreachable!() };
        assert!((pos[0] - (1.0 + WALL_MARGIN)).abs() < 1e-12);
        // (4,1) is interior wall; moving +x from x=3.9
        let s = EnvState::Point { pos: [3.9, 1.5] };
        let EnvState::Point { pos } = spec.step(&s, [1.0, 0.0]) else { unreachable!() };
        assert!((pos[0] - (4.0 - WALL_MARGIN)).abs() < 1e-12);
    }

    #[test]
    fn push_displaces_box_to_exact_separation() {
        let spec = EnvSpec::new(EnvId::PushBox);
        let s = EnvState::Push { agent: [2.0, 2.0], box_pos: [2.5, 2.0] };
        let EnvState::Push { agent, box_pos } = spec.step(&s, [0.8, 0.0]) else { unreachable!() };
        assert!((agent[0] - 2.2).abs() < 1e-12);
        assert!((box_pos[0] - 2.8).abs() < 1e-12 && box_pos[1] == 2.0);
        assert!((dist(agent, box_pos) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn pinned_box_keeps_separation() {
        let spec = EnvSpec::new(EnvId::PushBox);
        let s = EnvState::Push { agent: [4.3, 2.0], box_pos: [4.95, 2.0] };
        let n = spec.step(&s, [1.0, 0.0]);
        assert!(spec.is_valid_state(&n), "{n:?}");
    }

    #[test]
    fn success_and_reward_boundaries() {
        let spec = maze();
        let at = |x, y| EnvState::Point { pos: [x, y] };
        assert!(spec.is_success(&at(1.2, 1.0), &Goal([1.5, 1.0])));
        assert!(!spec.is_success(&at(0.0, 0.0), &Goal([3.0, 4.0])));
        assert!(spec.is_success(&at(1.0, 1.0), &Goal([1.5, 1.0])));
        assert_eq!(spec.reward(&at(1.0, 1.0), &Goal([1.5, 1.0])), 0.0);
        assert_eq!(spec.reward(&at(1.5, 1.5), &Goal([5.5, 5.5])), -1.0);
        let pb = EnvSpec::new(EnvId::PushBox);
        let s = EnvState::Push { agent: [0.0, 0.0], box_pos: [2.0, 2.0] };
        assert!(pb.is_success(&s, &Goal([2.4, 2.0])));
        assert!(!pb.is_success(&s, &Goal([2.41, 2.0])));
    }

    #[test]
    fn eval_tasks_are_fixed_and_unsolved() {
        for id in EnvId::ALL {
            let spec = EnvSpec::new(id);
            for i in 0..NUM_EVAL_TASKS {
                let (s, g) = spec.sample_eval_task(i).unwrap();
                assert_eq!((s, g), spec.sample_eval_task(i).unwrap());
                assert!(!spec.is_success(&s, &g));
                assert!(spec.is_valid_state(&s));
            }
            assert!(spec.sample_eval_task(5).is_err());
        }
    }

    #[test]
    fn maze_tasks_ordered_by_path_length() {
        for id in [EnvId::PointMazeMedium, EnvId::PointMazeLarge] {
            let spec = EnvSpec::new(id);
            let l = spec.layout().unwrap();
            let d: Vec<usize> = (0..NUM_EVAL_TASKS)
                .map(|i| {
                    let (s, g) = spec.sample_eval_task(i).unwrap();
                    let a = s.agent();
                    l.distance(MazeLayout::cell_of(a[0], a[1]), MazeLayout::cell_of(g.0[0], g.0[1])).unwrap()
                })
                .collect();
            assert!(d.windows(2).all(|w| w[0] <= w[1]), "{id}: {d:?}");
        }
    }

    #[test]
    fn large_task_four_spans_opposite_corners() {
        let spec = EnvSpec::new(EnvId::PointMazeLarge);
        let (s, g) = spec.sample_eval_task(4).unwrap();
        let l = spec.layout().unwrap();
        let a = s.agent();
        let d = l.distance(MazeLayout::cell_of(a[0], a[1]), MazeLayout::cell_of(g.0[0], g.0[1])).unwrap();
        assert!(d >= 15);
        assert_eq!(MazeLayout::cell_of(a[0], a[1]), (1, 1));
        assert_eq!(MazeLayout::cell_of(g.0[0], g.0[1]), (9, 9));
    }

    #[test]
    fn goal_features_pad_push_goals() {
        let pb = EnvSpec::new(EnvId::PushBox);
        let f = pb.goal_features(&Goal([2.5, 5.0]));
        assert_eq!(f, vec![0.0, 0.0, 0.0, 1.0, 1.0]);
        let s = EnvState::Push { agent: [0.0, 0.0], box_pos: [2.5, 5.0] };
        assert_eq!(pb.state_features(&s), vec![-1.0, -1.0, 0.0, 1.0, 0.0]);
    }
}
