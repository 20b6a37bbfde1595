//! Point-mass task suite.
//!
//! A 2-D point mass in the workspace `[-1, 1]²` driven by acceleration
//! commands. Five task families share the dynamics and differ in goal
//! behaviour, hazards and success predicate. Observations are
//! `[pos, vel, goal, aux] ++ one_hot(task_id)`.
//!
//! Reward per step is `1 - tanh(5·d)` where `d` is the distance to the
//! current target, minus `AVOID_PENALTY` inside an avoid zone, plus
//! `SUCCESS_BONUS` on the first step the success predicate holds. Every
//! reward therefore lies in `[REWARD_MIN, REWARD_MAX]`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Error, Result};

pub const CORE_OBS_DIM: usize = 8;
pub const ACTION_DIM: usize = 2;
pub const DT: f64 = 0.05;
pub const DAMPING: f64 = 0.95;
pub const V_MAX: f64 = 1.0;
pub const HORIZON: usize = 200;
pub const SUCCESS_EPS: f64 = 0.05;
pub const START_HALF_WIDTH: f64 = 0.1;
pub const AVOID_RADIUS: f64 = 0.2;
pub const AVOID_PENALTY: f64 = 0.5;
pub const SLOW_RADIUS: f64 = 0.25;
pub const SLOW_FACTOR: f64 = 0.5;
pub const GOAL_SPEED: f64 = 0.2;
pub const GOAL_BOUND: f64 = 0.95;
pub const SUCCESS_BONUS: f64 = 1.0;
pub const REWARD_MIN: f64 = -AVOID_PENALTY;
pub const REWARD_MAX: f64 = 1.0 + SUCCESS_BONUS;
pub const MAX_TASKS: usize = 50;
pub const MAX_VARIATIONS: usize = 50;

const GOAL_MIN_RADIUS: f64 = 0.3;
const GOAL_MAX_RADIUS: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Reach,
    ReachThenReturn,
    AvoidReach,
    MovingGoal,
    SlowZoneReach,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Reach,
        Family::ReachThenReturn,
        Family::AvoidReach,
        Family::MovingGoal,
        Family::SlowZoneReach,
    ];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Reach => "Reach",
            Family::ReachThenReturn => "ReachThenReturn",
            Family::AvoidReach => "AvoidReach",
            Family::MovingGoal => "MovingGoal",
            Family::SlowZoneReach => "SlowZoneReach",
        };
        f.write_str(s)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown task family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: usize,
    pub family: Family,
    /// Goal positions, one per variation.
    pub variation_params: Vec<[f64; 2]>,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSet {
    pub tasks: Vec<TaskSpec>,
    pub n_tasks: usize,
    pub obs_dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub task_id: usize,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub goal: [f64; 2],
    /// Obstacle centre, return point, goal velocity or slow-zone centre.
    pub aux: [f64; 2],
    pub step_index: usize,
    pub variation_index: usize,
    pub start: [f64; 2],
    /// ReachThenReturn: the outbound goal has been reached.
    pub returning: bool,
    pub succeeded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub success: bool,
}

#[inline]
pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn task_rng(seed: u64, task_id: usize) -> ChaCha8Rng {
    // Per-task stream: the first k tasks never depend on how many follow.
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((task_id as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    ChaCha8Rng::seed_from_u64(mixed)
}

fn sample_goal<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    loop {
        let g = [
            rng.random_range(-GOAL_MAX_RADIUS..=GOAL_MAX_RADIUS),
            rng.random_range(-GOAL_MAX_RADIUS..=GOAL_MAX_RADIUS),
        ];
        let r = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if (GOAL_MIN_RADIUS..=GOAL_MAX_RADIUS).contains(&r) {
            return g;
        }
    }
}

/// Generates an MT-n benchmark. Families cycle round-robin and each task's
/// variations come from its own seeded stream, so `make_benchmark(k, ..)`
/// is a prefix of `make_benchmark(n, ..)` for `k ≤ n`.
pub fn make_benchmark(
    n_tasks: usize,
    variations_per_task: usize,
    seed: u64,
) -> Result<BenchmarkSet> {
    if !(1..=MAX_TASKS).contains(&n_tasks) {
        return config_err(format!("n_tasks must be in 1..={MAX_TASKS}, got {n_tasks}"));
    }
    if !(1..=MAX_VARIATIONS).contains(&variations_per_task) {
        return config_err(format!(
            "variations_per_task must be in 1..={MAX_VARIATIONS}, got {variations_per_task}"
        ));
    }
    let tasks = (0..n_tasks)
        .map(|task_id| {
            let mut rng = task_rng(seed, task_id);
            TaskSpec {
                task_id,
                family: Family::ALL[task_id % Family::ALL.len()],
                variation_params: (0..variations_per_task)
                    .map(|_| sample_goal(&mut rng))
                    .collect(),
                horizon: HORIZON,
            }
        })
        .collect();
    Ok(BenchmarkSet {
        tasks,
        n_tasks,
        obs_dim: CORE_OBS_DIM + n_tasks,
        seed,
    })
}

fn clamp2(v: [f64; 2], lo: f64, hi: f64) -> [f64; 2] {
    [v[0].clamp(lo, hi), v[1].clamp(lo, hi)]
}

impl BenchmarkSet {
    pub fn task(&self, task_id: usize) -> Result<&TaskSpec> {
        self.tasks
            .get(task_id)
            .ok_or_else(|| Error::Contract(format!("task {task_id} out of range")))
    }

    pub fn observe(&self, s: &EnvState) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.obs_dim);
        obs.extend_from_slice(&s.position);
        obs.extend_from_slice(&s.velocity);
        obs.extend_from_slice(&s.goal);
        obs.extend_from_slice(&s.aux);
        obs.resize(self.obs_dim, 0.0);
        obs[CORE_OBS_DIM + s.task_id] = 1.0;
        obs
    }

    pub fn reset<R: Rng + ?Sized>(
        &self,
        task_id: usize,
        rng: &mut R,
    ) -> Result<(EnvState, Vec<f64>)> {
        let spec = self.task(task_id)?;
        let position = [
            rng.random_range(-START_HALF_WIDTH..=START_HALF_WIDTH),
            rng.random_range(-START_HALF_WIDTH..=START_HALF_WIDTH),
        ];
        let variation_index = rng.random_range(0..spec.variation_params.len());
        let goal = spec.variation_params[variation_index];
        let aux = match spec.family {
            Family::Reach => [0.0, 0.0],
            Family::ReachThenReturn => position,
            Family::AvoidReach | Family::SlowZoneReach => [0.5 * goal[0], 0.5 * goal[1]],
            Family::MovingGoal => {
                let r = (goal[0] * goal[0] + goal[1] * goal[1]).sqrt();
                [-GOAL_SPEED * goal[1] / r, GOAL_SPEED * goal[0] / r]
            }
        };
        let state = EnvState {
            task_id,
            position,
            velocity: [0.0, 0.0],
            goal,
            aux,
            step_index: 0,
            variation_index,
            start: position,
            returning: false,
            succeeded: false,
        };
        let obs = self.observe(&state);
        Ok((state, obs))
    }

    pub fn step(&self, state: &EnvState, action: [f64; 2]) -> Result<(EnvState, StepResult)> {
        if !action.iter().all(|a| a.is_finite()) {
            return Err(Error::Numeric(format!("non-finite action {action:?}")));
        }
        let spec = self.task(state.task_id)?;
        let a = clamp2(action, -1.0, 1.0);
        let mut s = state.clone();

        let gain = if spec.family == Family::SlowZoneReach && dist(s.position, s.aux) < SLOW_RADIUS
        {
            SLOW_FACTOR
        } else {
            1.0
        };
        for d in 0..2 {
            s.velocity[d] = (DAMPING * s.velocity[d] + DT * gain * a[d]).clamp(-V_MAX, V_MAX);
            s.position[d] = (s.position[d] + DT * s.velocity[d]).clamp(-1.0, 1.0);
        }
        s.step_index += 1;

        if spec.family == Family::MovingGoal {
            for d in 0..2 {
                s.goal[d] += DT * s.aux[d];
                if s.goal[d].abs() > GOAL_BOUND {
                    s.goal[d] = s.goal[d].clamp(-GOAL_BOUND, GOAL_BOUND);
                    s.aux[d] = -s.aux[d];
                }
            }
        }

        let d = dist(s.position, s.goal);
        let mut reward = 1.0 - (5.0 * d).tanh();
        if spec.family == Family::AvoidReach && dist(s.position, s.aux) < AVOID_RADIUS {
            reward -= AVOID_PENALTY;
        }

        let success = match spec.family {
            Family::ReachThenReturn => {
                if !s.returning && d <= SUCCESS_EPS {
                    s.returning = true;
                    s.goal = s.start;
                }
                s.returning && dist(s.position, s.start) <= SUCCESS_EPS
            }
            _ => d <= SUCCESS_EPS,
        };
        if success && !s.succeeded {
            reward += SUCCESS_BONUS;
            s.succeeded = true;
        }

        let truncated = s.step_index >= spec.horizon;
        let observation = self.observe(&s);
        Ok((
            s,
            StepResult {
                observation,
                reward,
                terminated: false,
                truncated,
                success,
            },
        ))
    }

    /// One record per task, `key=value` fields separated by spaces.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# benchmark n_tasks={} seed={} obs_dim={}\n",
            self.n_tasks, self.seed, self.obs_dim
        ));
        for t in &self.tasks {
            let vars: Vec<String> = t
                .variation_params
                .iter()
                .map(|g| format!("{},{}", g[0], g[1]))
                .collect();
            out.push_str(&format!(
                "task_id={} family={} horizon={} variations={}\n",
                t.task_id,
                t.family,
                t.horizon,
                vars.join(";")
            ));
        }
        out
    }

    /// Parses the task records written by [`BenchmarkSet::manifest`].
    pub fn parse_manifest_tasks(text: &str) -> Result<Vec<TaskSpec>> {
        let bad = |l: &str| Error::Format(format!("bad manifest line `{l}`"));
        let mut tasks = Vec::new();
        for line in text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        {
            let mut task_id = None;
            let mut family = None;
            let mut horizon = None;
            let mut vars = None;
            for field in line.split_whitespace() {
                let (k, v) = field.split_once('=').ok_or_else(|| bad(line))?;
                match k {
                    "task_id" => task_id = Some(v.parse::<usize>().map_err(|_| bad(line))?),
                    "family" => family = Some(v.parse::<Family>()?),
                    "horizon" => horizon = Some(v.parse::<usize>().map_err(|_| bad(line))?),
                    "variations" => {
                        let mut vs = Vec::new();
                        for pair in v.split(';') {
                            let (x, y) = pair.split_once(',').ok_or_else(|| bad(line))?;
                            vs.push([
                                x.parse::<f64>().map_err(|_| bad(line))?,
                                y.parse::<f64>().map_err(|_| bad(line))?,
                            ]);
                        }
                        vars = Some(vs);
                    }
                    _ => return Err(bad(line)),
                }
            }
            tasks.push(TaskSpec {
                task_id: task_id.ok_or_else(|| bad(line))?,
                family: family.ok_or_else(|| bad(line))?,
                variation_params: vars.ok_or_else(|| bad(line))?,
                horizon: horizon.ok_or_else(|| bad(line))?,
            });
        }
        Ok(tasks)
    }
}

/// Sticky success: true iff any step satisfied the predicate.
pub fn episode_success(trajectory: &[StepResult]) -> Result<bool> {
    if trajectory.is_empty() {
        return Err(Error::Contract(
            "episode_success on an empty trajectory".into(),
        ));
    }
    Ok(trajectory.iter().any(|s| s.success))
}

/// Proportional-derivative controller toward the observed goal.
pub fn scripted_action(observation: &[f64]) -> [f64; 2] {
    let (kp, kd) = (8.0, 2.5);
    let mut a = [0.0; 2];
    for d in 0..2 {
        let err = observation[4 + d] - observation[d];
        a[d] = (kp * err - kd * observation[2 + d]).clamp(-1.0, 1.0);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_is_deterministic_and_prefix_nested() {
        let a = make_benchmark(10, 10, 7).unwrap();
        let b = make_benchmark(10, 10, 7).unwrap();
        assert_eq!(a, b);
        let big = make_benchmark(25, 10, 7).unwrap();
        assert_eq!(&big.tasks[..10], &a.tasks[..]);
        assert_ne!(make_benchmark(10, 10, 8).unwrap().tasks, a.tasks);
    }

    #[test]
    fn fifty_task_counts() {
        let b = make_benchmark(50, 50, 7).unwrap();
        assert_eq!(b.obs_dim, 58);
        for f in Family::ALL {
            assert_eq!(b.tasks.iter().filter(|t| t.family == f).count(), 10);
        }
        for t in &b.tasks {
            assert_eq!(t.variation_params.len(), 50);
            assert!(t
                .variation_params
                .iter()
                .all(|g| g[0].abs() <= 1.0 && g[1].abs() <= 1.0));
        }
    }

    #[test]
    fn out_of_range_counts_are_rejected() {
        assert!(make_benchmark(0, 1, 0).is_err());
        assert!(make_benchmark(51, 1, 0).is_err());
        assert!(make_benchmark(1, 0, 0).is_err());
        assert!(make_benchmark(1, 51, 0).is_err());
    }

    #[test]
    fn reset_layout_and_determinism() {
        let b = make_benchmark(4, 5, 1).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let (s1, o1) = b.reset(2, &mut r1).unwrap();
        let (s2, o2) = b.reset(2, &mut r2).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(o1, o2);
        assert_eq!(o1.len(), 12);
        let tail = &o1[CORE_OBS_DIM..];
        assert_eq!(tail.iter().sum::<f64>(), 1.0);
        assert_eq!(tail[2], 1.0);
        assert_eq!(s1.velocity, [0.0, 0.0]);
        assert!(s1.position.iter().all(|p| p.abs() <= START_HALF_WIDTH));
    }

    #[test]
    fn every_variation_is_reachable_by_reset() {
        let b = make_benchmark(1, 50, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = vec![0usize; 50];
        for _ in 0..10_000 {
            let (s, _) = b.reset(0, &mut rng).unwrap();
            seen[s.variation_index] += 1;
        }
        assert!(seen.iter().all(|&c| c > 0));
    }

    #[test]
    fn resting_mass_stays_put() {
        let b = make_benchmark(1, 1, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (s, _) = b.reset(0, &mut rng).unwrap();
        let (next, _) = b.step(&s, [0.0, 0.0]).unwrap();
        assert_eq!(next.position, s.position);
    }

    #[test]
    fn at_goal_reach_pays_max_plus_bonus() {
        let b = make_benchmark(1, 1, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut s, _) = b.reset(0, &mut rng).unwrap();
        s.position = s.goal;
        let (next, r) = b.step(&s, [0.0, 0.0]).unwrap();
        assert!(r.success);
        assert_eq!(r.reward, 1.0 + SUCCESS_BONUS);
        // Bonus is paid only once.
        let (_, r2) = b.step(&next, [0.0, 0.0]).unwrap();
        assert!(r2.success);
        assert_eq!(r2.reward, 1.0);
    }

    #[test]
    fn non_finite_action_is_a_numeric_error() {
        let b = make_benchmark(1, 1, 0).unwrap();
        let (s, _) = b.reset(0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(
            b.step(&s, [f64::NAN, 0.0]),
            Err(Error::Numeric(_))
        ));
    }

    /// Reward recomputed from the state pair along a separate code path.
    fn oracle_reward(family: Family, prev: &EnvState, next: &EnvState) -> f64 {
        let target = if family == Family::ReachThenReturn && !prev.returning {
            prev.goal
        } else {
            next.goal
        };
        let dx = next.position[0] - target[0];
        let dy = next.position[1] - target[1];
        let mut r = 1.0 - (5.0 * dx.hypot(dy)).tanh();
        if family == Family::AvoidReach {
            let ox = next.position[0] - next.aux[0];
            let oy = next.position[1] - next.aux[1];
            if ox.hypot(oy) < AVOID_RADIUS {
                r -= 0.5;
            }
        }
        if next.succeeded && !prev.succeeded {
            r += 1.0;
        }
        r
    }

    #[test]
    fn rewards_match_formula_oracle_and_stay_bounded() {
        let b = make_benchmark(5, 10, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for task in 0..5 {
            let (mut s, _) = b.reset(task, &mut rng).unwrap();
            for t in 0..HORIZON {
                // Mix of random and goal-seeking actions so successes occur.
                let a = if t % 3 == 0 {
                    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
                } else {
                    scripted_action(&b.observe(&s))
                };
                let (next, r) = b.step(&s, a).unwrap();
                let want = oracle_reward(b.tasks[task].family, &s, &next);
                assert!((r.reward - want).abs() < 1e-12, "task {task} step {t}");
                assert!((REWARD_MIN..=REWARD_MAX).contains(&r.reward));
                assert!(next.velocity.iter().all(|v| v.abs() <= V_MAX));
                assert!(next.position.iter().all(|p| p.abs() <= 1.0));
                assert_eq!(r.truncated, t + 1 == HORIZON);
                s = next;
            }
        }
    }

    #[test]
    fn success_is_sticky() {
        let mk = |success| StepResult {
            observation: vec![],
            reward: 0.0,
            terminated: false,
            truncated: false,
            success,
        };
        let traj = vec![mk(false), mk(false), mk(false), mk(true), mk(false)];
        assert!(episode_success(&traj).unwrap());
        assert!(!episode_success(&[mk(false), mk(false)]).unwrap());
        assert!(episode_success(&[]).is_err());
    }

    #[test]
    fn scripted_controller_solves_reach_variations() {
        let b = make_benchmark(1, 50, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut wins = 0;
        for v in 0..50 {
            let (mut s, mut obs) = b.reset(0, &mut rng).unwrap();
            s.variation_index = v;
            s.goal = b.tasks[0].variation_params[v];
            obs = if obs.is_empty() { obs } else { b.observe(&s) };
            let mut traj = Vec::new();
            for _ in 0..HORIZON {
                let (n, r) = b.step(&s, scripted_action(&obs)).unwrap();
                obs = r.observation.clone();
                traj.push(r);
                s = n;
            }
            if episode_success(&traj).unwrap() {
                wins += 1;
            }
        }
        assert!(wins as f64 >= 0.95 * 50.0, "{wins}/50");
    }

    #[test]
    fn manifest_round_trips() {
        let b = make_benchmark(7, 3, 11).unwrap();
        let tasks = BenchmarkSet::parse_manifest_tasks(&b.manifest()).unwrap();
        assert_eq!(tasks, b.tasks);
    }
}
