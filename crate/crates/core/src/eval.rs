//! Deterministic-policy evaluation over every task of a benchmark.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{scripted_action, BenchmarkSet, EnvState, ACTION_DIM};
use crate::error::Result;
use crate::nn::Matrix;
use crate::sac::SacState;

/// Maps a batch of observations to actions in `[-1, 1]^2`.
pub trait Policy {
    fn actions(&self, obs: &Matrix) -> Result<Matrix>;
}

/// Squashed mean of the actor.
impl Policy for SacState {
    fn actions(&self, obs: &Matrix) -> Result<Matrix> {
        let head = self.actor.predict(obs)?;
        let mut out = Matrix::zeros(obs.rows(), self.action_dim());
        for r in 0..obs.rows() {
            for i in 0..self.action_dim() {
                out.set(r, i, head.get(r, i).tanh());
            }
        }
        Ok(out)
    }
}

pub struct ScriptedPolicy;

impl Policy for ScriptedPolicy {
    fn actions(&self, obs: &Matrix) -> Result<Matrix> {
        let rows: Vec<[f64; 2]> = (0..obs.rows())
            .map(|r| scripted_action(obs.row(r)))
            .collect();
        Matrix::from_rows(&rows)
    }
}

pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn actions(&self, obs: &Matrix) -> Result<Matrix> {
        Ok(Matrix::zeros(obs.rows(), ACTION_DIM))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub checkpoint_step: u64,
    /// `[task][episode]` sticky success flags.
    pub success: Vec<Vec<bool>>,
    pub per_task_rate: Vec<f64>,
    pub mean_rate: f64,
}

/// Runs `episodes_per_task` full-horizon episodes for every task in
/// lockstep, one batched policy call per step. Each episode's reset draws
/// from its own stream seeded from `rng`.
pub fn evaluate<P: Policy + ?Sized, R: Rng + ?Sized>(
    policy: &P,
    bench: &BenchmarkSet,
    episodes_per_task: usize,
    checkpoint_step: u64,
    rng: &mut R,
) -> Result<EvalReport> {
    let n = bench.n_tasks;
    let mut states: Vec<EnvState> = Vec::with_capacity(n * episodes_per_task);
    let mut obs = Matrix::zeros(n * episodes_per_task, bench.obs_dim);
    for t in 0..n {
        for _ in 0..episodes_per_task {
            let mut ep_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let (s, o) = bench.reset(t, &mut ep_rng)?;
            obs.row_mut(states.len()).copy_from_slice(&o);
            states.push(s);
        }
    }
    let mut success = vec![false; states.len()];
    let horizon = bench.tasks.iter().map(|t| t.horizon).max().unwrap_or(0);
    let mut alive = vec![true; states.len()];
    for _ in 0..horizon {
        if states.is_empty() {
            break;
        }
        let act = policy.actions(&obs)?;
        for (i, state) in states.iter_mut().enumerate() {
            if !alive[i] {
                continue;
            }
            let (next, res) = bench.step(state, [act.get(i, 0), act.get(i, 1)])?;
            success[i] |= res.success;
            alive[i] = !(res.terminated || res.truncated);
            obs.row_mut(i).copy_from_slice(&res.observation);
            *state = next;
        }
    }
    let grid: Vec<Vec<bool>> = success
        .chunks(episodes_per_task.max(1))
        .take(n)
        .map(|c| c.to_vec())
        .collect();
    let grid = if episodes_per_task == 0 {
        vec![Vec::new(); n]
    } else {
        grid
    };
    let per_task_rate: Vec<f64> = grid
        .iter()
        .map(|row| {
            if row.is_empty() {
                0.0
            } else {
                row.iter().filter(|s| **s).count() as f64 / row.len() as f64
            }
        })
        .collect();
    let mean_rate = per_task_rate.iter().sum::<f64>() / n as f64;
    Ok(EvalReport {
        checkpoint_step,
        success: grid,
        per_task_rate,
        mean_rate,
    })
}
