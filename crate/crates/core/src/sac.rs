//! Soft actor-critic with twin critics, target networks, a tanh-squashed
//! Gaussian actor and one entropy temperature per task.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::arch::{self, ArchConfig, Role, TaskConditionedNet};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Grads, Matrix, Parameters, ScalarAdam};
use crate::replay::{Batch, ReplayStore};

/// Emitted actions are kept this far inside the unit box.
pub const ACTION_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub gamma: f64,
    pub polyak_rho: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub target_entropy: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub batch_size: usize,
    pub updates_per_env_step: f64,
    pub init_log_alpha: f64,
}

impl SacConfig {
    pub fn for_action_dim(action_dim: usize) -> Self {
        Self {
            gamma: 0.99,
            polyak_rho: 0.005,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 3e-4,
            target_entropy: -(action_dim as f64),
            log_std_min: -20.0,
            log_std_max: 2.0,
            batch_size: 128,
            updates_per_env_step: 1.0,
            init_log_alpha: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("sac.gamma must lie in [0, 1)");
        }
        if !(self.polyak_rho > 0.0 && self.polyak_rho <= 1.0) {
            return bad("sac.polyak_rho must lie in (0, 1]");
        }
        if self.log_std_min >= self.log_std_max {
            return bad("sac.log_std_min must be below sac.log_std_max");
        }
        if [self.lr_actor, self.lr_critic, self.lr_alpha]
            .iter()
            .any(|lr| !(lr.is_finite() && *lr > 0.0))
        {
            return bad("learning rates must be positive and finite");
        }
        if self.batch_size == 0 {
            return bad("sac.batch_size must be ≥ 1");
        }
        if !(self.updates_per_env_step.is_finite() && self.updates_per_env_step >= 0.0) {
            return bad("sac.updates_per_env_step must be ≥ 0");
        }
        if !self.target_entropy.is_finite() || !self.init_log_alpha.is_finite() {
            return bad("sac.target_entropy and sac.init_log_alpha must be finite");
        }
        Ok(())
    }
}

impl Default for SacConfig {
    fn default() -> Self {
        Self::for_action_dim(crate::env::ACTION_DIM)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    /// Pre-squash sample `u = μ + σ·ξ` (equal to `μ` in deterministic mode).
    pub pre_tanh: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
}

/// `log(1 − tanh²(u))` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u.abs();
    2.0 * (std::f64::consts::LN_2 - u.abs() - x.exp().ln_1p())
}

fn squash(u: f64) -> f64 {
    u.tanh().clamp(-1.0 + ACTION_EPS, 1.0 - ACTION_EPS)
}

/// Turns one actor head row `[μ | raw log σ]` into a policy sample with
/// the given standard-normal noise.
pub fn policy_from_noise(
    head: &[f64],
    noise: &[f64],
    log_std_min: f64,
    log_std_max: f64,
) -> Result<PolicyOutput> {
    let a = head.len() / 2;
    if head.len() != 2 * a || noise.len() != a {
        return Err(Error::Shape(format!(
            "head of length {} does not pair with {} noise values",
            head.len(),
            noise.len()
        )));
    }
    if head.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite actor output {head:?}")));
    }
    let mean = head[..a].to_vec();
    let log_std: Vec<f64> = head[a..]
        .iter()
        .map(|s| s.clamp(log_std_min, log_std_max))
        .collect();
    let mut pre_tanh = Vec::with_capacity(a);
    let mut action = Vec::with_capacity(a);
    let mut log_prob = 0.0;
    for i in 0..a {
        let u = mean[i] + log_std[i].exp() * noise[i];
        log_prob +=
            -0.5 * noise[i] * noise[i] - log_std[i] - HALF_LN_2PI - log_one_minus_tanh_sq(u);
        pre_tanh.push(u);
        action.push(squash(u));
    }
    Ok(PolicyOutput {
        mean,
        log_std,
        pre_tanh,
        action,
        log_prob,
    })
}

/// Samples from the squashed Gaussian, or returns `tanh(μ)` when
/// `deterministic` (its `log_prob` is then the density at `ξ = 0`).
pub fn sample_action<R: Rng + ?Sized>(
    head: &[f64],
    log_std_min: f64,
    log_std_max: f64,
    deterministic: bool,
    rng: &mut R,
) -> Result<PolicyOutput> {
    let a = head.len() / 2;
    let noise: Vec<f64> = if deterministic {
        vec![0.0; a]
    } else {
        (0..a).map(|_| rng.sample(StandardNormal)).collect()
    };
    policy_from_noise(head, &noise, log_std_min, log_std_max)
}

/// `θ_target ← (1 − ρ)·θ_target + ρ·θ_online`.
pub fn polyak_update<P: Parameters + ?Sized>(target: &mut P, online: &P, rho: f64) {
    let src = online.tensors();
    for (t, s) in target.tensors_mut().into_iter().zip(src) {
        for (a, b) in t.iter_mut().zip(s) {
            *a = (1.0 - rho) * *a + rho * b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    /// Temperature loss per task; `None` for tasks absent from the batch.
    pub alpha_losses: Vec<Option<f64>>,
    pub mean_alpha: f64,
    pub mean_q: f64,
}

#[derive(Debug, Clone)]
pub struct ActorObjective {
    pub loss: f64,
    pub grads: Grads,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacState {
    pub config: SacConfig,
    pub actor: TaskConditionedNet,
    pub critic1: TaskConditionedNet,
    pub critic2: TaskConditionedNet,
    pub target1: TaskConditionedNet,
    pub target2: TaskConditionedNet,
    pub log_alphas: Vec<f64>,
    actor_opt: AdamState,
    critic1_opt: AdamState,
    critic2_opt: AdamState,
    alpha_opts: Vec<ScalarAdam>,
    action_dim: usize,
}

fn matrix_stats(m: &Matrix) -> String {
    let finite = m.data().iter().filter(|v| v.is_finite()).count();
    let max = m.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = m.data().iter().cloned().fold(f64::INFINITY, f64::min);
    format!(
        "{}x{} finite={finite} min={min:.4e} max={max:.4e}",
        m.rows(),
        m.cols()
    )
}

impl SacState {
    pub fn new<R: Rng + ?Sized>(
        config: SacConfig,
        actor_arch: &ArchConfig,
        critic_arch: &ArchConfig,
        obs_dim: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if actor_arch.n_tasks != critic_arch.n_tasks {
            return Err(Error::Config(
                "actor and critic disagree on the task count".into(),
            ));
        }
        let actor = arch::build(actor_arch, obs_dim, action_dim, Role::Actor, rng)?;
        let critic1 = arch::build(critic_arch, obs_dim, action_dim, Role::Critic, rng)?;
        let critic2 = arch::build(critic_arch, obs_dim, action_dim, Role::Critic, rng)?;
        let n = actor_arch.n_tasks;
        Ok(Self {
            actor_opt: AdamState::new(&actor, config.lr_actor),
            critic1_opt: AdamState::new(&critic1, config.lr_critic),
            critic2_opt: AdamState::new(&critic2, config.lr_critic),
            alpha_opts: (0..n).map(|_| ScalarAdam::new(config.lr_alpha)).collect(),
            log_alphas: vec![config.init_log_alpha; n],
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            config,
            action_dim,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.log_alphas.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self, task: usize) -> f64 {
        self.log_alphas[task].exp()
    }

    pub fn mean_alpha(&self) -> f64 {
        self.log_alphas.iter().map(|l| l.exp()).sum::<f64>() / self.log_alphas.len() as f64
    }

    /// Policy samples for each observation row.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &Matrix,
        deterministic: bool,
        rng: &mut R,
    ) -> Result<Vec<PolicyOutput>> {
        let head = self.actor.predict(obs)?;
        (0..head.rows())
            .map(|r| {
                sample_action(
                    head.row(r),
                    self.config.log_std_min,
                    self.config.log_std_max,
                    deterministic,
                    rng,
                )
            })
            .collect()
    }

    fn noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Matrix {
        let data = (0..rows * self.action_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Matrix::from_vec(rows, self.action_dim, data).expect("noise shape")
    }

    fn critic_input(obs: &Matrix, actions: &Matrix) -> Matrix {
        Matrix::hcat(&[obs, actions]).expect("batch rows agree")
    }

    fn policy_rows(&self, head: &Matrix, noise: &Matrix) -> Result<Vec<PolicyOutput>> {
        (0..head.rows())
            .map(|r| {
                policy_from_noise(
                    head.row(r),
                    noise.row(r),
                    self.config.log_std_min,
                    self.config.log_std_max,
                )
            })
            .collect()
    }

    fn actions_of(&self, pol: &[PolicyOutput]) -> Matrix {
        Matrix::from_rows(&pol.iter().map(|p| p.action.as_slice()).collect::<Vec<_>>())
            .expect("policy rows share action dim")
    }

    /// Bootstrapped targets `y` for a batch given next-state policy noise.
    pub fn critic_targets(&self, batch: &Batch, next_noise: &Matrix) -> Result<Vec<f64>> {
        let head = self.actor.predict(&batch.next_obs)?;
        let pol = self.policy_rows(&head, next_noise)?;
        let x = Self::critic_input(&batch.next_obs, &self.actions_of(&pol));
        let q1 = self.target1.predict(&x)?;
        let q2 = self.target2.predict(&x)?;
        Ok((0..batch.len())
            .map(|b| {
                let not_done = if batch.dones[b] { 0.0 } else { 1.0 };
                let soft = q1.get(b, 0).min(q2.get(b, 0))
                    - self.alpha(batch.task_ids[b]) * pol[b].log_prob;
                if self.config.gamma == 0.0 || not_done == 0.0 {
                    batch.rewards[b]
                } else {
                    batch.rewards[b] + self.config.gamma * soft
                }
            })
            .collect())
    }

    /// One Adam step on both critics toward the soft Bellman targets.
    /// Returns the summed mean-squared losses and the pre-update mean Q.
    pub fn critic_update_with_noise(
        &mut self,
        batch: &Batch,
        next_noise: &Matrix,
    ) -> Result<(f64, f64)> {
        let y = self.critic_targets(batch, next_noise)?;
        let x = Self::critic_input(&batch.obs, &batch.actions);
        let bsz = batch.len() as f64;
        let (q1, c1) = self.critic1.forward(&x)?;
        let (q2, c2) = self.critic2.forward(&x)?;
        let mut loss = 0.0;
        let mut mean_q = 0.0;
        let mut d1 = Matrix::zeros(batch.len(), 1);
        let mut d2 = Matrix::zeros(batch.len(), 1);
        for b in 0..batch.len() {
            let (e1, e2) = (q1.get(b, 0) - y[b], q2.get(b, 0) - y[b]);
            loss += (e1 * e1 + e2 * e2) / bsz;
            mean_q += 0.5 * (q1.get(b, 0) + q2.get(b, 0)) / bsz;
            d1.set(b, 0, 2.0 * e1 / bsz);
            d2.set(b, 0, 2.0 * e2 / bsz);
        }
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "critic loss {loss}: q1 {} q2 {} mean target {:.4e} log_alphas {:?}",
                matrix_stats(&q1),
                matrix_stats(&q2),
                y.iter().sum::<f64>() / bsz,
                self.log_alphas
            )));
        }
        let (g1, _) = self.critic1.backward(&c1, &d1)?;
        let (g2, _) = self.critic2.backward(&c2, &d2)?;
        self.critic1_opt.step(&mut self.critic1, &g1)?;
        self.critic2_opt.step(&mut self.critic2, &g2)?;
        Ok((loss, mean_q))
    }

    pub fn critic_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        let noise = self.noise(batch.len(), rng);
        self.critic_update_with_noise(batch, &noise)
    }

    /// Actor loss `mean(α_task·log π − min(Q₁, Q₂))` with reparameterized
    /// actions and its gradient with respect to the actor parameters.
    /// Critics are only differentiated with respect to their action input.
    pub fn actor_objective(&self, batch: &Batch, noise: &Matrix) -> Result<ActorObjective> {
        let a_dim = self.action_dim;
        let bsz = batch.len() as f64;
        let (head, cache) = self.actor.forward(&batch.obs)?;
        let pol = self.policy_rows(&head, noise)?;
        let x = Self::critic_input(&batch.obs, &self.actions_of(&pol));
        let (q1, c1) = self.critic1.forward(&x)?;
        let (q2, c2) = self.critic2.forward(&x)?;

        let mut loss = 0.0;
        let mut pick1 = Matrix::zeros(batch.len(), 1);
        let mut pick2 = Matrix::zeros(batch.len(), 1);
        for b in 0..batch.len() {
            let alpha = self.alpha(batch.task_ids[b]);
            let (a, c) = (q1.get(b, 0), q2.get(b, 0));
            loss += (alpha * pol[b].log_prob - a.min(c)) / bsz;
            if a <= c {
                pick1.set(b, 0, 1.0);
            } else {
                pick2.set(b, 0, 1.0);
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "actor loss {loss}: head {} q1 {} q2 {}",
                matrix_stats(&head),
                matrix_stats(&q1),
                matrix_stats(&q2)
            )));
        }
        let mut dq_dx = self.critic1.backward_input(&c1, &pick1)?;
        dq_dx.add_assign(&self.critic2.backward_input(&c2, &pick2)?);
        let act_col = dq_dx.cols() - a_dim;

        let mut d_head = Matrix::zeros(batch.len(), 2 * a_dim);
        for b in 0..batch.len() {
            let alpha = self.alpha(batch.task_ids[b]);
            let p = &pol[b];
            let raw = &head.row(b)[a_dim..];
            let row = d_head.row_mut(b);
            for i in 0..a_dim {
                let t = p.pre_tanh[i].tanh();
                let d_a = -dq_dx.get(b, act_col + i) / bsz;
                let d_u = d_a * (1.0 - t * t) + alpha / bsz * 2.0 * t;
                row[i] = d_u;
                let inside = raw[i] > self.config.log_std_min && raw[i] < self.config.log_std_max;
                if inside {
                    row[a_dim + i] = d_u * p.log_std[i].exp() * noise.get(b, i) - alpha / bsz;
                }
            }
        }
        let (grads, _) = self.actor.backward(&cache, &d_head)?;
        Ok(ActorObjective {
            loss,
            grads,
            log_probs: pol.iter().map(|p| p.log_prob).collect(),
        })
    }

    /// Actor step, then per-task temperature steps on each task's slice.
    pub fn actor_and_alpha_update_with_noise(
        &mut self,
        batch: &Batch,
        noise: &Matrix,
    ) -> Result<(f64, Vec<Option<f64>>)> {
        let obj = self.actor_objective(batch, noise)?;
        let n = self.n_tasks();
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        for (b, &t) in batch.task_ids.iter().enumerate() {
            sums[t] += obj.log_probs[b] + self.config.target_entropy;
            counts[t] += 1;
        }
        self.actor_opt.step(&mut self.actor, &obj.grads)?;
        let mut alpha_losses = vec![None; n];
        for t in 0..n {
            if counts[t] == 0 {
                continue;
            }
            let m = sums[t] / counts[t] as f64;
            alpha_losses[t] = Some(-self.log_alphas[t] * m);
            self.alpha_opts[t].step(&mut self.log_alphas[t], -m)?;
        }
        Ok((obj.loss, alpha_losses))
    }

    pub fn actor_and_alpha_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        rng: &mut R,
    ) -> Result<(f64, Vec<Option<f64>>)> {
        let noise = self.noise(batch.len(), rng);
        self.actor_and_alpha_update_with_noise(batch, &noise)
    }

    pub fn polyak(&mut self) {
        let rho = self.config.polyak_rho;
        polyak_update(&mut self.target1, &self.critic1, rho);
        polyak_update(&mut self.target2, &self.critic2, rho);
    }

    /// Critic step, target averaging, then actor and temperature steps on
    /// the same batch.
    pub fn update_on_batch<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        rng: &mut R,
    ) -> Result<StepMetrics> {
        let (critic_loss, mean_q) = self.critic_update(batch, rng)?;
        self.polyak();
        let (actor_loss, alpha_losses) = self.actor_and_alpha_update(batch, rng)?;
        Ok(StepMetrics {
            critic_loss,
            actor_loss,
            alpha_losses,
            mean_alpha: self.mean_alpha(),
            mean_q,
        })
    }

    /// One balanced update. `Ok(None)` when the replay cannot yet supply a
    /// balanced batch; nothing is modified in that case.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        replay: &ReplayStore,
        rng: &mut R,
    ) -> Result<Option<StepMetrics>> {
        let batch = match replay.sample_batch(self.config.batch_size, rng) {
            Ok(b) => b,
            Err(Error::NotReady(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        self.update_on_batch(&batch, rng).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stable_correction_matches_direct_formula() {
        for u in [-3.0, -0.7, 0.0, 0.2, 1.5, 4.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log_one_minus_tanh_sq(u) - direct).abs() < 1e-12);
        }
        assert!(log_one_minus_tanh_sq(400.0).is_finite());
    }

    #[test]
    fn deterministic_zero_mean_is_zero_action() {
        let p = sample_action(
            &[0.0, 0.0, 1.0, -3.0],
            -20.0,
            2.0,
            true,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(p.action, vec![0.0, 0.0]);
    }

    #[test]
    fn log_std_is_clamped() {
        let p = policy_from_noise(&[0.1, -50.0], &[0.3], -20.0, 2.0).unwrap();
        assert_eq!(p.log_std, vec![-20.0]);
        let p = policy_from_noise(&[0.1, 50.0], &[0.3], -20.0, 2.0).unwrap();
        assert_eq!(p.log_std, vec![2.0]);
    }

    #[test]
    fn huge_pre_tanh_stays_inside_the_box() {
        let p = policy_from_noise(&[30.0, -30.0, 0.0, 0.0], &[0.0, 0.0], -20.0, 2.0).unwrap();
        assert!(p.action.iter().all(|a| a.abs() < 1.0));
        assert!(p.log_prob.is_finite());
    }

    #[test]
    fn non_finite_head_is_numeric_error() {
        assert!(matches!(
            policy_from_noise(&[f64::NAN, 0.0], &[0.0], -20.0, 2.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn polyak_extremes() {
        let mut t = Grads(vec![vec![1.0, 2.0]]);
        let o = Grads(vec![vec![5.0, -1.0]]);
        polyak_update(&mut t, &o, 0.0);
        assert_eq!(t.0[0], vec![1.0, 2.0]);
        polyak_update(&mut t, &o, 1.0);
        assert_eq!(t.0[0], vec![5.0, -1.0]);
    }

    #[test]
    fn config_validation() {
        let ok = SacConfig::default();
        assert!(ok.validate().is_ok());
        assert_eq!(ok.target_entropy, -2.0);
        assert!(SacConfig {
            gamma: 1.0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(SacConfig {
            log_std_min: 3.0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(SacConfig {
            polyak_rho: 0.0,
            ..ok
        }
        .validate()
        .is_err());
    }
}
