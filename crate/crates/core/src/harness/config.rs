//! Flat `key=value` run configuration with dotted section prefixes.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::arch::{match_param_budget, ArchConfig, ArchKind};
use crate::env::{ACTION_DIM, CORE_OBS_DIM};
use crate::error::{Error, Result};
use crate::plasticity::DEFAULT_TAU;
use crate::sac::SacConfig;

/// How `sac.updates_per_env_step` is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateSchedule {
    /// `u` updates per environment step, i.e. `u·N` per round-robin cycle.
    PerEnvStep,
    /// `u` updates per round-robin cycle.
    PerCycle,
}

impl FromStr for UpdateSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_env_step" => Ok(Self::PerEnvStep),
            "per_cycle" => Ok(Self::PerCycle),
            _ => Err(Error::Config(format!("unknown update schedule `{s}`"))),
        }
    }
}

impl std::fmt::Display for UpdateSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerEnvStep => "per_env_step",
            Self::PerCycle => "per_cycle",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_tasks: usize,
    pub variations: usize,
    pub benchmark_seed: u64,

    pub kind: ArchKind,
    pub depth: usize,
    /// Shared width; `None` picks the kind's default.
    pub width: Option<usize>,
    pub n_modules: usize,
    pub routing_dim: usize,
    pub n_param_sets: usize,
    pub n_experts: usize,
    pub actor_width: Option<usize>,
    pub actor_budget: Option<usize>,
    pub critic_width: Option<usize>,
    pub critic_budget: Option<usize>,

    pub sac: SacConfig,
    pub update_schedule: UpdateSchedule,

    pub replay_capacity: usize,
    /// Records every task buffer must hold before updates start;
    /// `None` means `max(B/N, 1000)`.
    pub replay_warmup: Option<usize>,

    /// Environment steps summed over all tasks.
    pub total_env_steps: u64,
    /// `None` means every 40 episodes per task, i.e. `40·horizon·N` steps.
    pub eval_every: Option<u64>,
    pub eval_episodes: usize,
    pub probe_batch: usize,
    pub tau: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub label: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_tasks: 8,
            variations: 10,
            benchmark_seed: 7,
            kind: ArchKind::SimpleFF,
            depth: 3,
            width: None,
            n_modules: 4,
            routing_dim: 64,
            n_param_sets: 5,
            n_experts: 4,
            actor_width: None,
            actor_budget: None,
            critic_width: None,
            critic_budget: None,
            sac: SacConfig::for_action_dim(ACTION_DIM),
            update_schedule: UpdateSchedule::PerEnvStep,
            replay_capacity: 100_000,
            replay_warmup: None,
            total_env_steps: 150_000,
            eval_every: None,
            eval_episodes: 10,
            probe_batch: 1280,
            tau: DEFAULT_TAU,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            label: String::new(),
        }
    }
}

/// Widths and architecture configs after defaults and budgets are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedNets {
    pub actor: ArchConfig,
    pub critic: ArchConfig,
    pub actor_width_derived: bool,
    pub critic_width_derived: bool,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

impl RunConfig {
    pub fn obs_dim(&self) -> usize {
        CORE_OBS_DIM + self.n_tasks
    }

    pub fn warmup(&self) -> usize {
        self.replay_warmup
            .unwrap_or_else(|| (self.sac.batch_size / self.n_tasks.max(1)).max(1000))
    }

    pub fn eval_interval(&self) -> u64 {
        self.eval_every
            .unwrap_or((40 * crate::env::HORIZON * self.n_tasks) as u64)
    }

    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "benchmark.n_tasks" => self.n_tasks = parse(key, v)?,
            "benchmark.variations" => self.variations = parse(key, v)?,
            "benchmark.seed" => self.benchmark_seed = parse(key, v)?,
            "arch.kind" => self.kind = v.parse()?,
            "arch.depth" => self.depth = parse(key, v)?,
            "arch.width" => self.width = parse_opt(key, v)?,
            "arch.n_modules" => self.n_modules = parse(key, v)?,
            "arch.routing_dim" => self.routing_dim = parse(key, v)?,
            "arch.n_param_sets" => self.n_param_sets = parse(key, v)?,
            "arch.n_experts" => self.n_experts = parse(key, v)?,
            "actor.width" => self.actor_width = parse_opt(key, v)?,
            "actor.budget" => self.actor_budget = parse_opt(key, v)?,
            "critic.width" => self.critic_width = parse_opt(key, v)?,
            "critic.budget" => self.critic_budget = parse_opt(key, v)?,
            "sac.gamma" => self.sac.gamma = parse(key, v)?,
            "sac.polyak_rho" => self.sac.polyak_rho = parse(key, v)?,
            "sac.lr_actor" => self.sac.lr_actor = parse(key, v)?,
            "sac.lr_critic" => self.sac.lr_critic = parse(key, v)?,
            "sac.lr_alpha" => self.sac.lr_alpha = parse(key, v)?,
            "sac.target_entropy" => self.sac.target_entropy = parse(key, v)?,
            "sac.log_std_min" => self.sac.log_std_min = parse(key, v)?,
            "sac.log_std_max" => self.sac.log_std_max = parse(key, v)?,
            "sac.batch_size" => self.sac.batch_size = parse(key, v)?,
            "sac.updates_per_env_step" => self.sac.updates_per_env_step = parse(key, v)?,
            "sac.update_schedule" => self.update_schedule = v.parse()?,
            "sac.init_log_alpha" => self.sac.init_log_alpha = parse(key, v)?,
            "replay.capacity" => self.replay_capacity = parse(key, v)?,
            "replay.warmup" => self.replay_warmup = parse_opt(key, v)?,
            "run.total_env_steps" => self.total_env_steps = parse(key, v)?,
            "run.eval_every" => self.eval_every = parse_opt(key, v)?,
            "run.eval_episodes" => self.eval_episodes = parse(key, v)?,
            "run.probe_batch" => self.probe_batch = parse(key, v)?,
            "run.tau" => self.tau = parse(key, v)?,
            "run.seed" => self.seed = parse(key, v)?,
            "run.out_dir" => self.out_dir = PathBuf::from(v),
            "run.label" => self.label = v.to_string(),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{raw}`", i + 1))
            })?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }

    /// Every knob, one per line, in a fixed order. Parsing the output
    /// reproduces the config.
    pub fn to_text(&self) -> String {
        let s = &self.sac;
        let pairs: Vec<(&str, String)> = vec![
            ("benchmark.n_tasks", self.n_tasks.to_string()),
            ("benchmark.variations", self.variations.to_string()),
            ("benchmark.seed", self.benchmark_seed.to_string()),
            ("arch.kind", self.kind.to_string()),
            ("arch.depth", self.depth.to_string()),
            ("arch.width", opt(&self.width)),
            ("arch.n_modules", self.n_modules.to_string()),
            ("arch.routing_dim", self.routing_dim.to_string()),
            ("arch.n_param_sets", self.n_param_sets.to_string()),
            ("arch.n_experts", self.n_experts.to_string()),
            ("actor.width", opt(&self.actor_width)),
            ("actor.budget", opt(&self.actor_budget)),
            ("critic.width", opt(&self.critic_width)),
            ("critic.budget", opt(&self.critic_budget)),
            ("sac.gamma", s.gamma.to_string()),
            ("sac.polyak_rho", s.polyak_rho.to_string()),
            ("sac.lr_actor", s.lr_actor.to_string()),
            ("sac.lr_critic", s.lr_critic.to_string()),
            ("sac.lr_alpha", s.lr_alpha.to_string()),
            ("sac.target_entropy", s.target_entropy.to_string()),
            ("sac.log_std_min", s.log_std_min.to_string()),
            ("sac.log_std_max", s.log_std_max.to_string()),
            ("sac.batch_size", s.batch_size.to_string()),
            (
                "sac.updates_per_env_step",
                s.updates_per_env_step.to_string(),
            ),
            ("sac.update_schedule", self.update_schedule.to_string()),
            ("sac.init_log_alpha", s.init_log_alpha.to_string()),
            ("replay.capacity", self.replay_capacity.to_string()),
            ("replay.warmup", opt(&self.replay_warmup)),
            ("run.total_env_steps", self.total_env_steps.to_string()),
            ("run.eval_every", opt(&self.eval_every)),
            ("run.eval_episodes", self.eval_episodes.to_string()),
            ("run.probe_batch", self.probe_batch.to_string()),
            ("run.tau", self.tau.to_string()),
            ("run.seed", self.seed.to_string()),
            ("run.out_dir", self.out_dir.display().to_string()),
            ("run.label", self.label.clone()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    fn arch_with_width(&self, width: usize) -> ArchConfig {
        ArchConfig {
            kind: self.kind,
            width,
            depth: self.depth,
            n_modules: self.n_modules,
            routing_dim: self.routing_dim,
            n_param_sets: self.n_param_sets,
            n_experts: self.n_experts,
            n_tasks: self.n_tasks,
        }
    }

    /// Width precedence: budget, then the role's width, then `arch.width`,
    /// then the kind default.
    pub fn resolve(&self) -> Result<ResolvedNets> {
        let default = self
            .width
            .unwrap_or_else(|| ArchConfig::default_for(self.kind, self.n_tasks).width);
        let obs = self.obs_dim();
        let pick =
            |budget: Option<usize>, width: Option<usize>, in_dim: usize, out: usize| match budget {
                Some(b) => {
                    match_param_budget(self.kind, self.depth, in_dim, out, b).map(|w| (w, true))
                }
                None => Ok((width.unwrap_or(default), false)),
            };
        let (aw, ad) = pick(self.actor_budget, self.actor_width, obs, 2 * ACTION_DIM)?;
        let (cw, cd) = pick(self.critic_budget, self.critic_width, obs + ACTION_DIM, 1)?;
        let actor = self.arch_with_width(aw);
        let critic = self.arch_with_width(cw);
        actor.validate()?;
        critic.validate()?;
        Ok(ResolvedNets {
            actor,
            critic,
            actor_width_derived: ad,
            critic_width_derived: cd,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=50).contains(&self.n_tasks) || !(1..=50).contains(&self.variations) {
            return Err(Error::Config(
                "benchmark.n_tasks and benchmark.variations must lie in 1..=50".into(),
            ));
        }
        self.sac.validate()?;
        if !self.sac.batch_size.is_multiple_of(self.n_tasks) {
            return Err(Error::Config(format!(
                "sac.batch_size {} is not divisible by {} tasks",
                self.sac.batch_size, self.n_tasks
            )));
        }
        if self.replay_capacity == 0 {
            return Err(Error::Config("replay.capacity must be ≥ 1".into()));
        }
        if self.warmup() > self.replay_capacity {
            return Err(Error::Config(
                "replay.warmup exceeds replay.capacity".into(),
            ));
        }
        if self.eval_interval() == 0 {
            return Err(Error::Config("run.eval_every must be ≥ 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("run.eval_episodes must be ≥ 1".into()));
        }
        if self.probe_batch < self.n_tasks || !self.probe_batch.is_multiple_of(self.n_tasks) {
            return Err(Error::Config(format!(
                "run.probe_batch {} must be a positive multiple of {} tasks",
                self.probe_batch, self.n_tasks
            )));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Config("run.tau must be ≥ 0".into()));
        }
        if (self.actor_budget.is_some() || self.critic_budget.is_some())
            && self.kind != ArchKind::SimpleFF
        {
            return Err(Error::Config("budgets size SimpleFF networks only".into()));
        }
        self.resolve().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips() {
        let mut c = RunConfig::default();
        c.set("arch.kind", "moore").unwrap();
        c.set("critic.width", "400").unwrap();
        c.set("run.label", "cell a").unwrap();
        c.set("sac.gamma", "0.95").unwrap();
        let back = RunConfig::parse_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::parse_text("sac.gama=0.9").is_err());
        assert!(RunConfig::parse_text("no equals sign").is_err());
        assert!(RunConfig::parse_text("# comment only\n\nsac.gamma=0.9 # trailing\n").is_ok());
    }

    #[test]
    fn budget_derives_width() {
        let c =
            RunConfig::parse_text("actor.budget=330004\nbenchmark.n_tasks=10\nsac.batch_size=130")
                .unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.actor.width, 400);
        assert!(r.actor_width_derived);
        assert!(!r.critic_width_derived);
        assert!(RunConfig::parse_text("arch.kind=PaCo\nactor.budget=100000").is_err());
    }

    #[test]
    fn batch_must_split_evenly() {
        assert!(RunConfig::parse_text("benchmark.n_tasks=10").is_err());
        assert!(RunConfig::parse_text(
            "benchmark.n_tasks=10\nsac.batch_size=160\nrun.probe_batch=1280"
        )
        .is_ok());
    }
}
