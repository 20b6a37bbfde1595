//! Named sweeps: cell generation, parallel execution and aggregation.

use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::RunConfig;
use super::report::{report, Report};
use super::run::{run, RunOutcome};
use crate::arch::{param_count_of, ArchConfig, ArchKind, Role};
use crate::env::ACTION_DIM;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Each baseline next to a SimpleFF sized to the same actor and critic budgets.
    BudgetMatch,
    /// SimpleFF across widths.
    WidthScaling,
    /// Every (actor width, critic width) pair.
    ActorVsCritic,
    /// Task count × width grid.
    TaskParamGrid,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::BudgetMatch,
        Preset::WidthScaling,
        Preset::ActorVsCritic,
        Preset::TaskParamGrid,
    ];

    pub fn default_widths(self) -> Vec<usize> {
        match self {
            Preset::BudgetMatch => Vec::new(),
            Preset::WidthScaling => vec![128, 256, 512, 1024],
            Preset::ActorVsCritic => vec![1024, 256, 128],
            Preset::TaskParamGrid => vec![256, 1024, 4096],
        }
    }

    pub fn default_task_counts(self) -> Vec<usize> {
        match self {
            Preset::TaskParamGrid => vec![2, 8, 16],
            _ => Vec::new(),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "budget_match" => Ok(Preset::BudgetMatch),
            "width_scaling" => Ok(Preset::WidthScaling),
            "actor_vs_critic" => Ok(Preset::ActorVsCritic),
            "task_param_grid" => Ok(Preset::TaskParamGrid),
            _ => Err(Error::Config(format!("unknown preset `{s}`"))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::BudgetMatch => "budget_match",
            Preset::WidthScaling => "width_scaling",
            Preset::ActorVsCritic => "actor_vs_critic",
            Preset::TaskParamGrid => "task_param_grid",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub preset: Preset,
    pub seeds: usize,
    pub total_env_steps: u64,
    pub out_dir: PathBuf,
    /// Shared knobs for every cell; cell-specific keys override them.
    pub base: RunConfig,
    /// `None` uses the preset's widths.
    pub widths: Option<Vec<usize>>,
    pub task_counts: Option<Vec<usize>>,
}

impl SweepSpec {
    pub fn new(preset: Preset, seeds: usize, total_env_steps: u64, out_dir: PathBuf) -> Self {
        Self {
            preset,
            seeds,
            total_env_steps,
            out_dir,
            base: RunConfig::default(),
            widths: None,
            task_counts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub label: String,
    pub config: RunConfig,
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn simple(base: &RunConfig, actor: usize, critic: usize) -> RunConfig {
    RunConfig {
        kind: ArchKind::SimpleFF,
        width: None,
        actor_width: Some(actor),
        critic_width: Some(critic),
        actor_budget: None,
        critic_budget: None,
        ..base.clone()
    }
}

/// The cells a preset expands to, before seeds are attached.
pub fn cells(spec: &SweepSpec) -> Result<Vec<Cell>> {
    let base = &spec.base;
    let widths = spec
        .widths
        .clone()
        .unwrap_or_else(|| spec.preset.default_widths());
    let tasks = spec
        .task_counts
        .clone()
        .unwrap_or_else(|| spec.preset.default_task_counts());
    let mut out = Vec::new();
    match spec.preset {
        Preset::BudgetMatch => {
            let obs = base.obs_dim();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for kind in [
                ArchKind::MTMHSAC,
                ArchKind::SoftModular,
                ArchKind::PaCo,
                ArchKind::MOORE,
            ] {
                let baseline = RunConfig {
                    kind,
                    width: None,
                    actor_width: None,
                    critic_width: None,
                    actor_budget: None,
                    critic_budget: None,
                    ..base.clone()
                };
                let arch = ArchConfig {
                    width: ArchConfig::default_for(kind, base.n_tasks).width,
                    ..baseline.resolve()?.actor
                };
                let pa = param_count_of(&arch, obs, ACTION_DIM, Role::Actor, &mut rng)?;
                let pc = param_count_of(&arch, obs, ACTION_DIM, Role::Critic, &mut rng)?;
                let matched = RunConfig {
                    kind: ArchKind::SimpleFF,
                    width: None,
                    actor_width: None,
                    critic_width: None,
                    actor_budget: Some(pa),
                    critic_budget: Some(pc),
                    ..base.clone()
                };
                out.push(Cell {
                    label: kind.to_string(),
                    config: baseline,
                });
                out.push(Cell {
                    label: format!("SimpleFF@{kind}"),
                    config: matched,
                });
            }
        }
        Preset::WidthScaling => {
            for &w in &widths {
                out.push(Cell {
                    label: format!("SimpleFF-w{w}"),
                    config: simple(base, w, w),
                });
            }
        }
        Preset::ActorVsCritic => {
            for &a in &widths {
                for &c in &widths {
                    out.push(Cell {
                        label: format!("actor{a}-critic{c}"),
                        config: simple(base, a, c),
                    });
                }
            }
        }
        Preset::TaskParamGrid => {
            for &n in &tasks {
                for &w in &widths {
                    let cfg = RunConfig {
                        n_tasks: n,
                        ..simple(base, w, w)
                    };
                    out.push(Cell {
                        label: format!("mt{n}-w{w}"),
                        config: cfg,
                    });
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "preset {} produced no cells",
            spec.preset
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub cells: Vec<Cell>,
    pub runs: Vec<RunOutcome>,
    pub report: Report,
}

/// Fully specified run configs, one per (cell, seed).
pub fn jobs(spec: &SweepSpec) -> Result<Vec<RunConfig>> {
    if spec.seeds == 0 {
        return Err(Error::Config("a sweep needs at least one seed".into()));
    }
    let mut out = Vec::new();
    for cell in cells(spec)? {
        for seed in 0..spec.seeds as u64 {
            let cfg = RunConfig {
                seed,
                total_env_steps: spec.total_env_steps,
                label: cell.label.clone(),
                out_dir: spec
                    .out_dir
                    .join(slug(&cell.label))
                    .join(format!("seed_{seed}")),
                ..cell.config.clone()
            };
            cfg.validate()?;
            out.push(cfg);
        }
    }
    Ok(out)
}

/// Runs every (cell, seed) in parallel, then aggregates from disk.
pub fn sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    let cells = cells(spec)?;
    let jobs = jobs(spec)?;
    let runs = jobs.par_iter().map(run).collect::<Result<Vec<_>>>()?;
    let report = report(&spec.out_dir)?;
    Ok(SweepOutcome {
        cells,
        runs,
        report,
    })
}
