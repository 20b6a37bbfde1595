//! A single training run: round-robin data collection, SAC updates,
//! periodic evaluation and plasticity probes, written to CSV as it goes.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{RunConfig, UpdateSchedule};
use crate::env::{make_benchmark, BenchmarkSet, EnvState, ACTION_DIM};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::nn::{Matrix, Parameters};
use crate::plasticity::{dormant_report, param_norms, Component, DormantReport, NormReport};
use crate::replay::{ReplayStore, TransitionRecord};
use crate::sac::{SacState, StepMetrics};
use crate::stats::iqm;

pub const CSV_FILE: &str = "run.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BENCHMARK_FILE: &str = "benchmark.txt";

pub const CSV_COLUMNS: [&str; 13] = [
    "step",
    "seed",
    "task_id",
    "success_rate",
    "iqm_success",
    "dormant_actor",
    "dormant_critic",
    "actor_norm",
    "critic_norm",
    "critic_loss",
    "actor_loss",
    "mean_alpha",
    "mean_q",
];

/// `task_id` value of the per-checkpoint aggregate row.
pub const AGGREGATE_TASK_ID: i64 = -1;

const STREAM_INIT: u64 = 0;
const STREAM_RESET: u64 = 1;
const STREAM_ACT: u64 = 2;
const STREAM_UPDATE: u64 = 3;
const STREAM_PROBE: u64 = 4;
const STREAM_EVAL: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Running,
    Completed,
    Failed(String),
}

impl RunStatus {
    pub fn is_failed(&self) -> bool {
        matches!(self, RunStatus::Failed(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub per_task_rate: Vec<f64>,
    pub mean_rate: f64,
    pub iqm: f64,
    pub dormant_actor: DormantReport,
    /// Both critics scored together.
    pub dormant_critic: DormantReport,
    pub norms: NormReport,
    /// Latest update's metrics; `None` before the first update.
    pub metrics: Option<StepMetrics>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub status: RunStatus,
    pub checkpoints: Vec<Checkpoint>,
    pub env_steps: u64,
    pub updates: u64,
    pub actor_width: usize,
    pub critic_width: usize,
    pub param_count_actor: usize,
    pub param_count_critic: usize,
    pub wall_time_secs: f64,
}

impl RunOutcome {
    pub fn final_checkpoint(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }
}

/// Git-style content hash: SHA-256 over `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn merge_reports(a: DormantReport, b: DormantReport) -> DormantReport {
    let layer_dormant: Vec<usize> = a
        .layer_dormant
        .iter()
        .zip(&b.layer_dormant)
        .map(|(x, y)| x + y)
        .collect();
    let layer_sizes: Vec<usize> = a
        .layer_sizes
        .iter()
        .zip(&b.layer_sizes)
        .map(|(x, y)| x + y)
        .collect();
    let total: usize = layer_sizes.iter().sum();
    let fraction = if total == 0 {
        0.0
    } else {
        layer_dormant.iter().sum::<usize>() as f64 / total as f64
    };
    DormantReport {
        tau: a.tau,
        component: a.component,
        layer_dormant,
        layer_sizes,
        fraction,
    }
}

/// Fixed probe inputs, an equal share per task. Each row is an
/// independent reset followed by a uniformly random number of
/// uniform-random actions; critic rows append one more random action.
pub struct ProbeSet {
    pub actor: Matrix,
    pub critic: Matrix,
}

pub fn collect_probe<R: Rng + ?Sized>(
    bench: &BenchmarkSet,
    rows: usize,
    rng: &mut R,
) -> Result<ProbeSet> {
    let n = bench.n_tasks;
    let per = rows / n;
    let mut actor = Matrix::zeros(per * n, bench.obs_dim);
    let mut critic = Matrix::zeros(per * n, bench.obs_dim + ACTION_DIM);
    let random_action = |rng: &mut R| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
    let mut r = 0;
    for t in 0..n {
        let horizon = bench.task(t)?.horizon;
        for _ in 0..per {
            let (mut s, mut o) = bench.reset(t, rng)?;
            for _ in 0..rng.random_range(0..horizon) {
                let (next, res) = bench.step(&s, random_action(rng))?;
                if res.terminated || res.truncated {
                    break;
                }
                s = next;
                o = res.observation;
            }
            let a = random_action(rng);
            actor.row_mut(r).copy_from_slice(&o);
            let cr = critic.row_mut(r);
            cr[..o.len()].copy_from_slice(&o);
            cr[o.len()..].copy_from_slice(&a);
            r += 1;
        }
    }
    Ok(ProbeSet { actor, critic })
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

struct CsvSink {
    w: csv::Writer<File>,
    seed: u64,
}

impl CsvSink {
    fn create(path: &Path, seed: u64) -> Result<Self> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(CSV_COLUMNS)?;
        w.flush()?;
        Ok(Self { w, seed })
    }

    fn write(&mut self, c: &Checkpoint) -> Result<()> {
        let step = c.step.to_string();
        let seed = self.seed.to_string();
        for (t, rate) in c.per_task_rate.iter().enumerate() {
            let mut rec = vec![step.clone(), seed.clone(), t.to_string(), fmt_f(*rate)];
            rec.resize(CSV_COLUMNS.len(), String::new());
            self.w.write_record(&rec)?;
        }
        let m = |f: fn(&StepMetrics) -> f64| {
            c.metrics.as_ref().map(|s| fmt_f(f(s))).unwrap_or_default()
        };
        let rec = vec![
            step,
            seed,
            AGGREGATE_TASK_ID.to_string(),
            fmt_f(c.mean_rate),
            fmt_f(c.iqm),
            fmt_f(c.dormant_actor.fraction),
            fmt_f(c.dormant_critic.fraction),
            fmt_f(c.norms.actor),
            fmt_f(c.norms.critic),
            m(|s| s.critic_loss),
            m(|s| s.actor_loss),
            m(|s| s.mean_alpha),
            m(|s| s.mean_q),
        ];
        self.w.write_record(&rec)?;
        self.w.flush()?;
        Ok(())
    }
}

struct Manifest<'a> {
    config: &'a RunConfig,
    hash: String,
    actor_desc: String,
    critic_desc: String,
    actor_width: usize,
    critic_width: usize,
    actor_derived: bool,
    critic_derived: bool,
    pc_actor: usize,
    pc_critic: usize,
}

impl Manifest<'_> {
    fn write(
        &self,
        path: &Path,
        status: &RunStatus,
        wall: f64,
        steps: u64,
        updates: u64,
    ) -> Result<()> {
        let mut s = self.config.to_text();
        s.push_str(&format!("derived.actor_width={}\n", self.actor_width));
        s.push_str(&format!("derived.critic_width={}\n", self.critic_width));
        s.push_str(&format!(
            "derived.actor_width_from_budget={}\n",
            self.actor_derived
        ));
        s.push_str(&format!(
            "derived.critic_width_from_budget={}\n",
            self.critic_derived
        ));
        s.push_str(&format!("derived.warmup={}\n", self.config.warmup()));
        s.push_str(&format!(
            "derived.eval_every={}\n",
            self.config.eval_interval()
        ));
        s.push_str(&format!("actor.descriptor={}\n", self.actor_desc));
        s.push_str(&format!("critic.descriptor={}\n", self.critic_desc));
        s.push_str(&format!("param_count_actor={}\n", self.pc_actor));
        s.push_str(&format!("param_count_critic={}\n", self.pc_critic));
        s.push_str(&format!("config_hash={}\n", self.hash));
        match status {
            RunStatus::Running => s.push_str("status=running\n"),
            RunStatus::Completed => s.push_str("status=completed\n"),
            RunStatus::Failed(msg) => {
                s.push_str("status=failed\n");
                s.push_str(&format!("failure={}\n", msg.replace('\n', " ")));
            }
        }
        s.push_str(&format!("env_steps_done={steps}\n"));
        s.push_str(&format!("updates_done={updates}\n"));
        s.push_str(&format!("wall_time_secs={wall:.3}\n"));
        fs::write(path, s)?;
        Ok(())
    }
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    bench: BenchmarkSet,
    sac: SacState,
    probe: ProbeSet,
    last_metrics: Option<StepMetrics>,
}

impl Runner<'_> {
    fn checkpoint(&self, step: u64) -> Result<Checkpoint> {
        let mut eval_rng = stream(
            self.cfg.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            STREAM_EVAL,
        );
        let rep = evaluate(
            &self.sac,
            &self.bench,
            self.cfg.eval_episodes,
            step,
            &mut eval_rng,
        )?;
        let tau = self.cfg.tau;
        let dormant_actor =
            dormant_report(&self.sac.actor, &self.probe.actor, tau, Component::Actor)?;
        let c1 = dormant_report(
            &self.sac.critic1,
            &self.probe.critic,
            tau,
            Component::Critic,
        )?;
        let c2 = dormant_report(
            &self.sac.critic2,
            &self.probe.critic,
            tau,
            Component::Critic,
        )?;
        Ok(Checkpoint {
            step,
            iqm: iqm(&rep.per_task_rate)?,
            mean_rate: rep.mean_rate,
            per_task_rate: rep.per_task_rate,
            dormant_actor,
            dormant_critic: merge_reports(c1, c2),
            norms: param_norms(&self.sac),
            metrics: self.last_metrics.clone(),
        })
    }
}

/// Runs one configuration into `config.out_dir`. A numeric failure during
/// training ends the run early with `RunStatus::Failed`; rows already
/// written stay on disk.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let nets = config.resolve()?;
    let dir = config.out_dir.clone();
    fs::create_dir_all(&dir)?;

    let bench = make_benchmark(config.n_tasks, config.variations, config.benchmark_seed)?;
    fs::write(dir.join(BENCHMARK_FILE), bench.manifest())?;

    let obs_dim = bench.obs_dim;
    let sac = SacState::new(
        config.sac.clone(),
        &nets.actor,
        &nets.critic,
        obs_dim,
        ACTION_DIM,
        &mut stream(config.seed, STREAM_INIT),
    )?;
    let probe = collect_probe(
        &bench,
        config.probe_batch,
        &mut stream(config.seed, STREAM_PROBE),
    )?;

    let manifest = Manifest {
        config,
        hash: content_hash(config.to_text().as_bytes()),
        actor_desc: sac.actor.descriptor(),
        critic_desc: sac.critic1.descriptor(),
        actor_width: nets.actor.width,
        critic_width: nets.critic.width,
        actor_derived: nets.actor_width_derived,
        critic_derived: nets.critic_width_derived,
        pc_actor: sac.actor.param_count(),
        pc_critic: sac.critic1.param_count(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    manifest.write(&manifest_path, &RunStatus::Running, 0.0, 0, 0)?;

    let mut csv = CsvSink::create(&dir.join(CSV_FILE), config.seed)?;
    let mut runner = Runner {
        cfg: config,
        bench,
        sac,
        probe,
        last_metrics: None,
    };
    let mut checkpoints = Vec::new();
    let mut steps = 0u64;
    let mut updates = 0u64;

    let outcome = (|| -> Result<()> {
        let c = runner.checkpoint(0)?;
        csv.write(&c)?;
        checkpoints.push(c);

        let n = config.n_tasks;
        let mut reset_rng = stream(config.seed, STREAM_RESET);
        let mut act_rng = stream(config.seed, STREAM_ACT);
        let mut upd_rng = stream(config.seed, STREAM_UPDATE);
        let mut replay = ReplayStore::new(n, config.replay_capacity, obs_dim, ACTION_DIM)?;
        let mut states: Vec<EnvState> = Vec::with_capacity(n);
        let mut obs = Matrix::zeros(n, obs_dim);
        for t in 0..n {
            let (s, o) = runner.bench.reset(t, &mut reset_rng)?;
            obs.row_mut(t).copy_from_slice(&o);
            states.push(s);
        }
        let warmup = config.warmup();
        let interval = config.eval_interval();
        let mut next_eval = interval;
        let mut acc = 0.0f64;

        while steps < config.total_env_steps {
            let warm = replay.all_hold(warmup);
            let actions: Vec<[f64; 2]> = if warm {
                runner
                    .sac
                    .act(&obs, false, &mut act_rng)?
                    .into_iter()
                    .map(|p| [p.action[0], p.action[1]])
                    .collect()
            } else {
                (0..n)
                    .map(|_| {
                        [
                            act_rng.random_range(-1.0..=1.0),
                            act_rng.random_range(-1.0..=1.0),
                        ]
                    })
                    .collect()
            };
            let mut stepped = 0usize;
            for t in 0..n {
                if steps >= config.total_env_steps {
                    break;
                }
                let (next, res) = runner.bench.step(&states[t], actions[t])?;
                replay.push(TransitionRecord {
                    obs: obs.row(t).to_vec(),
                    action: actions[t].to_vec(),
                    reward: res.reward,
                    next_obs: res.observation.clone(),
                    done: res.terminated,
                    task_id: t,
                })?;
                if res.terminated || res.truncated {
                    let (s, o) = runner.bench.reset(t, &mut reset_rng)?;
                    obs.row_mut(t).copy_from_slice(&o);
                    states[t] = s;
                } else {
                    obs.row_mut(t).copy_from_slice(&res.observation);
                    states[t] = next;
                }
                steps += 1;
                stepped += 1;
            }

            if replay.all_hold(warmup) {
                acc += match config.update_schedule {
                    UpdateSchedule::PerEnvStep => stepped as f64 * config.sac.updates_per_env_step,
                    UpdateSchedule::PerCycle => config.sac.updates_per_env_step,
                };
                while acc >= 1.0 {
                    acc -= 1.0;
                    if let Some(m) = runner.sac.train_step(&replay, &mut upd_rng)? {
                        updates += 1;
                        runner.last_metrics = Some(m);
                    }
                }
            }

            if steps >= next_eval {
                while next_eval <= steps {
                    next_eval += interval;
                }
                let c = runner.checkpoint(steps)?;
                csv.write(&c)?;
                checkpoints.push(c);
            }
        }
        if checkpoints.last().map(|c| c.step) != Some(steps) {
            let c = runner.checkpoint(steps)?;
            csv.write(&c)?;
            checkpoints.push(c);
        }
        Ok(())
    })();

    let status = match outcome {
        Ok(()) => RunStatus::Completed,
        Err(Error::Numeric(msg)) => RunStatus::Failed(msg),
        Err(e) => return Err(e),
    };
    let wall = start.elapsed().as_secs_f64();
    manifest.write(&manifest_path, &status, wall, steps, updates)?;
    Ok(RunOutcome {
        dir,
        status,
        checkpoints,
        env_steps: steps,
        updates,
        actor_width: nets.actor.width,
        critic_width: nets.critic.width,
        param_count_actor: manifest.pc_actor,
        param_count_critic: manifest.pc_critic,
        wall_time_secs: wall,
    })
}
