use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mtrl_core::harness::{self, Preset, RunConfig, RunStatus, SummaryRow, SweepSpec};

#[derive(Parser)]
#[command(name = "mtrl", about = "Multi-task SAC scaling laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `key=value` overrides applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a preset over several seeds and aggregate.
    Sweep {
        #[arg(long)]
        preset: Preset,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        /// Total environment steps per run, summed over tasks.
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        out: PathBuf,
        /// Base config shared by every cell.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        tasks: Option<Vec<usize>>,
    },
    /// Rebuild the summary table and plot series from a sweep directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("override `{o}` is not key=value");
        };
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<28} {:>6} {:>12} {:>12} {:>6} {:>9} {:>8} {:>8} {:>9}",
        "cell", "tasks", "actor_p", "critic_p", "seeds", "iqm", "ci_lo", "ci_hi", "dormant_c"
    );
    for r in rows {
        let (lo, hi) = r.ci.map_or(("-".to_string(), "-".to_string()), |(l, h)| {
            (format!("{l:.3}"), format!("{h:.3}"))
        });
        println!(
            "{:<28} {:>6} {:>12} {:>12} {:>6} {:>9.3} {:>8} {:>8} {:>9.3}",
            r.cell,
            r.n_tasks,
            r.param_count_actor,
            r.param_count_critic,
            r.n_seeds,
            r.final_iqm,
            lo,
            hi,
            r.final_dormant_critic
        );
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            config,
            overrides,
            out,
        } => {
            let mut cfg = load_config(config.as_ref(), &overrides)?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let res = harness::run(&cfg)?;
            if let Some(c) = res.final_checkpoint() {
                println!(
                    "step {} success {:.3} iqm {:.3} dormant actor {:.3} critic {:.3}",
                    c.step, c.mean_rate, c.iqm, c.dormant_actor.fraction, c.dormant_critic.fraction
                );
            }
            println!("wrote {} ({:.1}s)", res.dir.display(), res.wall_time_secs);
            if let RunStatus::Failed(msg) = &res.status {
                eprintln!("run failed: {msg}");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sweep {
            preset,
            seeds,
            steps,
            out,
            config,
            overrides,
            widths,
            tasks,
        } => {
            let mut spec = SweepSpec::new(preset, seeds, steps, out);
            spec.base = load_config(config.as_ref(), &overrides)?;
            spec.widths = widths;
            spec.task_counts = tasks;
            let res = harness::sweep(&spec)?;
            print_summary(&res.report.summary);
            for f in &res.report.failed_runs {
                eprintln!("failed run: {}", f.display());
            }
        }
        Command::Report { input } => {
            let rep = harness::report(&input)?;
            print_summary(&rep.summary);
            for f in &rep.failed_runs {
                eprintln!("failed run: {}", f.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
