//! Post-hoc aggregation: reads run directories back from disk, builds the
//! per-cell summary table and the plot series files.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use super::run::{AGGREGATE_TASK_ID, CSV_COLUMNS, CSV_FILE, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::stats::{iqm, stratified_bootstrap_ci, RunMatrix};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUCCESS_CURVES_FILE: &str = "fig_success_curves.csv";
pub const DORMANT_CURVES_FILE: &str = "fig_dormant_curves.csv";
pub const PARAMS_SUCCESS_FILE: &str = "fig_params_vs_success.csv";
pub const PARAMS_TASKS_DORMANT_FILE: &str = "fig_params_tasks_dormant.csv";

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "cell",
    "n_tasks",
    "param_count_actor",
    "param_count_critic",
    "n_seeds",
    "n_failed",
    "final_step",
    "final_iqm",
    "ci_lo",
    "ci_hi",
    "final_dormant_critic",
];

pub const BOOTSTRAP_RESAMPLES: usize = 2000;
pub const CONFIDENCE: f64 = 0.95;
pub const BOOTSTRAP_SEED: u64 = 0;

/// One checkpoint read back from a run CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRow {
    pub step: u64,
    pub per_task_rate: Vec<f64>,
    pub dormant_actor: f64,
    pub dormant_critic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub label: String,
    pub seed: u64,
    pub n_tasks: usize,
    pub param_count_actor: usize,
    pub param_count_critic: usize,
    pub completed: bool,
    pub checkpoints: Vec<CheckpointRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: String,
    pub n_tasks: usize,
    pub param_count_actor: usize,
    pub param_count_critic: usize,
    pub n_seeds: usize,
    pub n_failed: usize,
    pub final_step: u64,
    pub final_iqm: f64,
    /// `None` with fewer than two completed seeds.
    pub ci: Option<(f64, f64)>,
    pub final_dormant_critic: f64,
}

/// One point of a plotted series, `lo ≤ y ≤ hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub cell: String,
    pub x: f64,
    pub y: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub success_curves: Vec<SeriesPoint>,
    pub dormant_curves: Vec<SeriesPoint>,
    pub params_vs_success: Vec<SeriesPoint>,
    /// `(param_count_critic, n_tasks, dormant_fraction)` per cell.
    pub params_tasks_dormant: Vec<(usize, usize, f64)>,
    pub failed_runs: Vec<PathBuf>,
}

pub fn parse_kv(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn field<T: std::str::FromStr>(kv: &HashMap<String, String>, key: &str, path: &Path) -> Result<T> {
    kv.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("{}: missing or bad `{key}`", path.display())))
}

fn parse_cell(s: &str, what: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Format(format!("bad {what} value `{s}`")))
}

pub fn read_run_csv(path: &Path, n_tasks: usize) -> Result<Vec<CheckpointRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Format(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let mut out: Vec<CheckpointRow> = Vec::new();
    let mut pending: Vec<f64> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let step: u64 = rec[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad step `{}`", &rec[0])))?;
        let task: i64 = rec[2]
            .parse()
            .map_err(|_| Error::Format(format!("bad task_id `{}`", &rec[2])))?;
        if task == AGGREGATE_TASK_ID {
            if pending.len() != n_tasks {
                return Err(Error::Format(format!(
                    "{}: step {step} has {} task rows, expected {n_tasks}",
                    path.display(),
                    pending.len()
                )));
            }
            out.push(CheckpointRow {
                step,
                per_task_rate: std::mem::take(&mut pending),
                dormant_actor: parse_cell(&rec[5], "dormant_actor")?,
                dormant_critic: parse_cell(&rec[6], "dormant_critic")?,
            });
        } else {
            pending.push(parse_cell(&rec[3], "success_rate")?);
        }
    }
    Ok(out)
}

fn find_manifests(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            find_manifests(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == MANIFEST_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Every run under `root`, sorted by label then seed.
pub fn load_runs(root: &Path) -> Result<Vec<LoadedRun>> {
    let mut manifests = Vec::new();
    find_manifests(root, &mut manifests)?;
    let mut runs = Vec::with_capacity(manifests.len());
    for m in manifests {
        let kv = parse_kv(&fs::read_to_string(&m)?);
        let dir = m.parent().unwrap_or(root).to_path_buf();
        let n_tasks: usize = field(&kv, "benchmark.n_tasks", &m)?;
        let csv_path = dir.join(CSV_FILE);
        let checkpoints = if csv_path.exists() {
            read_run_csv(&csv_path, n_tasks)?
        } else {
            Vec::new()
        };
        runs.push(LoadedRun {
            label: kv.get("run.label").cloned().unwrap_or_default(),
            seed: field(&kv, "run.seed", &m)?,
            n_tasks,
            param_count_actor: field(&kv, "param_count_actor", &m)?,
            param_count_critic: field(&kv, "param_count_critic", &m)?,
            completed: kv.get("status").is_some_and(|s| s == "completed"),
            checkpoints,
            dir,
        });
    }
    runs.sort_by(|a, b| a.label.cmp(&b.label).then(a.seed.cmp(&b.seed)));
    Ok(runs)
}

/// IQM with a seed-bootstrap interval; the interval collapses to the
/// point when only one seed is available, and is widened to contain it.
fn point_and_ci(rates: Vec<Vec<f64>>) -> Result<(f64, Option<(f64, f64)>)> {
    let m = RunMatrix::new(rates)?;
    let y = m.iqm();
    if m.seeds() < 2 {
        return Ok((y, None));
    }
    let (lo, hi) = stratified_bootstrap_ci(&m, BOOTSTRAP_RESAMPLES, CONFIDENCE, BOOTSTRAP_SEED)?;
    Ok((y, Some((lo.min(y), hi.max(y)))))
}

fn point(cell: &str, x: f64, y: f64, ci: Option<(f64, f64)>) -> SeriesPoint {
    let (lo, hi) = ci.unwrap_or((y, y));
    SeriesPoint {
        cell: cell.to_string(),
        x,
        y,
        lo,
        hi,
    }
}

pub fn build_report(runs: &[LoadedRun]) -> Result<Report> {
    let mut cells: BTreeMap<&str, Vec<&LoadedRun>> = BTreeMap::new();
    for r in runs {
        cells.entry(r.label.as_str()).or_default().push(r);
    }
    let mut rep = Report {
        summary: Vec::new(),
        success_curves: Vec::new(),
        dormant_curves: Vec::new(),
        params_vs_success: Vec::new(),
        params_tasks_dormant: Vec::new(),
        failed_runs: runs
            .iter()
            .filter(|r| !r.completed)
            .map(|r| r.dir.clone())
            .collect(),
    };
    for (cell, members) in cells {
        let done: Vec<&LoadedRun> = members
            .iter()
            .copied()
            .filter(|r| r.completed && !r.checkpoints.is_empty())
            .collect();
        let first = members[0];
        if done.is_empty() {
            continue;
        }
        // Checkpoint steps shared by every completed seed.
        let mut steps: Vec<u64> = done[0].checkpoints.iter().map(|c| c.step).collect();
        steps.retain(|s| {
            done.iter()
                .all(|r| r.checkpoints.iter().any(|c| c.step == *s))
        });
        let at = |r: &LoadedRun, s: u64| r.checkpoints.iter().find(|c| c.step == s).cloned();
        for &s in &steps {
            let rows: Vec<_> = done.iter().filter_map(|r| at(r, s)).collect();
            let (y, ci) = point_and_ci(rows.iter().map(|c| c.per_task_rate.clone()).collect())?;
            rep.success_curves.push(point(cell, s as f64, y, ci));
            let (y, ci) = point_and_ci(rows.iter().map(|c| vec![c.dormant_critic]).collect())?;
            rep.dormant_curves.push(point(cell, s as f64, y, ci));
        }
        let Some(&final_step) = steps.last() else {
            continue;
        };
        let finals: Vec<CheckpointRow> = done.iter().filter_map(|r| at(r, final_step)).collect();
        let (final_iqm, ci) =
            point_and_ci(finals.iter().map(|c| c.per_task_rate.clone()).collect())?;
        let dormant = iqm(&finals.iter().map(|c| c.dormant_critic).collect::<Vec<_>>())?;
        let total_params = (first.param_count_actor + first.param_count_critic) as f64;
        rep.params_vs_success
            .push(point(cell, total_params, final_iqm, ci));
        rep.params_tasks_dormant
            .push((first.param_count_critic, first.n_tasks, dormant));
        rep.summary.push(SummaryRow {
            cell: cell.to_string(),
            n_tasks: first.n_tasks,
            param_count_actor: first.param_count_actor,
            param_count_critic: first.param_count_critic,
            n_seeds: done.len(),
            n_failed: members.len() - done.len(),
            final_step,
            final_iqm,
            ci,
            final_dormant_critic: dormant,
        });
    }
    rep.params_vs_success
        .sort_by(|a, b| a.x.total_cmp(&b.x).then(a.cell.cmp(&b.cell)));
    rep.params_tasks_dormant
        .sort_by_key(|a| (a.0, a.1));
    Ok(rep)
}

fn write_series(path: &Path, pts: &[SeriesPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell", "x", "y", "lo", "hi"])?;
    for p in pts {
        w.write_record([
            p.cell.clone(),
            p.x.to_string(),
            p.y.to_string(),
            p.lo.to_string(),
            p.hi.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        let (lo, hi) = r.ci.map_or((String::new(), String::new()), |(l, h)| {
            (l.to_string(), h.to_string())
        });
        w.write_record([
            r.cell.clone(),
            r.n_tasks.to_string(),
            r.param_count_actor.to_string(),
            r.param_count_critic.to_string(),
            r.n_seeds.to_string(),
            r.n_failed.to_string(),
            r.final_step.to_string(),
            r.final_iqm.to_string(),
            lo,
            hi,
            r.final_dormant_critic.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the series files into `dir` and returns their paths.
pub fn emit_plot_data(rep: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        (SUCCESS_CURVES_FILE, &rep.success_curves),
        (DORMANT_CURVES_FILE, &rep.dormant_curves),
        (PARAMS_SUCCESS_FILE, &rep.params_vs_success),
    ];
    let mut out = Vec::new();
    for (name, pts) in files {
        let p = dir.join(name);
        write_series(&p, pts)?;
        out.push(p);
    }
    let p = dir.join(PARAMS_TASKS_DORMANT_FILE);
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["param_count", "n_tasks", "dormant_fraction"])?;
    for (pc, n, d) in &rep.params_tasks_dormant {
        w.write_record([pc.to_string(), n.to_string(), d.to_string()])?;
    }
    w.flush()?;
    out.push(p);
    Ok(out)
}

/// Re-aggregates a sweep directory: summary table plus plot series.
pub fn report(root: &Path) -> Result<Report> {
    let runs = load_runs(root)?;
    if runs.is_empty() {
        return Err(Error::Format(format!(
            "no runs found under {}",
            root.display()
        )));
    }
    let rep = build_report(&runs)?;
    write_summary(&root.join(SUMMARY_FILE), &rep.summary)?;
    emit_plot_data(&rep, root)?;
    Ok(rep)
}
