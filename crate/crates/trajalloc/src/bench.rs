//! Method comparison on a dataset: control cost, trajectory time,
//! computation time and success rate.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use trajalloc_core::allocnet::{infer, AllocModel};
use trajalloc_core::clock::Clock;
use trajalloc_core::dataset::DatasetRecord;
use trajalloc_core::polynomial::PiecewiseTrajectory;
use trajalloc_core::time_opt::{
    optimize_fd, optimize_implicit, scale_to_feasible, uniform_allocation, Evaluation,
    OptimizeReport, OptimizeSettings,
};
use trajalloc_core::verify;
use trajalloc_core::Result;

use crate::clock::StdClock;

/// Re-check tolerance for reported successes.
pub const VERIFY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Equal split of the reference total time, then temporal scaling.
    Uniform,
    Fd,
    Implicit,
    AllocNet {
        alpha: f64,
    },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Uniform => "uniform+scale".into(),
            Method::Fd => "optimize_fd".into(),
            Method::Implicit => "optimize_implicit".into(),
            Method::AllocNet { alpha } => format!("allocnet(alpha={alpha})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSettings {
    pub optimize: OptimizeSettings,
    pub scale_factor: f64,
    pub scale_cap: usize,
    /// Run instances one at a time.
    pub serial: bool,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            optimize: OptimizeSettings::default(),
            scale_factor: 1.2,
            scale_cap: 10,
            serial: false,
        }
    }
}

/// One method on one instance. Timing fields are `comp_time_ms`,
/// `infer_ms` and `solve_ms`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceResult {
    pub method: String,
    pub instance: usize,
    pub segments: usize,
    pub predicted_segments: Option<usize>,
    pub success: bool,
    /// Passed the independent constraint re-check.
    pub verified: bool,
    pub max_violation: Option<f64>,
    pub control_cost: Option<f64>,
    pub trajectory_time: Option<f64>,
    pub iterations: usize,
    pub solves: usize,
    pub scalings: usize,
    pub comp_time_ms: f64,
    pub infer_ms: Option<f64>,
    pub solve_ms: Option<f64>,
}

/// Per-method summary. Means are over successful instances only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub dataset: String,
    pub mean_control_cost: Option<f64>,
    pub mean_trajectory_time: Option<f64>,
    pub mean_comp_time_ms: Option<f64>,
    pub success_rate: f64,
    pub successes: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub instances: Vec<InstanceResult>,
}

/// Column names whose values depend on wall-clock time.
pub const TIMING_COLUMNS: [&str; 4] = ["comp_time_ms", "infer_ms", "solve_ms", "mean_comp_time_ms"];

struct Outcome {
    trajectory: Option<PiecewiseTrajectory>,
    predicted_segments: Option<usize>,
    iterations: usize,
    solves: usize,
    scalings: usize,
    infer_ms: Option<f64>,
    solve_ms: Option<f64>,
}

fn trajectory_of(ev: &Evaluation, degree: usize) -> Result<Option<PiecewiseTrajectory>> {
    if !ev.is_feasible() {
        return Ok(None);
    }
    PiecewiseTrajectory::from_stacked(&ev.solution.c, &ev.durations, degree).map(Some)
}

fn from_optimizer(rep: OptimizeReport, degree: usize) -> Result<Outcome> {
    let trajectory = match &rep.evaluation {
        Some(ev) => trajectory_of(ev, degree)?,
        None => None,
    };
    Ok(Outcome {
        trajectory,
        predicted_segments: None,
        iterations: rep.iterations,
        solves: rep.solves,
        scalings: 0,
        infer_ms: None,
        solve_ms: None,
    })
}

fn run_method(
    method: Method,
    rec: &DatasetRecord,
    model: Option<&AllocModel>,
    settings: &BenchSettings,
    clock: &dyn Clock,
) -> Result<Outcome> {
    let inst = &rec.instance;
    let opt = &settings.optimize;
    let degree = inst.degree();
    match method {
        Method::Uniform => {
            let total: f64 = rec.t_ref.iter().sum();
            let t = uniform_allocation(inst, total)?;
            let rescue = scale_to_feasible(
                inst,
                &t,
                settings.scale_factor,
                settings.scale_cap,
                &opt.qp,
                clock,
            )?;
            let (trajectory, solves, scalings) = match rescue {
                Some(r) => (
                    trajectory_of(&r.evaluation, degree)?,
                    r.scalings + 1,
                    r.scalings,
                ),
                None => (None, settings.scale_cap + 1, settings.scale_cap),
            };
            Ok(Outcome {
                trajectory,
                predicted_segments: None,
                iterations: 0,
                solves,
                scalings,
                infer_ms: None,
                solve_ms: None,
            })
        }
        Method::Fd => from_optimizer(optimize_fd(inst, &rec.t_ref, opt, clock)?, degree),
        Method::Implicit => {
            from_optimizer(optimize_implicit(inst, &rec.t_ref, opt, clock)?, degree)
        }
        Method::AllocNet { alpha } => {
            let model = model.ok_or_else(|| {
                trajalloc_core::Error::InvalidArgument("allocnet method needs a model".into())
            })?;
            let out = infer(model, inst, alpha, &opt.qp, clock)?;
            Ok(Outcome {
                predicted_segments: Some(out.predicted_segments),
                iterations: 0,
                solves: out.scalings + 1,
                scalings: out.scalings,
                infer_ms: Some(out.inference_time * 1e3),
                solve_ms: Some(out.solve_time * 1e3),
                trajectory: out.trajectory,
            })
        }
    }
}

fn run_instance(
    index: usize,
    rec: &DatasetRecord,
    methods: &[Method],
    model: Option<&AllocModel>,
    settings: &BenchSettings,
) -> Result<Vec<InstanceResult>> {
    let clock = StdClock;
    methods
        .iter()
        .map(|&m| {
            let start = clock.now();
            let out = run_method(m, rec, model, settings, &clock)?;
            let comp_time_ms = (clock.now() - start) * 1e3;
            let kappa = rec.instance.kappa();
            let violation = out
                .trajectory
                .as_ref()
                .map(|t| verify::check(&rec.instance, t).max());
            Ok(InstanceResult {
                method: m.name(),
                instance: index,
                segments: rec.num_segments(),
                predicted_segments: out.predicted_segments,
                success: out.trajectory.is_some(),
                verified: violation.is_some_and(|v| v <= VERIFY_TOL),
                max_violation: violation,
                control_cost: out.trajectory.as_ref().map(|t| t.control_cost(kappa)),
                trajectory_time: out.trajectory.as_ref().map(|t| t.total_duration()),
                iterations: out.iterations,
                solves: out.solves,
                scalings: out.scalings,
                comp_time_ms,
                infer_ms: out.infer_ms,
                solve_ms: out.solve_ms,
            })
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize(dataset: &str, methods: &[Method], results: &[InstanceResult]) -> Vec<BenchRow> {
    methods
        .iter()
        .map(|m| {
            let name = m.name();
            let all: Vec<&InstanceResult> = results.iter().filter(|r| r.method == name).collect();
            let ok: Vec<&InstanceResult> = all.iter().copied().filter(|r| r.success).collect();
            BenchRow {
                mean_control_cost: mean(ok.iter().filter_map(|r| r.control_cost)),
                mean_trajectory_time: mean(ok.iter().filter_map(|r| r.trajectory_time)),
                mean_comp_time_ms: mean(ok.iter().map(|r| r.comp_time_ms)),
                success_rate: if all.is_empty() {
                    0.0
                } else {
                    ok.len() as f64 / all.len() as f64
                },
                successes: ok.len(),
                instances: all.len(),
                dataset: dataset.into(),
                method: name,
            }
        })
        .collect()
}

/// Runs every method on every record. Per-instance failures are recorded,
/// not returned as errors.
pub fn run_benchmark(
    methods: &[Method],
    dataset: &str,
    records: &[DatasetRecord],
    model: Option<&AllocModel>,
    settings: &BenchSettings,
) -> Result<BenchReport> {
    if methods.is_empty() {
        return Ok(BenchReport {
            rows: Vec::new(),
            instances: Vec::new(),
        });
    }
    let per_instance: Vec<Result<Vec<InstanceResult>>> = if settings.serial {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| run_instance(i, r, methods, model, settings))
            .collect()
    } else {
        records
            .par_iter()
            .enumerate()
            .map(|(i, r)| run_instance(i, r, methods, model, settings))
            .collect()
    };
    let mut instances = Vec::with_capacity(records.len() * methods.len());
    for r in per_instance {
        instances.extend(r?);
    }
    Ok(BenchReport {
        rows: summarize(dataset, methods, &instances),
        instances,
    })
}

pub fn write_csv<T: Serialize, W: Write>(w: W, rows: &[T]) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Aligned text table of the summary rows.
pub fn format_table(rows: &[BenchRow]) -> String {
    let fmt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
    let header = [
        "method",
        "dataset",
        "min control",
        "traj time (s)",
        "comp time (ms)",
        "succ rate",
    ];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.dataset.clone(),
                fmt(r.mean_control_cost, 3),
                fmt(r.mean_trajectory_time, 3),
                fmt(r.mean_comp_time_ms, 2),
                format!("{:.3}", r.success_rate),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(k, (c, &w))| {
                if k < 2 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, header.to_vec());
    for row in &body {
        line(&mut out, row.iter().map(String::as_str).collect());
    }
    out
}
