//! Command-line front end.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use trajalloc_core::allocnet::{infer, train, EpochLog, TrainingConfig};
use trajalloc_core::corridor::GeneratorConfig;
use trajalloc_core::dataset::{generate_dataset, DatasetConfig, DatasetRecord};
use trajalloc_core::polynomial::PiecewiseTrajectory;
use trajalloc_core::qp_builder::ProblemInstance;
use trajalloc_core::time_opt::{
    optimize_fd, optimize_implicit, reference_time, scale_to_feasible, uniform_allocation,
    OptimizeSettings,
};

use crate::bench::{format_table, run_benchmark, write_csv, BenchSettings, Method};
use crate::clock::StdClock;
use crate::gradcheck::{check_instance, GradcheckSettings};
use crate::io::{self, ModelJson, TrainingMeta};
use crate::parallel::sample_map;

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "TRAJALLOC_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "trajalloc",
    version,
    about = "Corridor trajectories with learned time allocation"
)]
pub struct Cli {
    /// Disable all parallelism.
    #[arg(long, global = true)]
    pub serial: bool,
    /// TOML file with parameter defaults; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for default output paths.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic dataset.
    GenData {
        /// Dataset file (defaults to <out-dir>/dataset.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the bare instances to this file.
        #[arg(long)]
        instances: Option<PathBuf>,
        #[command(flatten)]
        params: Params,
    },
    /// Plan one instance with one method and export the trajectory.
    Plan {
        #[arg(long)]
        instance: PathBuf,
        /// Line of the instance file to plan (0-based).
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, value_enum)]
        method: PlanMethod,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Samples per second in the exported trajectory.
        #[arg(long, default_value_t = 100.0)]
        rate: f64,
        /// Trajectory CSV (defaults to <out-dir>/trajectory.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: Params,
    },
    /// Train the allocation network.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Model file (defaults to <out-dir>/model.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-epoch CSV log (defaults to <out-dir>/train_log.csv).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        params: Params,
    },
    /// Compare allocation methods on an evaluation set.
    Bench {
        /// Evaluation set; generated from the seed when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Trained model; one is trained from the seed when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [BenchMethod::Uniform, BenchMethod::Fd, BenchMethod::Implicit, BenchMethod::Allocnet])]
        methods: Vec<BenchMethod>,
        /// Stop thresholds for the allocnet method.
        #[arg(long, value_delimiter = ',', default_values_t = [0.35, 0.5, 0.75])]
        alphas: Vec<f64>,
        #[command(flatten)]
        params: Params,
    },
    /// Compare implicit gradients with finite differences.
    Gradcheck {
        /// Number of instances to check.
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Relative error threshold.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Comparison CSV (defaults to <out-dir>/gradcheck.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: Params,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlanMethod {
    Uniform,
    Fd,
    Implicit,
    Allocnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchMethod {
    Uniform,
    Fd,
    Implicit,
    Allocnet,
}

/// Numeric parameters shared by every subcommand. Each can come from a flag
/// or from the config file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of generated instances.
    #[arg(long)]
    pub count: Option<usize>,
    /// Training set size when bench trains its own model.
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub m_max: Option<usize>,
    #[arg(long)]
    pub f_max: Option<usize>,
    #[arg(long)]
    pub v_max: Option<f64>,
    #[arg(long)]
    pub a_max: Option<f64>,
    #[arg(long)]
    pub j_max: Option<f64>,
    #[arg(long)]
    pub n_res: Option<usize>,
    #[arg(long)]
    pub w_f: Option<f64>,
    #[arg(long)]
    pub w_t: Option<f64>,
    #[arg(long)]
    pub w_s: Option<f64>,
    #[arg(long)]
    pub lambda_p: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub armijo_c: Option<f64>,
    #[arg(long)]
    pub shrink: Option<f64>,
}

/// [`Params`] with every value filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub seed: u64,
    pub count: usize,
    pub train_count: usize,
    pub kappa: usize,
    pub m_max: usize,
    pub f_max: usize,
    pub v_max: f64,
    pub a_max: f64,
    pub j_max: f64,
    pub n_res: usize,
    pub w_f: f64,
    pub w_t: f64,
    pub w_s: f64,
    pub lambda_p: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub shrink: f64,
}

impl Default for Resolved {
    fn default() -> Self {
        let t = TrainingConfig::default();
        let o = OptimizeSettings::default();
        Resolved {
            seed: 0,
            count: 200,
            train_count: 200,
            kappa: 3,
            m_max: 3,
            f_max: 6,
            v_max: 4.0,
            a_max: 6.0,
            j_max: 8.0,
            n_res: 20,
            w_f: t.w_f,
            w_t: t.w_t,
            w_s: t.w_s,
            lambda_p: t.lambda_p,
            alpha: t.alpha,
            epochs: 60,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            hidden: t.hidden,
            max_iters: o.max_iters,
            grad_tol: o.grad_tol,
            armijo_c: o.armijo_c,
            shrink: o.shrink,
        }
    }
}

/// Invalid parameter values; reported like a usage error.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

macro_rules! merge {
    ($out:ident, $flags:ident, $file:ident, $($f:ident),*) => {
        $( if let Some(v) = $flags.$f.clone().or_else(|| $file.$f.clone()) { $out.$f = v; } )*
    };
}

impl Resolved {
    /// `flags > file > defaults`.
    pub fn merge(flags: &Params, file: &Params) -> Self {
        let mut out = Resolved::default();
        merge!(
            out,
            flags,
            file,
            seed,
            count,
            train_count,
            kappa,
            m_max,
            f_max,
            v_max,
            a_max,
            j_max,
            n_res,
            w_f,
            w_t,
            w_s,
            lambda_p,
            alpha,
            epochs,
            batch_size,
            learning_rate,
            hidden,
            max_iters,
            grad_tol,
            armijo_c,
            shrink
        );
        out
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let fail = |m: &str| Err(UsageError(m.into()));
        if self.kappa != 3 && self.kappa != 4 {
            return fail("--kappa must be 3 or 4");
        }
        if self.m_max == 0 {
            return fail("--m-max must be positive");
        }
        if self.f_max < 6 || self.f_max > trajalloc_core::F_MAX_LIMIT {
            return fail("--f-max must lie in [6, 50]");
        }
        for (name, v) in [
            ("--v-max", self.v_max),
            ("--a-max", self.a_max),
            ("--j-max", self.j_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(UsageError(format!("{name} must be positive")));
            }
        }
        if self.n_res < 2 {
            return fail("--n-res must be at least 2");
        }
        for (name, v) in [
            ("--w-f", self.w_f),
            ("--w-t", self.w_t),
            ("--w-s", self.w_s),
            ("--lambda-p", self.lambda_p),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(UsageError(format!("{name} must be non-negative")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("--alpha must lie in (0, 1)");
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return fail("--batch-size and --learning-rate must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("--hidden needs positive widths");
        }
        if !(self.grad_tol > 0.0) || !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return fail("--grad-tol must be positive and --armijo-c in (0, 1)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return fail("--shrink must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn d_m(&self) -> Vec<f64> {
        let mut d = vec![self.v_max, self.a_max];
        if self.kappa == 4 {
            d.push(self.j_max);
        }
        d
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            generator: GeneratorConfig {
                segments: (1, self.m_max),
                m_max: self.m_max,
                ..GeneratorConfig::default()
            },
            kappa: self.kappa,
            d_m: self.d_m(),
            n_res: self.n_res,
            w_t: self.w_t,
            f_max: self.f_max,
            ..DatasetConfig::default()
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            w_f: self.w_f,
            w_t: self.w_t,
            w_s: self.w_s,
            lambda_p: self.lambda_p,
            alpha: self.alpha,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            hidden: self.hidden.clone(),
            ..TrainingConfig::default()
        }
    }

    pub fn optimize_settings(&self) -> OptimizeSettings {
        OptimizeSettings {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            armijo_c: self.armijo_c,
            shrink: self.shrink,
            ..OptimizeSettings::default()
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<Params> {
    let Some(path) = path else {
        return Ok(Params::default());
    };
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}

/// `--out-dir`, then the environment override, then `./out`.
fn out_dir(cli: &Cli) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn output_path(dir: &Path, explicit: &Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    let path = explicit.clone().unwrap_or_else(|| dir.join(name));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(path)
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    mean_loss: f64,
    mean_trajectory_loss: f64,
    mean_token_loss: f64,
    feasible_fraction: f64,
    inconclusive: usize,
    token_accuracy: f64,
}

impl From<&EpochLog> for EpochRow {
    fn from(l: &EpochLog) -> Self {
        EpochRow {
            epoch: l.epoch,
            mean_loss: l.mean_loss,
            mean_trajectory_loss: l.mean_trajectory_loss,
            mean_token_loss: l.mean_token_loss,
            feasible_fraction: l.feasible_fraction,
            inconclusive: l.inconclusive,
            token_accuracy: l.token_accuracy,
        }
    }
}

fn training_meta(cfg: &TrainingConfig) -> TrainingMeta {
    TrainingMeta {
        w_f: cfg.w_f,
        w_t: cfg.w_t,
        w_s: cfg.w_s,
        lambda_p: cfg.lambda_p,
        alpha: cfg.alpha,
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    }
}

fn train_model(
    records: &[DatasetRecord],
    p: &Resolved,
    serial: bool,
) -> anyhow::Result<(
    trajalloc_core::allocnet::AllocModel,
    Vec<EpochLog>,
    TrainingConfig,
)> {
    let cfg = p.training_config();
    let (model, logs) = train(records, &cfg, sample_map(serial), &mut |l| {
        log::info!(
            "epoch {:>4}  loss {:>12.4}  feasible {:.3}  token acc {:.3}",
            l.epoch,
            l.mean_loss,
            l.feasible_fraction,
            l.token_accuracy
        )
    })?;
    Ok((model, logs, cfg))
}

fn gen_records(
    p: &Resolved,
    seed: u64,
    count: usize,
    serial: bool,
) -> anyhow::Result<Vec<DatasetRecord>> {
    let cfg = p.dataset_config();
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    if serial {
        return Ok(generate_dataset(seed, count, &cfg)?);
    }
    use rayon::prelude::*;
    let out: trajalloc_core::Result<Vec<_>> = (0..count as u64)
        .into_par_iter()
        .map(|i| trajalloc_core::dataset::generate_record(seed, i, &cfg))
        .collect();
    Ok(out?)
}

struct Planned {
    durations: Vec<f64>,
    trajectory: Option<PiecewiseTrajectory>,
    note: String,
}

fn plan_instance(
    inst: &ProblemInstance,
    method: PlanMethod,
    model: Option<&Path>,
    p: &Resolved,
) -> anyhow::Result<Planned> {
    let opt = p.optimize_settings();
    let clock = StdClock;
    let t_ref = reference_time(inst);
    let from_eval =
        |ev: &trajalloc_core::time_opt::Evaluation| -> anyhow::Result<Option<PiecewiseTrajectory>> {
            if !ev.is_feasible() {
                return Ok(None);
            }
            Ok(Some(PiecewiseTrajectory::from_stacked(
                &ev.solution.c,
                &ev.durations,
                inst.degree(),
            )?))
        };
    match method {
        PlanMethod::Uniform => {
            let t = uniform_allocation(inst, t_ref.iter().sum())?;
            match scale_to_feasible(inst, &t, 1.2, 10, &opt.qp, &clock)? {
                Some(r) => Ok(Planned {
                    durations: r.evaluation.durations.clone(),
                    trajectory: from_eval(&r.evaluation)?,
                    note: format!("scalings {}", r.scalings),
                }),
                None => Ok(Planned {
                    durations: t,
                    trajectory: None,
                    note: "infeasible after 10 scalings".into(),
                }),
            }
        }
        PlanMethod::Fd | PlanMethod::Implicit => {
            let start = match scale_to_feasible(inst, &t_ref, 1.2, 10, &opt.qp, &clock)? {
                Some(r) => r.evaluation.durations,
                None => t_ref,
            };
            let rep = if method == PlanMethod::Fd {
                optimize_fd(inst, &start, &opt, &clock)?
            } else {
                optimize_implicit(inst, &start, &opt, &clock)?
            };
            let trajectory = match &rep.evaluation {
                Some(ev) => from_eval(ev)?,
                None => None,
            };
            Ok(Planned {
                durations: rep.durations.clone(),
                trajectory,
                note: format!(
                    "status {:?}, iterations {}, solves {}",
                    rep.status, rep.iterations, rep.solves
                ),
            })
        }
        PlanMethod::Allocnet => {
            let Some(path) = model else {
                return Err(UsageError("--method allocnet needs --model".into()).into());
            };
            let (model, _) = io::read_model(path)?;
            let out = infer(&model, inst, p.alpha, &opt.qp, &clock)?;
            Ok(Planned {
                durations: out.durations,
                trajectory: out.trajectory,
                note: format!(
                    "predicted segments {}{}, scalings {}, inference {:.3} ms, solve {:.3} ms",
                    out.predicted_segments,
                    if out.length_miss {
                        " (length miss)"
                    } else {
                        ""
                    },
                    out.scalings,
                    out.inference_time * 1e3,
                    out.solve_time * 1e3
                ),
            })
        }
    }
}

#[derive(Serialize)]
struct GradRow {
    instance: usize,
    segment: usize,
    duration: f64,
    implicit: f64,
    finite_difference: f64,
    rel_error: f64,
    step: f64,
    active_set_crossing: bool,
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let dir = out_dir(cli);
    let file = load_config(cli.config.as_deref())?;
    let resolve = |flags: &Params| -> anyhow::Result<Resolved> {
        let r = Resolved::merge(flags, &file);
        r.validate()?;
        Ok(r)
    };
    match &cli.command {
        Command::GenData {
            out,
            instances,
            params,
        } => {
            let p = resolve(params)?;
            let records = gen_records(&p, p.seed, p.count, cli.serial)?;
            let path = output_path(&dir, out, "dataset.jsonl")?;
            io::write_dataset(&path, &records)?;
            let feasible = records.iter().filter(|r| r.feasible).count();
            println!(
                "wrote {} records to {} ({feasible} feasible at reference)",
                records.len(),
                path.display()
            );
            if let Some(ipath) = instances {
                let path = output_path(&dir, &Some(ipath.clone()), "")?;
                let insts: Vec<ProblemInstance> =
                    records.iter().map(|r| r.instance.clone()).collect();
                io::write_instances(&path, &insts)?;
                println!("wrote {} instances to {}", insts.len(), path.display());
            }
        }
        Command::Plan {
            instance,
            index,
            method,
            model,
            rate,
            out,
            params,
        } => {
            let p = resolve(params)?;
            if !(*rate > 0.0) {
                return Err(UsageError("--rate must be positive".into()).into());
            }
            let insts = io::read_instances(instance)?;
            let Some(inst) = insts.get(*index) else {
                bail!(
                    "{} holds {} instances, no index {index}",
                    instance.display(),
                    insts.len()
                );
            };
            let clock = StdClock;
            use trajalloc_core::clock::Clock;
            let start = clock.now();
            let planned = plan_instance(inst, *method, model.as_deref(), &p)?;
            let ms = (clock.now() - start) * 1e3;
            println!("method      {method:?}");
            println!("durations   {:?}", planned.durations);
            println!("details     {}", planned.note);
            println!("comp time   {ms:.3} ms");
            let Some(traj) = planned.trajectory else {
                bail!("no feasible trajectory found");
            };
            let v = trajalloc_core::verify::check(inst, &traj);
            println!("min control {:.6}", traj.control_cost(inst.kappa()));
            println!("traj time   {:.6} s", traj.total_duration());
            println!("violation   {:.3e}", v.max());
            let path = output_path(&dir, out, "trajectory.csv")?;
            let f = std::fs::File::create(&path)
                .with_context(|| format!("creating {}", path.display()))?;
            crate::export::write_trajectory_csv(f, &traj, *rate)?;
            println!("trajectory  {}", path.display());
        }
        Command::Train {
            data,
            out,
            log,
            params,
        } => {
            let p = resolve(params)?;
            let records = io::read_dataset(data, p.f_max)?;
            if records.is_empty() {
                bail!("{} holds no records", data.display());
            }
            let (model, logs, cfg) = train_model(&records, &p, cli.serial)?;
            let path = output_path(&dir, out, "model.json")?;
            io::write_model(&path, &ModelJson::new(&model, training_meta(&cfg)))?;
            let lpath = output_path(&dir, log, "train_log.csv")?;
            let rows: Vec<EpochRow> = logs.iter().map(EpochRow::from).collect();
            write_csv(std::fs::File::create(&lpath)?, &rows)?;
            if let Some(last) = logs.last() {
                println!(
                    "final epoch {}: loss {:.4}, feasible {:.3}, token accuracy {:.3}",
                    last.epoch, last.mean_loss, last.feasible_fraction, last.token_accuracy
                );
            }
            println!("model written to {}", path.display());
        }
        Command::Bench {
            data,
            model,
            methods,
            alphas,
            params,
        } => {
            let mut p = resolve(params)?;
            if params.count.is_none() && file.count.is_none() {
                p.count = 30;
            }
            if alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                return Err(UsageError("--alphas must lie in (0, 1)".into()).into());
            }
            let (records, name) = match data {
                Some(path) => (
                    io::read_dataset(path, p.f_max)?,
                    path.file_stem()
                        .map_or("data".into(), |s| s.to_string_lossy().into_owned()),
                ),
                None => (
                    gen_records(&p, p.seed, p.count, cli.serial)?,
                    format!("synthetic-{}", p.seed),
                ),
            };
            let mut list = Vec::new();
            for m in methods {
                match m {
                    BenchMethod::Uniform => list.push(Method::Uniform),
                    BenchMethod::Fd => list.push(Method::Fd),
                    BenchMethod::Implicit => list.push(Method::Implicit),
                    BenchMethod::Allocnet => {
                        list.extend(alphas.iter().map(|&alpha| Method::AllocNet { alpha }))
                    }
                }
            }
            let needs_model = list.iter().any(|m| matches!(m, Method::AllocNet { .. }));
            let net = match (model, needs_model) {
                (_, false) => None,
                (Some(path), true) => Some(io::read_model(path)?.0),
                (None, true) => {
                    // Training instances come from a different seed stream.
                    let train_set =
                        gen_records(&p, p.seed ^ 0xA11C_0A7E, p.train_count, cli.serial)?;
                    Some(train_model(&train_set, &p, cli.serial)?.0)
                }
            };
            let settings = BenchSettings {
                optimize: p.optimize_settings(),
                serial: cli.serial,
                ..BenchSettings::default()
            };
            let report = run_benchmark(&list, &name, &records, net.as_ref(), &settings)?;
            let spath = output_path(&dir, &None, "bench_summary.csv")?;
            write_csv(std::fs::File::create(&spath)?, &report.rows)?;
            let ipath = output_path(&dir, &None, "bench_instances.csv")?;
            write_csv(std::fs::File::create(&ipath)?, &report.instances)?;
            print!("{}", format_table(&report.rows));
            let unverified = report
                .instances
                .iter()
                .filter(|r| r.success && !r.verified)
                .count();
            println!(
                "summary {} / instances {}",
                spath.display(),
                ipath.display()
            );
            if unverified > 0 {
                bail!("{unverified} reported successes failed the constraint re-check");
            }
        }
        Command::Gradcheck {
            n,
            tol,
            out,
            params,
        } => {
            let p = resolve(params)?;
            if !(*tol > 0.0) {
                return Err(UsageError("--tol must be positive".into()).into());
            }
            let cfg = p.dataset_config();
            cfg.validate().map_err(|e| UsageError(e.to_string()))?;
            let settings = GradcheckSettings {
                tol: *tol,
                ..GradcheckSettings::default()
            };
            let (mut checked, mut passed, mut crossings) = (0usize, 0usize, 0usize);
            let mut rows = Vec::new();
            let mut index = 0u64;
            while checked < *n && index < 20 * (*n as u64).max(1) {
                let rec = trajalloc_core::dataset::generate_record(p.seed, index, &cfg)?;
                index += 1;
                if !rec.feasible {
                    continue;
                }
                let Some(res) = check_instance(&rec.instance, &rec.t_ref, &settings)? else {
                    continue;
                };
                if res.active_set_crossing {
                    crossings += 1;
                    continue;
                }
                for i in 0..res.durations.len() {
                    rows.push(GradRow {
                        instance: index as usize - 1,
                        segment: i,
                        duration: res.durations[i],
                        implicit: res.implicit[i],
                        finite_difference: res.finite_difference[i],
                        rel_error: res.rel_error,
                        step: res.step,
                        active_set_crossing: res.active_set_crossing,
                    });
                }
                checked += 1;
                if res.passed(*tol) {
                    passed += 1;
                }
            }
            let path = output_path(&dir, out, "gradcheck.csv")?;
            write_csv(std::fs::File::create(&path)?, &rows)?;
            println!("{passed}/{checked} within tol");
            println!("active-set crossings excluded: {crossings}");
            if checked < *n || passed < checked || crossings * 10 >= checked + crossings {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the subcommand and returns the process exit code:
/// 0 on success, 1 on a domain error, 2 on a usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("usage error: {e:#}");
            eprintln!("run `trajalloc --help` for the synopsis");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
