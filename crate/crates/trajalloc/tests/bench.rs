use std::sync::OnceLock;

use trajalloc::bench::{
    run_benchmark, summarize, BenchReport, BenchSettings, InstanceResult, Method,
};
use trajalloc::parallel::Rayon;
use trajalloc_core::allocnet::{batch_gradient, train, AllocModel, Branch, Serial, TrainingConfig};
use trajalloc_core::clock::NoClock;
use trajalloc_core::dataset::{generate_dataset, DatasetConfig, DatasetRecord};
use trajalloc_core::qp_solver::QpStatus;
use trajalloc_core::time_opt::evaluate;

fn model() -> &'static AllocModel {
    static M: OnceLock<AllocModel> = OnceLock::new();
    M.get_or_init(|| {
        let data = generate_dataset(101, 60, &DatasetConfig::default()).unwrap();
        let cfg = TrainingConfig {
            epochs: 30,
            hidden: vec![32, 32],
            ..TrainingConfig::default()
        };
        train(&data, &cfg, &Rayon, &mut |_| {}).unwrap().0
    })
}

fn eval_set() -> Vec<DatasetRecord> {
    generate_dataset(202, 16, &DatasetConfig::default()).unwrap()
}

const METHODS: [Method; 4] = [
    Method::Uniform,
    Method::Fd,
    Method::Implicit,
    Method::AllocNet { alpha: 0.5 },
];

fn report(serial: bool) -> BenchReport {
    let settings = BenchSettings {
        serial,
        ..BenchSettings::default()
    };
    run_benchmark(&METHODS, "eval", &eval_set(), Some(model()), &settings).unwrap()
}

fn without_timing(r: &InstanceResult) -> InstanceResult {
    InstanceResult {
        comp_time_ms: 0.0,
        infer_ms: None,
        solve_ms: None,
        ..r.clone()
    }
}

#[test]
fn empty_method_list_gives_empty_report() {
    let r = run_benchmark(&[], "eval", &eval_set(), None, &BenchSettings::default()).unwrap();
    assert!(r.rows.is_empty() && r.instances.is_empty());
}

#[test]
fn successes_pass_recheck_and_rates_are_exact() {
    let r = report(false);
    assert_eq!(r.instances.len(), 16 * METHODS.len());
    for i in &r.instances {
        if i.success {
            assert!(i.verified, "{i:?}");
        }
    }
    for row in &r.rows {
        let mine: Vec<_> = r
            .instances
            .iter()
            .filter(|i| i.method == row.method)
            .collect();
        let ok: Vec<_> = mine.iter().filter(|i| i.success).collect();
        assert_eq!(row.instances, mine.len());
        assert_eq!(row.success_rate, ok.len() as f64 / mine.len() as f64);
        let mean = ok.iter().map(|i| i.control_cost.unwrap()).sum::<f64>() / ok.len() as f64;
        assert!((row.mean_control_cost.unwrap() - mean).abs() <= 1e-12 * mean.abs());
    }
}

#[test]
fn serial_and_parallel_agree_except_timing() {
    let a = report(true);
    let b = report(false);
    let strip = |r: &BenchReport| r.instances.iter().map(without_timing).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn implicit_descent_improves_on_uniform() {
    let data = eval_set();
    let r = report(false);
    let w_t = data[0].instance.w_t();
    let loss = |i: &InstanceResult| i.control_cost.unwrap() + w_t * i.trajectory_time.unwrap();
    let mut compared = 0;
    let mut better = 0;
    for k in 0..data.len() {
        let get = |name: &str| {
            r.instances
                .iter()
                .find(|i| i.instance == k && i.method == name)
                .unwrap()
        };
        let (u, imp) = (get("uniform+scale"), get("optimize_implicit"));
        if u.success && imp.success {
            compared += 1;
            if loss(imp) <= loss(u) * (1.0 + 1e-9) {
                better += 1;
            }
        }
    }
    assert!(compared > 0);
    assert!(
        better as f64 >= 0.9 * compared as f64,
        "{better}/{compared}"
    );
}

#[test]
fn network_is_faster_than_finite_differences() {
    let r = report(true);
    let row = |name: &str| r.rows.iter().find(|x| x.method == name).unwrap().clone();
    let net = row("allocnet(alpha=0.5)");
    let fd = row("optimize_fd");
    assert!(net.mean_comp_time_ms.unwrap() < fd.mean_comp_time_ms.unwrap());
}

#[test]
fn summary_means_exclude_failures() {
    let mk = |success, cost| InstanceResult {
        method: "m".into(),
        instance: 0,
        segments: 1,
        predicted_segments: None,
        success,
        verified: success,
        max_violation: None,
        control_cost: cost,
        trajectory_time: cost,
        iterations: 0,
        solves: 1,
        scalings: 0,
        comp_time_ms: 1.0,
        infer_ms: None,
        solve_ms: None,
    };
    let rows = summarize(
        "d",
        &[Method::Uniform],
        &[
            InstanceResult {
                method: "uniform+scale".into(),
                ..mk(true, Some(2.0))
            },
            InstanceResult {
                method: "uniform+scale".into(),
                ..mk(false, None)
            },
        ],
    );
    assert_eq!(rows[0].success_rate, 0.5);
    assert_eq!(rows[0].mean_control_cost, Some(2.0));
}

#[test]
fn feasible_branch_count_matches_optimal_statuses() {
    let data = generate_dataset(303, 12, &DatasetConfig::default()).unwrap();
    let mut m = AllocModel::new(3, 6, 3, &[8], 10.0, 4).unwrap();
    // Median reference duration: some samples land on each side.
    let mut all: Vec<f64> = data.iter().flat_map(|r| r.t_ref.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    m.set_duration_bias(all[all.len() / 2]);
    let cfg = TrainingConfig::default();
    let batch: Vec<&DatasetRecord> = data.iter().collect();
    let res = batch_gradient(&m, &batch, &cfg, &Serial).unwrap();
    let feasible = res
        .samples
        .iter()
        .filter(|s| s.branch == Branch::Feasible)
        .count();
    let optimal = batch
        .iter()
        .zip(&res.predictions)
        .filter(|(r, p)| {
            let t = &p.durations[..r.num_segments()];
            t.iter().all(|&v| v >= trajalloc_core::T_MIN)
                && evaluate(&r.instance, t, &cfg.qp, &NoClock)
                    .unwrap()
                    .solution
                    .status
                    == QpStatus::Optimal
        })
        .count();
    assert_eq!(feasible, optimal);
    assert!(feasible > 0 && feasible < batch.len(), "{feasible}");
}
