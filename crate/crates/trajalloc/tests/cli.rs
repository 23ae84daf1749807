use std::path::Path;
use std::process::{Command, Output};

use trajalloc::cli::{Params, Resolved, OUT_DIR_ENV};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajalloc"))
        .args(args)
        .current_dir(dir)
        .env_remove(OUT_DIR_ENV)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        bin(dir.path(), &["plan", "--frobnicate"]).status.code(),
        Some(2)
    );
    assert_eq!(bin(dir.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn invalid_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(dir.path(), &["gen-data", "--kappa", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kappa"));
    assert_eq!(
        bin(dir.path(), &["gen-data", "--alpha", "1.5"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_input_is_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(
        dir.path(),
        &["plan", "--instance", "nope.jsonl", "--method", "implicit"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_data_then_plan_each_method() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(
        dir.path(),
        &[
            "gen-data",
            "--count",
            "4",
            "--seed",
            "2",
            "--instances",
            "inst.jsonl",
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(dir.path().join("out/dataset.jsonl").exists());
    for method in ["uniform", "fd", "implicit"] {
        let traj = format!("{method}.csv");
        let o = bin(
            dir.path(),
            &[
                "plan",
                "--instance",
                "inst.jsonl",
                "--method",
                method,
                "--out",
                &traj,
            ],
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{method}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let csv = std::fs::read_to_string(dir.path().join(&traj)).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,x,y,z,vx,vy,vz,ax,ay,az"));
        assert!(lines.count() > 10);
        assert!(stdout(&o).contains("min control"));
    }
    let o = bin(
        dir.path(),
        &["plan", "--instance", "inst.jsonl", "--method", "allocnet"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_and_plan_with_model() {
    let dir = tempfile::tempdir().unwrap();
    let ok = |o: Output| {
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        )
    };
    ok(bin(
        dir.path(),
        &[
            "gen-data",
            "--count",
            "12",
            "--seed",
            "4",
            "--instances",
            "inst.jsonl",
        ],
    ));
    ok(bin(
        dir.path(),
        &[
            "train",
            "--data",
            "out/dataset.jsonl",
            "--epochs",
            "3",
            "--hidden",
            "8",
            "--serial",
        ],
    ));
    let log = std::fs::read_to_string(dir.path().join("out/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let o = bin(
        dir.path(),
        &[
            "plan",
            "--instance",
            "inst.jsonl",
            "--method",
            "allocnet",
            "--model",
            "out/model.json",
        ],
    );
    // An untrained model may fail to find a trajectory, but never crashes.
    assert!(matches!(o.status.code(), Some(0) | Some(1)));
}

#[test]
fn gradcheck_reports_summary_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(dir.path(), &["gradcheck", "--n", "5", "--seed", "3"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("5/5 within tol"));
    assert!(dir.path().join("out/gradcheck.csv").exists());
}

#[test]
fn output_directory_from_environment_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_trajalloc"));
        c.args(["gen-data", "--count", "1"])
            .args(extra)
            .current_dir(dir.path());
        match env {
            Some(v) => c.env(OUT_DIR_ENV, v),
            None => c.env_remove(OUT_DIR_ENV),
        };
        assert!(c.output().unwrap().status.success());
    };
    run(&[], Some("from_env"));
    assert!(dir.path().join("from_env/dataset.jsonl").exists());
    run(&["--out-dir", "from_flag"], Some("from_env"));
    assert!(dir.path().join("from_flag/dataset.jsonl").exists());
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let file: Params = toml::from_str("w_t = 3.0\nalpha = 0.75\nhidden = [16, 8]\n").unwrap();
    let flags = Params {
        alpha: Some(0.35),
        ..Params::default()
    };
    let r = Resolved::merge(&flags, &file);
    assert_eq!(r.alpha, 0.35);
    assert_eq!(r.w_t, 3.0);
    assert_eq!(r.hidden, vec![16, 8]);
    assert_eq!(r.w_f, 1200.0);
    assert_eq!(r.d_m(), vec![4.0, 6.0]);
    assert!(toml::from_str::<Params>("bogus = 1").is_err());
}

#[test]
fn table_one_defaults() {
    let r = Resolved::default();
    assert_eq!((r.v_max, r.a_max, r.j_max, r.n_res), (4.0, 6.0, 8.0, 20));
    assert_eq!((r.w_f, r.w_t, r.w_s, r.lambda_p), (1200.0, 17.5, 20.0, 5.0));
    let four = Resolved {
        kappa: 4,
        ..Resolved::default()
    };
    assert_eq!(four.d_m(), vec![4.0, 6.0, 8.0]);
}

#[test]
fn config_file_is_read_by_binary() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "count = 2\nseed = 9\n").unwrap();
    let o = bin(dir.path(), &["--config", "c.toml", "gen-data"]);
    assert!(stdout(&o).contains("wrote 2 records"), "{}", stdout(&o));
    std::fs::write(dir.path().join("bad.toml"), "cuont = 2\n").unwrap();
    assert_eq!(
        bin(dir.path(), &["--config", "bad.toml", "gen-data"])
            .status
            .code(),
        Some(2)
    );
}
