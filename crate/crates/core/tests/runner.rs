use std::fs;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;

use gradflux_core::profile::Domain;
use gradflux_core::runner::{check_run_dir, parse_config, run_scenario, InitialSpec, RunConfig, Solver};

const BIN: &str = env!("CARGO_BIN_EXE_gradflux");

fn config(text: &str) -> RunConfig {
    parse_config(text).unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn identical_configs_give_byte_identical_csvs() {
    let cfg = config("scenario = det\nflux = burgers,burgers+poly:0.25\ninitial = sine:0.5\nt_end = 0.2\ndx = 0.005\nh = 0.02\n");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_scenario(&cfg, a.path(), 1).unwrap();
    run_scenario(&cfg, b.path(), 4).unwrap();
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    assert!(fa.len() >= 22);
    assert_eq!(fa, fb);
}

#[test]
fn constant_data_both_solvers_agree() {
    let cfg = config("scenario = flat\nflux = burgers,burgers_plus_1\ninitial = constant:0.3\nt_end = 0.5\nsolver = both\n");
    let dir = tempfile::tempdir().unwrap();
    let summary = run_scenario(&cfg, dir.path(), 2).unwrap();
    let pw = summary.pairwise.unwrap();
    assert_eq!(pw.len(), 11);
    assert!(pw.iter().all(|&(_, d)| d <= 1e-12));
    assert!(summary.reports.iter().all(|r| r.flags.all()));
}

#[test]
fn example11_discriminator_scenario() {
    let cfg = config("scenario = example11_discriminator\nflux = burgers,burgers_plus_1\ninitial = example11\nh = 0.01\nt_end = 0.5\n");
    let dir = tempfile::tempdir().unwrap();
    let summary = run_scenario(&cfg, dir.path(), 2).unwrap();
    let d = summary.discriminator.unwrap();
    assert!(d.semigroup_theta_clear && d.control_theta_raised && d.distance_positive_growing);
    for f in ["config.txt", "manifest.json", "diagnostics.json", "summary.txt", "events_semi.jsonl", "events_control.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
}

#[test]
fn viscous_convergence_table_decreases() {
    let cfg = config(
        "scenario = viscous_convergence\nflux = burgers,burgers_plus_1\ninitial = riemann:1,-1\ndomain = bounded\n\
         h = 0.02\ndx = 0.0025\nepsilon = 2e-3\ndelta = 2e-3\nt_end = 0.2\nlevels = 3\n",
    );
    let dir = tempfile::tempdir().unwrap();
    let table = run_scenario(&cfg, dir.path(), 3).unwrap().convergence.unwrap();
    assert_eq!(table.len(), 3);
    assert!(table.windows(2).all(|w| w[1].l1 < w[0].l1));
    assert_eq!(table[2].dx, 0.0025);
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(dir.path().join("visc_meta.json").is_file());
}

#[test]
fn check_reproduces_stored_diagnostics() {
    let cfg = config("scenario = chk\nflux = burgers,burgers_plus_1\ninitial = riemann:1,0\ndomain = bounded\nt_end = 0.3\n");
    let dir = tempfile::tempdir().unwrap();
    let ran = run_scenario(&cfg, dir.path(), 1).unwrap();
    let checked = check_run_dir(dir.path()).unwrap();
    assert_eq!(ran.reports.len(), checked.reports.len());
    for (a, b) in ran.reports.iter().zip(&checked.reports) {
        assert_eq!(a.flags, b.flags);
        for (p, q) in a.series.iter().zip(&b.series) {
            assert_eq!(p.t, q.t);
            assert!((p.tv - q.tv).abs() <= 1e-9);
            assert_eq!(p.plateau_count, q.plateau_count);
        }
    }
}

#[test]
fn embedded_solution_rejects_wrong_shape() {
    let cfg = config("scenario = example11_discriminator\nflux = burgers,burgers_plus_1\ninitial = sine:0.5\nt_end = 0.1\n");
    let dir = tempfile::tempdir().unwrap();
    let err = run_scenario(&cfg, dir.path(), 1).unwrap_err();
    assert!(err.to_string().contains("bounded"), "{err}");
}

#[test]
fn cli_run_honours_out_and_env() {
    let work = tempfile::tempdir().unwrap();
    let cfg_path = work.path().join("r.cfg");
    fs::write(&cfg_path, "scenario = cli_demo\nflux = burgers,burgers_plus_1\ninitial = riemann:1,-1\ndomain = bounded\nt_end = 0.1\nsolver = semigroup\n").unwrap();
    let env_root = work.path().join("from_env");
    let out = Command::new(BIN).arg("run").arg(&cfg_path).env("GRADFLUX_OUT", &env_root).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(env_root.join("cli_demo/summary.txt").is_file());

    let flag_root = work.path().join("from_flag");
    let out = Command::new(BIN)
        .args(["run", cfg_path.to_str().unwrap(), "--jobs", "2", "--out", flag_root.to_str().unwrap()])
        .env("GRADFLUX_OUT", &env_root)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(flag_root.join("cli_demo/semi_t0.100000.csv").is_file());

    let out = Command::new(BIN).arg("check").arg(flag_root.join("cli_demo")).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("tv_nonincreasing ok"));
}

#[test]
fn cli_riemann_prints_fan() {
    let out = Command::new(BIN).args(["riemann", "--ul", "1", "--ur", "-1", "--flux", "burgers,burgers_plus_1"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("flux used: g"));
    assert!(text.contains("shock"));

    let out = Command::new(BIN).args(["riemann", "--ul", "-1", "--ur", "1", "--json"]).output().unwrap();
    let fan: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fan["waves"].as_array().unwrap().len(), 40);
}

#[test]
fn cli_reports_config_errors() {
    let work = tempfile::tempdir().unwrap();
    let cfg_path = work.path().join("bad.cfg");
    fs::write(&cfg_path, "scenario = x\nflux = burgers,burgers_plus_1\ninitial = constant:0\nt_end = -1\n").unwrap();
    let out = Command::new(BIN).arg("run").arg(&cfg_path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("t_end"));
}

fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    lo..hi
}

fn initial_spec() -> impl Strategy<Value = InitialSpec> {
    prop_oneof![
        finite(-2.0, 2.0).prop_map(InitialSpec::Constant),
        finite(-1.0, 1.0).prop_map(InitialSpec::Sine),
        (finite(-2.0, 2.0), finite(-2.0, 2.0), finite(-0.9, 0.9)).prop_map(|(ul, ur, x0)| InitialSpec::Riemann { ul, ur, x0 }),
    ]
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(
        initial in initial_spec(),
        eps in 1e-4f64..1e-1,
        delta in 1e-4f64..1e-1,
        dx in 1e-4f64..1e-1,
        cfl in 0.05f64..0.9,
        h in 1e-3f64..0.5,
        t_end in 0.01f64..2.0,
        fracs in prop::collection::vec(0.0f64..1.0, 0..6),
        levels in 1usize..5,
        solver in prop_oneof![Just(Solver::Viscous), Just(Solver::Semigroup), Just(Solver::Both)],
        with_out in any::<bool>(),
    ) {
        let domain = match initial {
            InitialSpec::Riemann { .. } => Domain::Bounded { x_min: -1.0, x_max: 1.0 },
            _ => Domain::Periodic { period: 1.0 },
        };
        let cfg = RunConfig {
            scenario: "prop".into(),
            domain,
            initial,
            flux_f: "burgers".into(),
            flux_g: "poly:1,0,0.5".into(),
            solver,
            epsilon: eps,
            delta,
            dx,
            cfl,
            h,
            t_end,
            snapshots: fracs.iter().map(|f| f * t_end).collect(),
            levels,
            out: with_out.then(|| "some/dir".into()),
        };
        prop_assume!(cfg.validate().is_ok());
        prop_assert_eq!(parse_config(&cfg.serialize()).unwrap(), cfg);
    }
}
