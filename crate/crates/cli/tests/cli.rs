use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const FAST: [&str; 4] = ["--set", "numerics.grid_n=801", "--set", "numerics.sim.horizon=2"];

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infolqg"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_writes_value_table_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[&["solve"][..], &FAST].concat(), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["schema_version"], "infolqg/1");
    assert_eq!(summary["config"]["numerics"]["grid_n"], 801);
    let csv = std::fs::read_to_string(dir.path().join("value.csv")).unwrap();
    assert_eq!(csv.lines().count(), 802);
}

#[test]
fn invalid_configs_exit_with_two_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--set", "model.sigma1=0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.sigma1"), "{}", stderr(&o));

    let o = run(&["solve", "--set", "numerics.grid_n=10"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("numerics.grid_n"), "{}", stderr(&o));

    let o = run(&["solve", "--set", "model.typo=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let o = run(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"model": {"sigma2": 0.5}, "numerics": {"grid_n": 401}}"#).unwrap();
    let o = run(
        &[
            "equilibrium",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "model.sigma2=0.7",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let eq = json(&dir.path().join("equilibrium.json"));
    assert_eq!(eq["config"]["model"]["sigma2"].as_f64(), Some(0.7));
    assert_eq!(eq["config"]["numerics"]["grid_n"], 401);
    let g = eq["gamma_eq"].as_f64().unwrap();
    assert!(g > 0.0 && g < eq["gamma_inf"].as_f64().unwrap());
}

#[test]
fn canonical_equilibrium_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["equilibrium"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let eq = json(&dir.path().join("equilibrium.json"));
    assert!((eq["gamma_eq"].as_f64().unwrap() - 0.38733045062398985).abs() < 1e-10);
    assert!((eq["h_eq"].as_f64().unwrap() - 0.502011544919802).abs() < 1e-9);
    assert!(eq["jacobian_det"].as_f64().unwrap() < 0.0);
}

#[test]
fn sensitivity_reports_kappa_value_as_unasserted() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sensitivity", "--params", "kappa,sigma2_sq"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("sensitivity.json")).unwrap();
    assert!(text.contains("unasserted"));
    assert!(!text.contains("FAIL"));

    let o = run(&["sensitivity", "--params", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible_and_dumps_requested_paths() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        &[
            "simulate",
            "--policy",
            "optimal",
            "--dump",
            "3",
            "--set",
            "numerics.sim.n_paths=100",
        ][..],
        &FAST,
    ]
    .concat();
    for dir in [&a, &b] {
        let o = run(&args, dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<String> = std::fs::read_dir(a.path().join("paths"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["optimal_0000.csv", "optimal_0001.csv", "optimal_0002.csv"]);
    for n in &names {
        let x = std::fs::read(a.path().join("paths").join(n)).unwrap();
        let y = std::fs::read(b.path().join("paths").join(n)).unwrap();
        assert_eq!(x, y, "{n} differs between runs");
    }
    let (ja, jb) = (json(&a.path().join("mc.json")), json(&b.path().join("mc.json")));
    assert_eq!(ja["estimates"], jb["estimates"]);
    let header = std::fs::read_to_string(a.path().join("paths/optimal_0000.csv")).unwrap();
    assert!(header.starts_with("t,X,mu,m,gamma,u,h\n"));
}

#[test]
fn simulate_rejects_unknown_policy() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--policy", "psychic"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn curves_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["curves", "--set", "numerics.grid_n=801", "--set", "curves.horizon=4"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = |name: &str| -> Vec<Vec<f64>> {
        std::fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let feedback = rows("feedback.csv");
    assert_eq!(feedback.len(), 801);
    assert!(feedback.windows(2).all(|w| w[1][1] >= w[0][1]));
    for r in rows("comparison.csv") {
        assert!(r[1] <= r[2] + 1e-9, "v above v_no at {}", r[0]);
    }
    let traj = rows("trajectories.csv");
    assert_eq!(traj.len(), 4 * 401);
    for r in &traj {
        assert!(r[1] <= r[2] + 1e-12);
    }
}
