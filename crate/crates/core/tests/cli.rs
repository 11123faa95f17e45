use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use vilab::analysis::{fit_rate_series_floor, DIST_FLOOR};
use vilab::cli::{parse_csv, Row, EXIT_CONFIG, EXIT_NUMERIC};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn vilab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vilab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_config(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = vilab(&args);
    o.status.code().expect("exit code")
}

fn load(out: &Path) -> (Vec<Row>, Value) {
    let rows = parse_csv(&std::fs::read_to_string(out.join("trace.csv")).unwrap()).unwrap();
    let summary = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    (rows, summary)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

fn check_rate_fit(rows: &[Row], summary: &Value, floor: f64) {
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.l2_dist).collect();
    let fit = &summary["rate_fit"];
    let w = &fit["best"]["window"];
    let window = (w[0].as_f64().unwrap(), w[1].as_f64().unwrap());
    let again = fit_rate_series_floor(&t, &d, Some(window), None, floor).unwrap();
    for (mine, theirs) in again.fits.iter().zip(fit["fits"].as_array().unwrap()) {
        let p = theirs["params"].as_array().unwrap();
        assert!(close(mine.params[0], p[0].as_f64().unwrap()), "{mine:?} vs {theirs}");
        assert!(close(mine.params[1], p[1].as_f64().unwrap()), "{mine:?} vs {theirs}");
        assert!(close(mine.residual, theirs["residual"].as_f64().unwrap()));
    }
}

#[test]
fn flow_energy_is_monotone_and_fit_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("flow");
    assert_eq!(run_config("flow", &configs().join("flow.toml"), &out, &["--no-timing"]), 0);
    let (rows, summary) = load(&out);
    assert!(rows.len() > 100);
    for w in rows.windows(2) {
        assert!(w[1].energy <= w[0].energy + 1e-12, "{:?} -> {:?}", w[0], w[1]);
        assert!(w[1].t > w[0].t);
    }
    assert_eq!(summary["rate_fit"]["best"]["model"], "exponential");
    check_rate_fit(&rows, &summary, f64::MIN_POSITIVE);
    assert!(summary["wall_ms"].is_null());
}

#[test]
fn ode_fit_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ode");
    assert_eq!(run_config("ode", &configs().join("ode.toml"), &out, &["--no-timing"]), 0);
    let (rows, summary) = load(&out);
    assert_eq!(summary["rate_fit"]["best"]["model"], "logarithmic");
    check_rate_fit(&rows, &summary, DIST_FLOOR);
}

#[test]
fn loja_is_deterministic_and_summary_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = configs().join("loja.toml");
    assert_eq!(run_config("loja", &cfg, &a, &["--no-timing", "--seed", "11"]), 0);
    assert_eq!(run_config("loja", &cfg, &b, &["--no-timing", "--seed", "11"]), 0);
    for f in ["trace.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let (rows, summary) = load(&a);
    let rep = &summary["loja_report"];
    let gamma = rep["gamma"].as_f64().unwrap();
    let lhs = |g: f64| {
        if g >= 1.0 {
            g.sqrt()
        } else if g > 0.0 {
            g.powf(1.0 - gamma)
        } else {
            0.0
        }
    };
    let c = rows
        .iter()
        .filter(|r| r.k_norm > 1e-13)
        .map(|r| lhs(r.energy) / r.k_norm)
        .fold(0.0f64, f64::max);
    assert!(close(c, rep["c_fit"].as_f64().unwrap()), "{c} vs {}", rep["c_fit"]);
    assert_eq!(rows.len() as u64, rep["n_samples"].as_u64().unwrap());
}

#[test]
fn epi_worst_epsilon_is_positive_and_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("epi");
    assert_eq!(run_config("epi", &configs().join("epi.toml"), &out, &["--no-timing"]), 0);
    let (rows, summary) = load(&out);
    let rep = &summary["epi_report"];
    let worst = rep["worst_epsilon"].as_f64().unwrap();
    assert!(worst > 0.0);
    let min = rows.iter().map(|r| r.k_norm).filter(|v| !v.is_nan()).fold(f64::INFINITY, f64::min);
    assert!(close(worst, min));
    let trivial = rows.iter().filter(|r| r.k_norm.is_nan()).count() as u64;
    assert_eq!(trivial, rep["n_trivial"].as_u64().unwrap());
}

#[test]
fn stationary_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("st");
    assert_eq!(run_config("stationary", &configs().join("stationary.toml"), &out, &["--no-timing"]), 0);
    let (rows, summary) = load(&out);
    assert_eq!(rows.len(), 1);
    assert!(summary["stationary"]["sup_error"].as_f64().unwrap() < 1e-3);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(run_config("flow", &dir.path().join("missing.toml"), &out, &[]), EXIT_CONFIG);
    assert_eq!(vilab(&["flow"]).status.code(), Some(EXIT_CONFIG));

    let text = std::fs::read_to_string(configs().join("flow.toml")).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, format!("{text}\nbogus = 3\n")).unwrap();
    let o = vilab(&["flow", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    // config for a different command
    let o = vilab(&["epi", "--config", configs().join("flow.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn numerical_failure_exits_with_two_and_flushes() {
    let dir = tempfile::tempdir().unwrap();
    // the proximal step loses convexity for dt ≥ 1/λ on the sphere
    let cfg = dir.path().join("hard.toml");
    std::fs::write(
        &cfg,
        r#"schema = 1
command = "flow"

[grid]
kind = "circle"
n = 64

[flow]
energy = { variant = "sphere_obstacle", lambda = 4.0 }
initial = { kind = "modes", offset = 0.1, modes = [[1, 0.3, 0.0], [5, 0.2, 0.1]] }
dt = 1.0
t_end = 10.0
"#,
    )
    .unwrap();
    let out = dir.path().join("hard");
    assert_eq!(run_config("flow", &cfg, &out, &["--no-timing"]), EXIT_NUMERIC);
    let (rows, summary) = load(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].t, 0.0);
    assert!(summary["error"].as_str().unwrap().contains("time step"));
}
