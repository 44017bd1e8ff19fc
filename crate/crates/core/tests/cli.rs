use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gni(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gni"));
    cmd.args(args).env_remove("GNI_NEWTON_TOL");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn long_replay_writes_every_node() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let o = gni(&["simulate", "--config", config("turntable_ball_long.cfg").to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,t,x,y,w1,w2,w3,energy,constraint_res,newton_iters");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10_001);
    assert!(rows[10_000].starts_with("10000,"));
    let first: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(first[2], "1.0000000000000000e0");
    // energy 1/2 m |v|^2 + 1/2 I |w|^2 with v = (1, 1), w = (0, 2, 0)
    let e: f64 = first[7].parse().unwrap();
    assert!((e - 7.0 / 3.0).abs() < 1e-12);
    assert!(String::from_utf8_lossy(&o.stdout).contains("10000 steps"));
}

#[test]
fn lie_suite_reports_each_invariant() {
    let o = gni(&["check", "--suite", "lie", "--seed", "7"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert!(text.lines().all(|l| l.starts_with("PASS lie/")));
}

#[test]
fn sweep_prints_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("conv.csv");
    let o = gni(
        &["sweep", "--config", config("particle_rattle_sweep.cfg").to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[],
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("slopes: position 2.0"));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "h,err_pos,err_vel,err_energy");
    assert_eq!(text.lines().filter(|l| l.starts_with("# slope_")).count(), 3);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.cfg", "[system]\nname = chaplygin\n[run]\nh = 0.1\nh_list = 0.1, 0.05, 0.01\n");
    let o = gni(&["simulate", "--config", bad.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());

    let typo = write(dir.path(), "typo.cfg", "[system]\nname = chaplygin\nmas = 2\n[integrator]\nname = chaplygin_gni\n[run]\nh = 0.1\nN = 1\n");
    let o = gni(&["simulate", "--config", typo.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let o = gni(&["simulate", "--config", dir.path().join("missing.cfg").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = gni(&["check", "--suite", "everything"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = gni(&["simulate", "--config", config("turntable_ball.cfg").to_str().unwrap()], &[("GNI_NEWTON_TOL", "-3")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "off.cfg",
        "[system]\nname = constrained_2d\n[integrator]\nname = rattle\n[run]\nh = 0.1\nN = 10\np0 = 1, 1\n",
    );
    let o = gni(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o.csv").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("violates the constraints"));
}

#[test]
fn newton_failure_keeps_partial_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.csv");
    let cfg = config("turntable_ball.cfg");
    // a single Newton iteration cannot reach this tolerance
    let o = gni(
        &["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[("GNI_NEWTON_TOL", "1e-300")],
    );
    assert_eq!(o.status.code(), Some(1));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().count() >= 2, "header and the initial node");
}

#[test]
fn stdout_output_when_no_path_is_given() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "short.cfg",
        "[system]\nname = nonholonomic_particle\n[integrator]\nname = euler_a\n[run]\nh = 0.1\nN = 3\n",
    );
    let o = gni(&["simulate", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "step,t,q1,q2,q3,p1,p2,p3,lambda1,energy,constraint_res,newton_iters");
    assert_eq!(text.lines().count(), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("euler_a: 3 steps"));
}

#[test]
fn adjoint_command_passes_on_bundled_config() {
    let o = gni(&["adjoint", "--config", config("particle_adjoint.cfg").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().filter(|l| l.starts_with("PASS")).count(), 3);
}
