use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn schlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schlab")).args(args).env_remove("SCHLAB_THREADS").output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = "seed = 11\n[sim]\nmodes = 16\ngrid = 32\ndt = 1e-3\nhorizon = 0.02\nstride = 2\n";

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let outs: Vec<_> = ["a", "b"]
        .iter()
        .map(|sub| {
            let out = dir.path().join(sub);
            let o = schlab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();
    for f in ["simulate.jsonl", "simulate.trajectory.jsonl", "simulate.summary.txt"] {
        let a = fs::read(outs[0].join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, fs::read(outs[1].join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(schlab(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(schlab(&["simulate", "--config", &cfg, "--seed", "12", "--out", b.to_str().unwrap()]).status.success());
    assert_ne!(
        fs::read(a.join("simulate.trajectory.jsonl")).unwrap(),
        fs::read(b.join("simulate.trajectory.jsonl")).unwrap()
    );
}

#[test]
fn unstable_step_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[sim]\nspec = { kind = \"power\", alpha = 2.0 }\nn = 8\ndt = 0.01\n");
    let o = schlab(&["verify-all", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:4:") && err.contains("stability cap"), "{err}");
    assert!(!dir.path().join("o").exists(), "nothing may run before validation");
}

#[test]
fn truncated_config_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cut.toml", "seed = 1\n[sampler]\nn_grid = [2, 8,");
    let o = schlab(&["linear-check", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("cut.toml") && err.contains("line 3"), "{err}");
}

#[test]
fn unknown_subcommand_is_rejected() {
    assert_eq!(schlab(&["no-such-thing"]).status.code(), Some(2));
}
