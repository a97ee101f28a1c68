use std::path::Path;
use std::process::{Command, Output};

fn nnql(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnql")).args(args).current_dir(dir).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn stochastic_commands_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = nnql(dir.path(), &["simulate", "--env", "box", "--steps", "10"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn config_values_override_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("sim.toml"), "steps = 7\nseed = 2\n[env]\nname = \"ar1\"\nsigma = 0.1\n").unwrap();
    let out = nnql(p, &["simulate", "--config", "sim.toml", "--env", "box", "--steps", "100", "--out", "t.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(p.join("t.csv")).unwrap();
    // header, seven steps and the terminal row
    assert_eq!(text.lines().count(), 9);
    // the AR(1) chain starts at 0, the box at 0.5
    assert!(text.lines().nth(1).unwrap().starts_with("1,0,"));
}

#[test]
fn unknown_keys_and_bad_values_fail() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.toml"), "steps = 7\nseed = 2\ncolour = 1\n[env]\nname = \"box\"\n").unwrap();
    assert_eq!(code(&nnql(p, &["simulate", "--config", "bad.toml"])), 1);
    assert_eq!(code(&nnql(p, &["simulate", "--env", "maze", "--steps", "5", "--seed", "1"])), 1);
    assert_eq!(code(&nnql(p, &["fit-offline", "--trajectory", "missing.csv", "--gamma", "0.8", "--out", "o.csv"])), 1);
    assert_eq!(code(&nnql(p, &["rate-sweep", "--seed", "1"])), 1);
}

#[test]
fn sweep_cap_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let sim =
        nnql(p, &["simulate", "--env", "box", "--sigma", "0.1", "--steps", "500", "--seed", "1", "--out", "t.csv"]);
    assert_eq!(code(&sim), 0);
    let capped =
        nnql(p, &["fit-offline", "--trajectory", "t.csv", "--gamma", "0.9", "--max-sweeps", "2", "--out", "q.csv"]);
    assert_eq!(code(&capped), 2);
    assert!(p.join("q.csv").exists() && p.join("q.json").exists());
    let full = nnql(p, &["fit-offline", "--trajectory", "t.csv", "--gamma", "0.9", "--out", "q.csv"]);
    assert_eq!(code(&full), 0);
}

#[test]
fn online_resume_matches_single_pass() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(
        code(&nnql(
            p,
            &["simulate", "--env", "box", "--sigma", "0.1", "--steps", "800", "--seed", "5", "--out", "t.csv"]
        )),
        0
    );
    let full = std::fs::read_to_string(p.join("t.csv")).unwrap();
    let lines: Vec<&str> = full.lines().collect();
    // first 300 steps plus S_301 as the terminal row
    let mut head: Vec<String> = lines[..=300].iter().map(|l| l.to_string()).collect();
    let next: Vec<&str> = lines[301].split(',').collect();
    head.push(format!("{},{},,", next[0], next[1]));
    std::fs::write(p.join("head.csv"), head.join("\n") + "\n").unwrap();

    assert_eq!(code(&nnql(p, &["run-online", "--trajectory", "t.csv", "--gamma", "0.8", "--out", "one.csv"])), 0);
    assert_eq!(code(&nnql(p, &["run-online", "--trajectory", "head.csv", "--gamma", "0.8", "--out", "part.csv"])), 0);
    let resumed =
        nnql(p, &["run-online", "--trajectory", "t.csv", "--gamma", "0.8", "--resume", "part.csv", "--out", "two.csv"]);
    assert_eq!(code(&resumed), 0, "{}", String::from_utf8_lossy(&resumed.stderr));
    assert_eq!(std::fs::read(p.join("one.csv")).unwrap(), std::fs::read(p.join("two.csv")).unwrap());
    assert_eq!(std::fs::read(p.join("one.json")).unwrap(), std::fs::read(p.join("two.json")).unwrap());
}
