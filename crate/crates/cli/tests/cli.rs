use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcf")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_for_every_subcommand() {
    for sub in ["train", "eval", "demo", "plot-data", "arena-check"] {
        let o = mcf(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{sub}");
    }
    assert_eq!(code(&mcf(&["--help"])), 0);
}

#[test]
fn arena_check_builtins_and_bad_input() {
    for name in ["open", "scattered", "wall_gaps", "dead_end", "corridor", "unseen"] {
        let o = mcf(&["arena-check", name]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&mcf(&["arena-check", "no_such_arena"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"bounds\": [0, 0, 5, 5],\n  \"oops\": 1\n}").unwrap();
    let o = mcf(&["arena-check", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, "{\"sac\": {\"gama\": 0.9}}").unwrap();
    let out = dir.path().join("out");
    let o = mcf(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gama"));

    let missing = dir.path().join("missing.json");
    assert_eq!(code(&mcf(&["eval", "--config", s(&missing), "--out", s(&out), "--methods", "prior"])), 2);
    assert_eq!(code(&mcf(&["train", "--out", s(&out), "--mode", "bogus"])), 2);
}

#[test]
fn missing_bundle_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&mcf(&["eval", "--out", s(&out), "--methods", "mcf"])), 2);
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(code(&mcf(&["eval", "--out", s(&out), "--bundle", s(&empty)])), 2);
    assert_eq!(code(&mcf(&["demo", "--out", s(&out), "--bundle", s(&empty)])), 2);
    assert_eq!(code(&mcf(&["plot-data", "--run", s(&empty), "--out", s(&out)])), 2);
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"sac": {"lr": 1e150, "warmup_steps": 64, "batch_size": 32}, "train": {"seeds": [0]}}"#).unwrap();
    let out = dir.path().join("out");
    let o = mcf(&["train", "--config", s(&cfg), "--out", s(&out), "--steps", "3000", "--arenas", "open"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("diverge"), "{manifest}");
}

#[test]
fn train_eval_demo_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = mcf(&["train", "--out", s(&run), "--mode", "mcf,e2e", "--seeds", "0,1", "--steps", "4000", "--arenas", "open"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for m in ["mcf", "e2e"] {
        for f in ["manifest.json", "aggregate.csv", "member_00/actor.ckpt", "member_01/curve.csv"] {
            assert!(run.join(m).join(f).is_file(), "{m}/{f}");
        }
    }
    assert!(run.join("config.json").is_file());

    let ev = dir.path().join("eval");
    let o = mcf(&["eval", "--out", s(&ev), "--bundle", s(&run.join("mcf")), "--episodes", "2", "--env", "open"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(ev.join("report.json")).unwrap();
    assert!(report.contains("\"SPL\"") && report.contains("config_hash"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("| method | env | SPL |"));

    let demo = dir.path().join("demo");
    let o = mcf(&["demo", "--out", s(&demo), "--bundle", s(&run.join("mcf")), "--arena", "open", "--trace"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(demo.join("trace.jsonl")).unwrap();
    assert!(trace.lines().count() >= 2);
    assert!(fs::read_to_string(demo.join("trajectory.csv")).unwrap().starts_with("# mcf "));

    let plots = dir.path().join("plots");
    let o = mcf(&["plot-data", "--run", s(&run), "--out", s(&plots)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let curves = fs::read_to_string(plots.join("curves.csv")).unwrap();
    assert!(curves.lines().any(|l| l.starts_with("mcf,member_00,0,")));
    assert!(curves.lines().any(|l| l.starts_with("e2e,member_01,1,")));
    let alpha = fs::read_to_string(plots.join("alpha_schedule.csv")).unwrap();
    assert_eq!(alpha.lines().filter(|l| !l.starts_with('#')).count(), 102);
}

#[test]
fn nothing_written_outside_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("only_here");
    let o = Command::new(env!("CARGO_BIN_EXE_mcf"))
        .current_dir(dir.path())
        .args(["demo", "--out", s(&out), "--arena", "open", "--trace"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec![std::ffi::OsString::from("only_here")]);
}
