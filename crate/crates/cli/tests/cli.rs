use std::process::Command;

fn pilepick(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pilepick")).args(args).output().expect("binary runs")
}

#[test]
fn eval_is_deterministic_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = pilepick(&[
            "eval", "--policy", "heuristic", "--piles", "5", "--seed", "7", "--settle-time", "0.3", "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("# pilepick-benchmark"));
    let svg = dir.path().join("plot.svg");
    let o = pilepick(&["plot", a.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(svg).unwrap().contains("<rect"));
}

#[test]
fn replay_of_fresh_log_matches() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("ep.json");
    let f = f.to_str().unwrap();
    assert!(pilepick(&["replay", f, "--record", "--seed", "3", "--objects", "3"]).status.success());
    let o = pilepick(&["replay", f]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "MATCH");
}

#[test]
fn exit_codes() {
    assert_eq!(pilepick(&["train", "--config", "missing.cfg", "--out", "x"]).status.code(), Some(1));
    assert_eq!(pilepick(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pilepick(&["eval", "--policy", "teleport"]).status.code(), Some(1));
    assert_eq!(pilepick(&["replay", "does/not/exist.json"]).status.code(), Some(2));
    assert_eq!(pilepick(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_writes_log_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "variant = raw-only\nbatch = 4\nupdates = 6\nobjects = 2\nsettle_time = 0.2\n").unwrap();
    let out = dir.path().join("run");
    let o = pilepick(&[
        "train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--set", "replay_ratio=2",
        "--seed", "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let saved = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(saved.contains("replay_ratio = 2") && saved.contains("seed = 5"));
    assert!(out.join("final.ckpt").exists());
    assert!(std::fs::read_to_string(out.join("train_log.csv")).unwrap().starts_with("# pilepick-train-log"));
    let bad = pilepick(&["train", "--out", out.to_str().unwrap(), "--set", "colour=red"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn gen_piles_and_map_demo() {
    let dir = tempfile::tempdir().unwrap();
    let o = pilepick(&["gen-piles", "--count", "2", "--objects", "3", "--seed", "11", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(dir.path().join("pile_000011.json").exists() && dir.path().join("pile_000012.json").exists());
    let map = dir.path().join("map.json");
    let o = pilepick(&["map-demo", "--objects", "3", "--seed", "11", "--out", map.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("body,category"));
    assert!(std::fs::read_to_string(map).unwrap().contains("pilepick-map"));
}
