use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_conplan");

/// Tiny model and a few training ticks, enough to exercise every command.
const SMALL: &str = r#"
[gen.scenarios.intersection]
agents = 0

[train]
epochs = 1
tick_stride = 60

[train.model]
head_hidden = 8

[train.model.encoder]
hidden = 8
embed = 8
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("CONPLAN_OUT").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn gen_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen", "--kind", "mixed", "--count", "4", "--seed", "11", "--out", s(d)]);
    }
    let fa = files(&a);
    assert_eq!(fa.len(), 4 + 2);
    assert_eq!(fa, files(&b));
}

#[test]
fn empty_suite_still_writes_a_manifest() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("g");
    ok(&["gen", "--count", "0", "--out", s(&out)]);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["count"], 0);
    assert_eq!(m["scenarios"].as_array().unwrap().len(), 0);
}

fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58476D1CE4E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[test]
fn manifest_seeds_follow_the_documented_derivation() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("g");
    ok(&["gen", "--count", "3", "--seed", "123", "--out", s(&out)]);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert!(m["seed_derivation"].as_str().unwrap().contains("splitmix64"));
    for (i, e) in m["scenarios"].as_array().unwrap().iter().enumerate() {
        let expected = mix(123u64.wrapping_add((i as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15)));
        assert_eq!(e["seed"].as_u64().unwrap(), expected);
        assert_eq!(e["index"], i);
        assert!(out.join(e["file"].as_str().unwrap()).exists());
    }
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    // usage errors
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--constraints", "speeding"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--out", s(&t.path().join("x"))]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    // validation errors
    let missing = t.path().join("nope");
    assert_eq!(run(&["train", "--suite", s(&missing), "--out", s(&t.path().join("y"))]).status.code(), Some(2));
    let bad = t.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepochz = 3\n").unwrap();
    let o = run(&["gen", "--config", s(&bad), "--out", s(&t.path().join("z"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochz"));
    // a non-empty output directory needs --force
    let g = t.path().join("g");
    ok(&["gen", "--count", "1", "--out", s(&g)]);
    assert_eq!(run(&["gen", "--count", "1", "--out", s(&g)]).status.code(), Some(2));
    ok(&["gen", "--count", "1", "--out", s(&g), "--force"]);
}

#[test]
fn flags_override_the_config_file_and_the_resolved_config_reloads() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.toml");
    std::fs::write(&cfg, "[gen]\ncount = 3\nseed = 5\nkind = \"jam\"\n").unwrap();
    let out = t.path().join("g");
    ok(&["gen", "--config", s(&cfg), "--count", "2", "--out", s(&out)]);
    let resolved = std::fs::read_to_string(out.join("config.toml")).unwrap();
    let v: toml::Value = toml::from_str(&resolved).unwrap();
    assert_eq!(v["gen"]["count"].as_integer(), Some(2));
    assert_eq!(v["gen"]["seed"].as_integer(), Some(5));
    assert_eq!(v["gen"]["kind"].as_str(), Some("jam"));
    // feeding the resolved config back reproduces the same suite
    let again = t.path().join("h");
    ok(&["gen", "--config", s(&out.join("config.toml")), "--out", s(&again)]);
    assert_eq!(files(&out), files(&again));
}

#[test]
fn pipeline_on_an_empty_intersection_suite() {
    let t = tempfile::tempdir().unwrap();
    let cfg = small_config(t.path());
    let suite = t.path().join("suite");
    ok(&["gen", "--config", s(&cfg), "--kind", "intersection", "--count", "2", "--seed", "3", "--out", s(&suite)]);

    let train = t.path().join("train");
    ok(&["train", "--config", s(&cfg), "--suite", s(&suite), "--constraints", "collision,out_of_map", "--out", s(&train)]);
    for f in ["checkpoint.json", "train_log.csv", "labels.jsonl", "config.toml"] {
        assert!(train.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(train.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,reward_loss,constraint_loss,wall_seconds\n"));

    let ckpt = train.join("checkpoint.json");
    let mut csvs = Vec::new();
    for tag in ["e1", "e2"] {
        let out = t.path().join(tag);
        let o = ok(&["eval", "--config", s(&cfg), "--suite", s(&suite), "--checkpoint", s(&ckpt), "--out", s(&out)]);
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.lines().nth(1).unwrap().starts_with("collision,out_of_map"));
        let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
        assert_eq!(m["collision_rate"], 0.0);
        assert_eq!(m["episodes"], 2);
        csvs.push(std::fs::read(out.join("metrics.csv")).unwrap());
        assert!(out.join("episodes.jsonl").exists());
    }
    assert_eq!(csvs[0], csvs[1]);

    let viz = t.path().join("viz");
    let episodes = t.path().join("e1").join("episodes.jsonl");
    ok(&["viz", "--episodes", s(&episodes), "--suite", s(&suite), "--scenario", "0000_intersection", "--out", s(&viz)]);
    let frames = viz.join("0000_intersection");
    assert!(frames.join("attention.json").exists());
    assert!(frames.join("frame_0009.svg").exists());
    assert!(!viz.join("0001_intersection").exists());
    assert_eq!(
        run(&["viz", "--episodes", s(&episodes), "--suite", s(&suite), "--scenario", "nope", "--out", s(&t.path().join("v2"))])
            .status
            .code(),
        Some(2)
    );
}
