use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use naht_cli::commands::{self, EvalMode};
use naht_cli::config::RunConfig;

fn naht() -> Command {
    Command::new(env!("CARGO_BIN_EXE_naht"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn naht")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"{
    "env": {"name": "bitgame", "horizon": 5},
    "variant": "poam",
    "hyper": {"buffer_episodes": 6},
    "width": 8,
    "embed_dim": 4,
    "precision": "f64",
    "total_env_steps": 60,
    "checkpoint_every": 1,
    "eval_episodes": 3,
    "seeds": [4],
    "teammates": [
        {"id": "third", "kind": "bernoulli", "env": "bitgame/M3/obs9/act2/T5",
         "tags": ["train"], "params": {"policy": "bernoulli", "p": 0.3333333333333333}},
        {"id": "asym", "kind": "scripted", "env": "bitgame/M3/obs9/act2/T5",
         "tags": ["holdout"], "params": {"policy": "asymmetric_bits"}}
    ],
    "out_dir": "out"
}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn tiny_config(dir: &Path) -> PathBuf {
    let fp = RunConfig::from_json(TINY, "t").unwrap().env.spec().fingerprint();
    write_config(dir, &TINY.replace("bitgame/M3/obs9/act2/T5", &fp))
}

#[test]
fn lemmas_exit_zero_and_print_the_table() {
    let o = run(naht().arg("lemmas"));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("quantity,analytic,brute_force,abs_diff\n"));
    assert!(text.contains("shared_naht_argmax_is_1/3"));
}

#[test]
fn training_twice_gives_identical_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(naht().args(["train", "--quiet", "--config"]).arg(&cfg).arg("--out").arg(out));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a.join("seed4/metrics.csv")), read(&b.join("seed4/metrics.csv")));
    assert_eq!(read(&a.join("seed4/final.naht")), read(&b.join("seed4/final.naht")));
    let echo = |p: &Path| {
        let mut c = RunConfig::from_json(&std::fs::read_to_string(p.join("config.json")).unwrap(), "echo").unwrap();
        c.out_dir = PathBuf::new();
        c
    };
    assert_eq!(echo(&a), echo(&b));
    let metrics = String::from_utf8(read(&a.join("seed4/metrics.csv"))).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let checkpoints: Vec<_> = std::fs::read_dir(a.join("seed4/checkpoints"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "naht"))
        .collect();
    assert_eq!(checkpoints.len(), 3);
    let manifest: commands::RunManifest =
        serde_json::from_slice(&read(&a.join("manifest.json"))).unwrap();
    assert_eq!(manifest.config_sha256, commands::sha256_hex(&read(&a.join("config.json"))));
    assert_eq!(manifest.seeds.len(), 1);
    assert!(!a.join("manifest.json.tmp").exists());
}

#[test]
fn config_echo_reloads_to_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = run(naht().args(["train", "--quiet", "--config"]).arg(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = std::fs::read_to_string(dir.path().join("out/config.json")).unwrap();
    let original = RunConfig::load(&cfg).unwrap();
    assert_eq!(RunConfig::from_json(&echo, "echo").unwrap(), original);
}

#[test]
fn environment_overrides_seed_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("from_env");
    let o = run(naht()
        .args(["train", "--quiet", "--config"])
        .arg(&cfg)
        .env("NAHT_SEED", "9")
        .env("NAHT_OUT", &out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("seed9/final.naht").exists());
    assert!(!out.join("seed4").exists());
}

#[test]
fn unknown_key_is_reported_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("\"buffer_episodes\"", "\"buffer_episods\""));
    let o = run(naht().args(["train", "--config"]).arg(&cfg));
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("buffer_episods") && err.contains("line"), "{err}");
}

#[test]
fn missing_checkpoint_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = run(naht()
        .args(["eval", "--mode", "mn", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(dir.path().join("nope.naht")));
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("nope.naht") && !err.contains("panicked"), "{err}");
}

#[test]
fn mismatched_environment_is_refused_naming_both() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = run(naht().args(["train", "--quiet", "--config"]).arg(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = dir.path().join("out/seed4/final.naht");
    let other = dir.path().join("other");
    std::fs::create_dir_all(&other).unwrap();
    let mut c: serde_json::Value = serde_json::from_str(&TINY.replace("\"horizon\": 5", "\"horizon\": 7")).unwrap();
    c.as_object_mut().unwrap().remove("teammates");
    let cfg7 = write_config(&other, &c.to_string());
    let o = run(naht().args(["eval", "--mode", "mn", "--config"]).arg(&cfg7).arg("--checkpoint").arg(&ckpt));
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("T5") && err.contains("T7"), "{err}");
}

#[test]
fn eval_modes_write_reproducible_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(dir.path());
    let o = run(naht().args(["train", "--quiet", "--config"]).arg(&cfg_path));
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let seed_dir = dir.path().join("out/seed4");
    let fin = seed_dir.join("final.naht");

    let mn = commands::eval(&cfg, EvalMode::Mn, std::slice::from_ref(&fin), Some(5)).unwrap();
    let text = std::fs::read_to_string(&mn).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 5);
    let again = commands::eval(&cfg, EvalMode::Mn, std::slice::from_ref(&fin), Some(5)).unwrap();
    assert_eq!(std::fs::read_to_string(again).unwrap(), text);

    let ood = commands::eval(&cfg, EvalMode::Ood, std::slice::from_ref(&fin), None).unwrap();
    assert_eq!(std::fs::read_to_string(ood).unwrap().lines().count(), 1 + 2);

    let varyn = commands::eval(&cfg, EvalMode::Varyn, std::slice::from_ref(&fin), None).unwrap();
    assert_eq!(std::fs::read_to_string(varyn).unwrap().lines().count(), 1 + 4);

    let xp = commands::eval(&cfg, EvalMode::Xp, std::slice::from_ref(&fin), None).unwrap();
    assert_eq!(std::fs::read_to_string(xp).unwrap().lines().count(), 1 + 9);

    let cps: Vec<PathBuf> = (0..3).map(|k| commands::checkpoint_path(&seed_dir, k)).collect();
    let ed = commands::eval(&cfg, EvalMode::Eddiag, &cps, None).unwrap();
    let text = std::fs::read_to_string(&ed).unwrap();
    let groups: std::collections::BTreeSet<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(groups.len(), 3, "{groups:?}");
}

#[test]
fn unknown_eval_mode_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = run(naht().args(["eval", "--mode", "bogus", "--config"]).arg(&cfg));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn registry_build_and_list() {
    let dir = tempfile::tempdir().unwrap();
    let mut c: serde_json::Value = serde_json::from_str(TINY).unwrap();
    let obj = c.as_object_mut().unwrap();
    obj.remove("teammates");
    obj.insert("seeds".into(), serde_json::json!([1, 2]));
    obj.insert("holdout_seeds".into(), serde_json::json!([3]));
    let cfg = write_config(dir.path(), &c.to_string());
    let o = run(naht().args(["registry", "build", "--config"]).arg(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let reg = dir.path().join("out/registry.json");
    let o = run(naht().args(["registry", "list"]).arg(&reg));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 4, "{text}");
    assert_eq!(text.lines().filter(|l| l.contains(",holdout,")).count(), 1);
}
