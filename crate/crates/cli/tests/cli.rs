use std::path::Path;
use std::process::{Command, Output};

fn specmap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specmap")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&specmap(&["--bogus", "all"], dir.path())), 1);
    assert_eq!(code(&specmap(&["--set", "model.lambda=-1", "config"], dir.path())), 1);
    assert_eq!(code(&specmap(&["--set", "model.nope=1", "config"], dir.path())), 1);
    assert_eq!(code(&specmap(&["-c", "missing.toml", "config"], dir.path())), 1);
    assert_eq!(code(&specmap(&["--help"], dir.path())), 0);
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = specmap(&["--input-dir", "nowhere", "proxy"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("tiles.csv"));
}

#[test]
fn config_prints_effective_settings() {
    let dir = tempfile::tempdir().unwrap();
    let o = specmap(&["--epochs", "17", "--mode", "loco", "--test-city", "gta", "config"], dir.path());
    assert_eq!(code(&o), 0);
    let cfg: specmap_core::RunConfig = toml::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.model.epochs, 17);
    assert_eq!(cfg.eval.test_city.as_deref(), Some("gta"));
}

#[test]
fn synth_then_proxy_writes_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let small = ["--set", "synth.cities=[\"ottawa\"]", "--set", "synth.tiles_per_side=8", "-q"];
    for stage in ["synth", "proxy"] {
        let mut args = small.to_vec();
        args.push(stage);
        let o = specmap(&args, dir.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for p in ["data/run_manifest.json", "out/proxy/run_manifest.json", "out/proxy/validation.json", "out/timings.json"] {
        assert!(dir.path().join(p).is_file(), "{p} missing");
    }
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/proxy/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["stage"], "proxy");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o["file"] == "proxy/targets.csv"));
}
