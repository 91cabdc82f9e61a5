use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("asmdt-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn asmdt(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asmdt"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn run_dirs(out: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    dirs
}

#[test]
fn twin_writes_report() {
    let out = scratch("twin");
    let o = asmdt(&out, &["twin", "--lambda", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = &run_dirs(&out)[0];
    for f in ["config.toml", "spec.json", "steady_state.json", "report.json"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let (rdm, v, u) = (report["rdm"].as_f64().unwrap(), report["v_sleep"].as_f64().unwrap(), report["u_sleep"].as_f64().unwrap());
    assert_eq!(rdm * v, u);
}

#[test]
fn threshold_single_point() {
    let out = scratch("threshold");
    let o = asmdt(&out, &["threshold"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = &run_dirs(&out)[0];
    assert!(dir.join("closed_forms.json").exists() && dir.join("oracle.json").exists());
}

#[test]
fn bad_config_exits_two() {
    let out = scratch("badcfg");
    let cfg = out.join("bad.toml");
    fs::write(&cfg, "[gate]\nsmoothing_span = 0\n").unwrap();
    let o = asmdt(&out, &["--config", cfg.to_str().unwrap(), "twin"]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&cfg, "this is = not [toml").unwrap();
    let o = asmdt(&out, &["--config", cfg.to_str().unwrap(), "twin"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn same_seed_same_stream_in_fresh_dirs() {
    let out = scratch("generate");
    for _ in 0..2 {
        assert!(asmdt(&out, &["--seed", "7", "generate"]).status.success());
    }
    assert!(asmdt(&out, &["--seed", "8", "generate"]).status.success());
    let dirs = run_dirs(&out);
    assert_eq!(dirs.len(), 3);
    let read = |d: &PathBuf| fs::read_to_string(d.join("arrivals.jsonl")).unwrap();
    let by_seed = |s: &str| dirs.iter().filter(|d| d.file_name().unwrap().to_str().unwrap().contains(s)).map(read).collect::<Vec<_>>();
    let sevens = by_seed("-s7-");
    assert_eq!(sevens.len(), 2);
    assert_eq!(sevens[0], sevens[1]);
    assert_ne!(sevens[0], by_seed("-s8-")[0]);
}
