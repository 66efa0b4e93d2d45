//! Configuration resolution and binary-level behavior: defaults, fail-closed
//! parsing, exit codes, idempotent re-runs and directory locking.

use std::path::Path;
use std::process::Command;

use flowcorr_cli::config::{parse_config_str, resolve, RawConfig};
use flowcorr_cli::pipeline::MANIFEST_NAME;
use flowcorr::fml::LagSpec;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowcorr"))
}

fn tmp_dir(name: &str) -> std::path::PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn minimal_pendulum_config_fills_paper_defaults() {
    let cfg = parse_config_str("experiment = \"damped-pendulum\"\n", "inline").unwrap();
    assert_eq!(cfg.data.fine_step, 0.1);
    assert_eq!(cfg.data.j_lf, 30_000);
    assert_eq!(cfg.data.j_hf, 250);
    assert_eq!(cfg.architecture.hidden_layers, 3);
    assert_eq!(cfg.architecture.hidden_width, 50);
}

#[test]
fn lag_times_convert_to_fine_step_multiples() {
    let times: Vec<String> = (5..=50).map(|k| format!("{:.1}", k as f64 * 0.2)).collect();
    let text = format!(
        "experiment = \"damped-pendulum-coarse\"\n\
         [data]\n\
         lag_steps = {{ times = [{}] }}\n",
        times.join(", ")
    );
    let cfg = parse_config_str(&text, "inline").unwrap();
    match &cfg.data.lag_steps {
        LagSpec::UniformSet(ks) => {
            let expect: Vec<u32> = (5..=50).collect();
            assert_eq!(ks, &expect);
        }
        other => panic!("unexpected lag spec {other:?}"),
    }
}

#[test]
fn non_multiple_lag_times_are_rejected() {
    let text = "experiment = \"damped-pendulum-coarse\"\n\
                [data]\n\
                lag_steps = { times = [1.07] }\n";
    let err = parse_config_str(text, "inline").unwrap_err();
    assert!(err.to_string().contains("integer multiple"), "{err}");
}

#[test]
fn coarse_lags_with_one_step_method_fail_validation() {
    let text = "experiment = \"damped-pendulum\"\n\
                [data]\n\
                lag_steps = { set = [1, 4] }\n\
                [correction]\n\
                method = \"tl-adam\"\n\
                freeze_index = 3\n";
    let err = parse_config_str(text, "inline").unwrap_err();
    assert!(err.to_string().contains("tl-recurrent"), "{err}");
}

#[test]
fn unknown_keys_fail_closed() {
    let err = parse_config_str(
        "experiment = \"damped-pendulum\"\nmystery_knob = 3\n",
        "inline",
    )
    .unwrap_err();
    assert!(err.to_string().contains("mystery_knob"), "{err}");
}

#[test]
fn non_preset_experiment_requires_sections() {
    let err = parse_config_str("experiment = \"my-system\"\n", "inline").unwrap_err();
    assert!(err.to_string().contains("true_system"), "{err}");
}

#[test]
fn partial_data_override_keeps_other_preset_values() {
    let text = "experiment = \"damped-pendulum\"\n[data]\nj_hf = 99\n";
    let cfg = parse_config_str(text, "inline").unwrap();
    assert_eq!(cfg.data.j_hf, 99);
    assert_eq!(cfg.data.j_lf, 30_000);
    assert_eq!(cfg.data.fine_step, 0.1);
}

#[test]
fn missing_experiment_field_is_rejected() {
    let err = resolve(RawConfig::default()).unwrap_err();
    assert!(err.to_string().contains("experiment"));
}

#[test]
fn bad_config_file_exits_2() {
    let dir = tmp_dir("exit2");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "experiment = \"damped-pendulum\"\nscale = 7.0\n").unwrap();
    let out = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_dependency_exits_1() {
    let dir = tmp_dir("exit1");
    let out = bin()
        .args(["reproduce", "damped-pendulum", "--scale", "0.02", "--stage", "evaluate", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("prior.json"), "{stderr}");
    assert!(stderr.contains("train-prior"), "{stderr}");
}

#[test]
fn unknown_preset_exits_2() {
    let out = bin().args(["reproduce", "lorenz", "--out", "/tmp/nowhere"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stale_lock_exits_1() {
    let dir = tmp_dir("locked");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join(".flowcorr.lock"), b"").unwrap();
    let out = bin()
        .args(["reproduce", "damped-pendulum", "--scale", "0.02", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}

#[test]
fn rerun_skips_stages_and_keeps_bytes() {
    let dir = tmp_dir("idempotent");
    let run = || {
        let out = bin()
            .args(["reproduce", "damped-pendulum", "--scale", "0.02", "--out"])
            .arg(&dir)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    let first = run();
    assert!(!first.contains("skipped"), "{first}");

    let snapshot: Vec<(String, Vec<u8>)> = artifact_bytes(&dir);
    assert!(!snapshot.is_empty());

    let second = run();
    for stage in ["generate", "train-prior", "correct", "evaluate"] {
        assert!(
            second.contains(&format!("{stage}: skipped")),
            "stage {stage} not skipped:\n{second}"
        );
    }
    assert_eq!(snapshot, artifact_bytes(&dir), "artifacts changed despite skip");
}

fn artifact_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != MANIFEST_NAME && !n.starts_with('.'))
        .collect();
    names.sort();
    for name in names {
        out.push((name.clone(), std::fs::read(dir.join(name)).unwrap()));
    }
    out
}
