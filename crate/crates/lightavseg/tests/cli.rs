use std::fs;
use std::process::Command;

use lightavseg::checkpoint::Checkpoint;
use lightavseg::config::SEED_ENV;
use tempfile::tempdir;

const TOY: &str = "channels=4,6,8,8\naudio_channels=8\naudio_hidden=8\ninput_hw=32\nsize=32\nn_scenes=3\nbatch_size=2\nlr=1e-3\nseed=3\n";

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lightavseg"));
    c.env_remove(SEED_ENV);
    c
}

#[test]
fn unknown_flag_prints_usage_and_exits_2() {
    let out = cli().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn contract_errors_exit_nonzero_with_a_message() {
    let dir = tempdir().unwrap();
    let out = cli().args(["train", "--lr", "0", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr must be positive"));
}

#[test]
fn train_zero_steps_then_eval_and_inspect() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, TOY).unwrap();
    let run = dir.path().join("run");
    let st = cli().args(["train", "--steps", "0", "--config"]).arg(&cfg).arg("--out").arg(&run).status().unwrap();
    assert!(st.success());
    let ck = run.join("ckpt_00000000.bin");
    let c = Checkpoint::load(&ck).unwrap();
    assert_eq!((c.step, c.config.train.seed), (0, 3));
    for extra in [&[][..], &["--mute-audio"][..]] {
        let st = cli().args(["eval", "--ckpt"]).arg(&ck).args(extra).status().unwrap();
        assert!(st.success());
    }
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("eval_mute.json")).unwrap()).unwrap();
    assert_eq!(v["mute_audio"], true);
    assert_eq!(v["per_scene"].as_array().unwrap().len(), 3);
    let st = cli().args(["inspect", "--ckpt"]).arg(&ck).arg("--out").arg(dir.path().join("ins")).status().unwrap();
    assert!(st.success());
    assert!(dir.path().join("ins/logits.tnsr").exists());
}

#[test]
fn seed_precedence_file_env_flag() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, TOY).unwrap();
    let seed_of = |env: Option<&str>, flag: Option<&str>, name: &str| {
        let run = dir.path().join(name);
        let mut c = cli();
        c.args(["train", "--steps", "0", "--config"]).arg(&cfg).arg("--out").arg(&run);
        if let Some(e) = env {
            c.env(SEED_ENV, e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        assert!(c.status().unwrap().success());
        Checkpoint::load(&run.join("ckpt_00000000.bin")).unwrap().config.train.seed
    };
    assert_eq!(seed_of(None, None, "a"), 3);
    assert_eq!(seed_of(Some("7"), None, "b"), 7);
    assert_eq!(seed_of(Some("7"), Some("9"), "c"), 9);
}

#[test]
fn bench_emits_csv_and_json() {
    let dir = tempdir().unwrap();
    let st = cli()
        .args(["bench", "--module", "fusion", "--grids", "28,56,112,224", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(st.success());
    assert_eq!(fs::read_to_string(dir.path().join("bench.csv")).unwrap().lines().count(), 5);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("bench.json")).unwrap()).unwrap();
    assert!((v[0]["slope"].as_f64().unwrap() - 1.0).abs() <= 0.01);
}

#[test]
fn gradcheck_exit_status_follows_the_result() {
    let ok = cli().args(["gradcheck"]).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("all passed"));
    let strict = cli().args(["gradcheck", "--tol", "0"]).output().unwrap();
    assert_eq!(strict.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&strict.stdout).contains("FAIL"));
}

#[test]
fn synth_data_then_train_from_disk() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    let st = cli().args(["synth-data", "--set", "n_scenes=2", "--set", "size=32", "--out"]).arg(&data).status().unwrap();
    assert!(st.success());
    assert!(data.join("scene_00001/meta.json").exists());
    let st = cli()
        .args(["train", "--steps", "1", "--set", "channels=4,6,8,8", "--set", "audio_channels=8", "--set", "audio_hidden=8", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("run"))
        .status()
        .unwrap();
    assert!(st.success());
    assert_eq!(fs::read_to_string(dir.path().join("run/log.jsonl")).unwrap().lines().count(), 1);
}
