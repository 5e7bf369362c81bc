use std::fs;

use lightavseg::checkpoint::Checkpoint;
use lightavseg::config::RunConfig;
use lightavseg::harness::*;
use lightavseg::layout::{load_clip, load_layout, write_clip, Clip};
use lightavseg::Error;
use lightavseg_core::attention::SweepModule;
use lightavseg_core::dataset::{generate_scene, DatasetSpec};
use lightavseg_core::model::infer;
use lightavseg_core::train::{evaluate, Trainer};
use tempfile::tempdir;

fn toy() -> RunConfig {
    RunConfig::parse(
        "channels=4,6,8,8\naudio_channels=8\naudio_hidden=8\ninput_hw=32\nsize=32\nn_scenes=4\nbatch_size=2\nlr=1e-3\n",
    )
    .unwrap()
}

#[test]
fn zero_step_run_writes_the_initialization() {
    let dir = tempdir().unwrap();
    let mut cfg = toy();
    cfg.train.steps = 0;
    let data = load_batches(&cfg).unwrap();
    train_run(&cfg, &data, dir.path(), None).unwrap();
    let c = Checkpoint::load(&ckpt_path(dir.path(), 0)).unwrap();
    let init = Trainer::new(cfg.model.clone(), cfg.train.clone()).unwrap();
    assert_eq!(c.params, init.params);
    assert_eq!(c.config, cfg);
    assert_eq!(fs::read_to_string(dir.path().join("log.jsonl")).unwrap(), "");
    assert_eq!(RunConfig::parse(&fs::read_to_string(dir.path().join("config.txt")).unwrap()).unwrap(), cfg);
}

#[test]
fn log_lines_satisfy_the_loss_identity() {
    let dir = tempdir().unwrap();
    let mut cfg = toy();
    cfg.train.steps = 4;
    let data = load_batches(&cfg).unwrap();
    train_run(&cfg, &data, dir.path(), None).unwrap();
    let log = fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    for (i, v) in lines.iter().enumerate() {
        let f = |k: &str| v[k].as_f64().unwrap();
        assert_eq!(v["step"].as_u64().unwrap(), i as u64 + 1);
        assert!((f("total") - (f("dice") + f("bce") + f("lambda") * f("msa"))).abs() < 1e-12);
    }
}

#[test]
fn seeded_runs_produce_identical_logs() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let mut cfg = toy();
    cfg.train.steps = 3;
    let data = load_batches(&cfg).unwrap();
    train_run(&cfg, &data, a.path(), None).unwrap();
    train_run(&cfg, &data, b.path(), None).unwrap();
    let read = |d: &std::path::Path| fs::read(d.join("log.jsonl")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(fs::read(ckpt_path(a.path(), 3)).unwrap(), fs::read(ckpt_path(b.path(), 3)).unwrap());
}

#[test]
fn checkpoint_round_trip_preserves_forward_and_training() {
    let dir = tempdir().unwrap();
    let mut cfg = toy();
    cfg.train.steps = 4;
    cfg.train.ckpt_every = 2;
    let data = load_batches(&cfg).unwrap();
    let full = train_run(&cfg, &data, dir.path(), None).unwrap();
    let mid = Checkpoint::load(&ckpt_path(dir.path(), 2)).unwrap();
    assert_eq!(mid.step, 2);

    let (g0, o0) = infer(&cfg.model, &full.params, &data[0], false).unwrap();
    let back = Checkpoint::load(&ckpt_path(dir.path(), 4)).unwrap();
    assert_eq!(back, full);
    let (g1, o1) = infer(&back.config.model, &back.params, &data[0], false).unwrap();
    assert_eq!(g0.value(o0.seg.logits), g1.value(o1.seg.logits));

    let resumed_dir = tempdir().unwrap();
    let resumed = train_run(&cfg, &data, resumed_dir.path(), Some(&mid)).unwrap();
    assert_eq!(resumed, full);
    let tail: Vec<String> = fs::read_to_string(dir.path().join("log.jsonl")).unwrap().lines().skip(2).map(String::from).collect();
    let got: Vec<String> = fs::read_to_string(resumed_dir.path().join("log.jsonl")).unwrap().lines().map(String::from).collect();
    assert_eq!(got, tail);
}

#[test]
fn checkpoint_errors_are_descriptive() {
    let dir = tempdir().unwrap();
    let cfg = toy();
    let t = Trainer::new(cfg.model.clone(), cfg.train.clone()).unwrap();
    let mut c = Checkpoint::from_trainer(&t, &cfg);
    c.config.model.backbone.stage_channels = vec![4, 6, 8, 16];
    let p = dir.path().join("bad.bin");
    c.save(&p).unwrap();
    let msg = Checkpoint::load(&p).unwrap_err().to_string();
    assert!(msg.contains("parameter `") && msg.contains("but the config needs"), "{msg}");

    let mut bytes = Vec::new();
    Checkpoint::from_trainer(&t, &cfg).write(&mut bytes).unwrap();
    bytes[8] = 9;
    assert!(matches!(Checkpoint::read(&mut bytes.as_slice()), Err(Error::Format(m)) if m.contains("version 9")));
    assert!(Checkpoint::read(&mut &bytes[..20]).is_err());
}

#[test]
fn layout_round_trip_is_bit_identical() {
    let dir = tempdir().unwrap();
    let spec = DatasetSpec { n_scenes: 3, frames: 2, size: 32, ..DatasetSpec::default() };
    let mut cfg = toy();
    cfg.data = spec.clone();
    let scenes = synth_data(&cfg, dir.path()).unwrap();
    let clips: Vec<Clip> = load_layout(dir.path(), 1).unwrap().map(Result::unwrap).collect();
    assert_eq!(clips.len(), 3);
    for (c, s) in clips.iter().zip(&scenes) {
        assert_eq!(c.frames, s.frames);
        assert_eq!(c.masks, s.masks);
        assert_eq!(c.waveform, s.waveform);
        assert_eq!(c.to_batch().unwrap(), s.to_batch().unwrap());
        assert_eq!(c.to_batch().unwrap().audio.shape()[0], 2);
    }
}

#[test]
fn semantic_layout_round_trip() {
    let dir = tempdir().unwrap();
    let s = generate_scene(&DatasetSpec { size: 16, ..DatasetSpec::default() }, 0).unwrap();
    let onehot = lightavseg_core::Tensor::from_fn(&[1, 2, 16, 16], |i| if i < 256 { s.masks.data()[i] } else { 0.0 });
    let clip = Clip { id: "v".into(), frames: s.frames.clone(), waveform: s.waveform.clone(), masks: onehot };
    write_clip(dir.path(), &clip).unwrap();
    assert_eq!(load_clip(&dir.path().join("v"), 2).unwrap(), clip);
}

#[test]
fn layout_errors_name_the_video() {
    let dir = tempdir().unwrap();
    assert_eq!(load_layout(dir.path(), 1).unwrap().count(), 0);
    let s = generate_scene(&DatasetSpec { size: 16, ..DatasetSpec::default() }, 0).unwrap();
    write_clip(dir.path(), &Clip::from_scene("clip_a", &s)).unwrap();
    fs::remove_file(dir.path().join("clip_a/masks/00000.png")).unwrap();
    let err = load_layout(dir.path(), 1).unwrap().next().unwrap().unwrap_err().to_string();
    assert!(err.contains("clip_a") && err.contains("1 frames but 0 masks"), "{err}");
    assert!(load_layout(&dir.path().join("missing"), 1).is_err());
}

#[test]
fn parallel_evaluation_matches_sequential() {
    let cfg = toy();
    let data = load_batches(&cfg).unwrap();
    let params = cfg.model.init_params(4).unwrap();
    for mute in [false, true] {
        assert_eq!(
            evaluate_parallel(&cfg.model, &params, &data, mute).unwrap(),
            evaluate(&cfg.model, &params, &data, mute).unwrap()
        );
    }
    assert!(evaluate_parallel(&cfg.model, &params, &[], false).is_err());
}

#[test]
fn bench_writes_csv_and_json() {
    let dir = tempdir().unwrap();
    let r = bench(SweepModule::Fusion, &[7, 14, 28], 8, 8, 0).unwrap();
    assert!(r.points.iter().all(|p| p.wall_ms.is_some_and(|t| t >= 0.0)));
    write_bench(dir.path(), std::slice::from_ref(&r)).unwrap();
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "module,N,flops,wall_ms");
    assert!(rows[1].starts_with(&format!("fusion,49,{},", r.points[0].flops)));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("bench.json")).unwrap()).unwrap();
    assert_eq!(json[0]["slope"].as_f64().unwrap(), r.slope);
    assert!(bench(SweepModule::Xattn, &[14, 7], 8, 8, 0).is_err());
}

#[test]
fn inspect_dumps_every_stage() {
    let dir = tempdir().unwrap();
    let cfg = toy();
    let params = cfg.model.init_params(0).unwrap();
    let clip = Clip::from_scene("s", &generate_scene(&cfg.data, 0).unwrap());
    inspect(&cfg, &params, &clip, dir.path(), false).unwrap();
    for f in ["spectrogram.lmel", "logits.tnsr", "pred_00000.png", "alignment_stage4.tnsr", "audio_state_4.tnsr", "enhanced_1.tnsr"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let mut r = fs::File::open(dir.path().join("alignment_stage2.tnsr")).unwrap();
    let s = lightavseg::tensor_io::read_tensor(&mut r).unwrap();
    assert_eq!(s.shape(), &[1, 1, 32, 32]);
    assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}
