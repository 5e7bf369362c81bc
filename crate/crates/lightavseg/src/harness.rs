//! Run-directory drivers behind the command line.
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lightavseg_core::attention::{check_grid, SweepBench, SweepModule};
use lightavseg_core::dataset::{generate_scene, Scene};
use lightavseg_core::flops::FlopReport;
use lightavseg_core::gradcheck::{full_suite, SuiteEntry};
use lightavseg_core::loss::{alignment_maps, LossReport};
use lightavseg_core::model::{infer, Batch, ModelConfig};
use lightavseg_core::params::ParamStore;
use lightavseg_core::train::{predict, score_scene, summarize, EvalReport, Trainer};
use lightavseg_core::{Graph, NodeId};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{format_err, io_err, Result};
use crate::image::write_mask_png;
use crate::layout::{load_layout, scene_id, write_clip, Clip};
use crate::tensor_io::{write_lmel, write_tensor};

pub const TIMING_REPEATS: usize = 5;

/// Training batches for `cfg`: the AVSBench-style directory when set,
/// otherwise synthetic scenes.
pub fn load_batches(cfg: &RunConfig) -> Result<Vec<Batch>> {
    match &cfg.data_root {
        Some(root) => load_layout(root, cfg.model.num_classes)?.map(|c| c?.to_batch()).collect(),
        None => (0..cfg.data.n_scenes)
            .map(|i| Ok(generate_scene(&cfg.data, i)?.to_batch()?))
            .collect(),
    }
}

/// One JSON object per log line.
pub fn log_line(step: u64, r: &LossReport) -> String {
    let mut v = json!({
        "step": step,
        "dice": r.dice,
        "bce": r.bce,
        "msa": r.msa,
        "total": r.total,
        "lambda": r.lambda,
        "per_scale_msa": r.per_scale_msa,
    });
    if let Some(avm) = r.avm {
        v["avm"] = json!(avm);
    }
    v.to_string()
}

pub fn ckpt_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step:08}.bin"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Trains into `out`: `config.txt`, `log.jsonl` and `ckpt_<step>.bin` at the
/// configured cadence and at the end. A resumed run appends to the log.
pub fn train_run(cfg: &RunConfig, data: &[Batch], out: &Path, resume: Option<&Checkpoint>) -> Result<Checkpoint> {
    cfg.validate()?;
    create_dir(out)?;
    let config_path = out.join("config.txt");
    fs::write(&config_path, cfg.to_text()).map_err(io_err(&config_path))?;
    let mut trainer = match resume {
        Some(c) => {
            let mut t = c.to_trainer()?;
            t.config.steps = cfg.train.steps;
            t
        }
        None => Trainer::new(cfg.model.clone(), cfg.train.clone())?,
    };
    if data.is_empty() {
        return Err(format_err!("training dataset is empty"));
    }
    let log_path = out.join("log.jsonl");
    let file = OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let mut log = BufWriter::new(file);
    let (log_every, ckpt_every) = (cfg.train.log_every, cfg.train.ckpt_every);
    while trainer.step < trainer.config.steps {
        let idx = trainer.batch_indices(trainer.step, data.len());
        let parts: Vec<&Batch> = idx.iter().map(|&i| &data[i]).collect();
        let report = trainer.train_step(&Batch::concat(&parts)?)?;
        let step = trainer.step;
        if log_every > 0 && step % log_every == 0 {
            writeln!(log, "{}", log_line(step, &report)).map_err(io_err(&log_path))?;
        }
        if ckpt_every > 0 && step % ckpt_every == 0 && step < trainer.config.steps {
            log.flush().map_err(io_err(&log_path))?;
            Checkpoint::from_trainer(&trainer, cfg).save(&ckpt_path(out, step))?;
        }
    }
    log.flush().map_err(io_err(&log_path))?;
    let ckpt = Checkpoint::from_trainer(&trainer, cfg);
    ckpt.save(&ckpt_path(out, trainer.step))?;
    Ok(ckpt)
}

/// Scene-parallel evaluation. Results are in scene order and identical to a
/// sequential pass.
pub fn evaluate_parallel(cfg: &ModelConfig, params: &ParamStore, scenes: &[Batch], mute_audio: bool) -> Result<EvalReport> {
    cfg.check_params(params)?;
    if scenes.is_empty() {
        return Err(format_err!("evaluation dataset is empty"));
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(scenes.len());
    let chunk = scenes.len().div_ceil(workers);
    let per = std::thread::scope(|s| {
        let handles: Vec<_> = scenes
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|b| Ok(score_scene(&predict(cfg, params, b, mute_audio)?, &b.masks)?))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(summarize(per.into_iter().flatten().collect()))
}

pub fn eval_json(r: &EvalReport, mute_audio: bool) -> serde_json::Value {
    json!({
        "miou": r.miou,
        "fscore": r.fscore,
        "mute_audio": mute_audio,
        "per_scene": r.per_scene.iter().map(|s| json!({"miou": s.miou, "fscore": s.fscore})).collect::<Vec<_>>(),
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Counted FLOPs and median-of-5 wall time per grid side.
pub fn bench(module: SweepModule, sides: &[usize], channels: usize, head_dim: usize, seed: u64) -> Result<FlopReport> {
    check_grid(sides)?;
    let b = SweepBench::new(module, channels, head_dim, seed);
    let mut points = Vec::new();
    for &side in sides {
        let mut times = Vec::with_capacity(TIMING_REPEATS);
        let mut counter = None;
        for _ in 0..TIMING_REPEATS {
            let t0 = Instant::now();
            let c = b.run(side)?;
            times.push(t0.elapsed().as_secs_f64() * 1e3);
            counter = Some(c);
        }
        let counter = counter.expect("at least one timing repeat");
        points.push(b.point(side, &counter, Some(median(times))));
    }
    Ok(FlopReport::new(module.as_str(), points))
}

/// `bench.csv` (module,N,flops,wall_ms) and `bench.json` (slopes and points).
pub fn write_bench(out: &Path, reports: &[FlopReport]) -> Result<()> {
    create_dir(out)?;
    let csv_path = out.join("bench.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| format_err!("{}: {e}", csv_path.display()))?;
    let csv_err = |e: csv::Error| format_err!("{}: {e}", csv_path.display());
    w.write_record(["module", "N", "flops", "wall_ms"]).map_err(csv_err)?;
    for r in reports {
        for p in &r.points {
            let wall = p.wall_ms.map(|t| format!("{t:.4}")).unwrap_or_default();
            w.write_record([r.module.clone(), p.n.to_string(), p.flops.to_string(), wall]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(&csv_path))?;
    let doc: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "module": r.module,
                "slope": r.slope,
                "total_slope": r.total_slope,
                "points": r.points.iter().map(|p| json!({
                    "N": p.n, "flops": p.flops, "total_flops": p.total_flops, "wall_ms": p.wall_ms,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let json_path = out.join("bench.json");
    fs::write(&json_path, serde_json::to_string_pretty(&doc).expect("json values serialize")).map_err(io_err(&json_path))
}

/// Runs the gradient suite; returns the entries and whether every
/// coordinate's relative error is below `tol`.
pub fn gradcheck(seed: u64, tol: f64) -> Result<(Vec<SuiteEntry>, bool)> {
    let entries = full_suite(seed)?;
    let ok = entries.iter().all(|e| entry_passes(e, tol));
    Ok((entries, ok))
}

pub fn entry_passes(e: &SuiteEntry, tol: f64) -> bool {
    e.report.coords.iter().all(|c| c.rel_err < tol)
}

/// Writes every synthetic scene of `cfg.data` under `root`, with a
/// `meta.json` per clip naming the sounding shape.
pub fn synth_data(cfg: &RunConfig, root: &Path) -> Result<Vec<Scene>> {
    create_dir(root)?;
    let mut scenes = Vec::with_capacity(cfg.data.n_scenes);
    for i in 0..cfg.data.n_scenes {
        let s = generate_scene(&cfg.data, i)?;
        let id = scene_id(i);
        write_clip(root, &Clip::from_scene(&id, &s))?;
        let meta = json!({
            "sounding": s.meta.sounding,
            "freq_hz": s.meta.freq_hz,
            "shapes": s.meta.shapes.iter().map(|p| json!({
                "kind": format!("{:?}", p.kind).to_lowercase(), "cx": p.cx, "cy": p.cy, "radius": p.radius,
            })).collect::<Vec<_>>(),
        });
        let path = root.join(&id).join("meta.json");
        fs::write(&path, meta.to_string()).map_err(io_err(&path))?;
        scenes.push(s);
    }
    Ok(scenes)
}

fn dump(path: &Path, g: &Graph, id: NodeId) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    write_tensor(&mut w, g.value(id))?;
    w.flush().map_err(io_err(path))
}

/// Dumps one clip's activations into `out`: `spectrogram.lmel`,
/// `audio_state_<i>.tnsr` and `enhanced_<i>.tnsr` per encoder stage,
/// `alignment_stage<i>.tnsr` per supervised stage, `logits.tnsr` and
/// `pred_<t>.png`.
pub fn inspect(cfg: &RunConfig, params: &ParamStore, clip: &Clip, out: &Path, mute_audio: bool) -> Result<()> {
    create_dir(out)?;
    let spec = lightavseg_core::audio::log_mel_windows(&clip.waveform, clip.num_frames())?;
    let lmel = out.join("spectrogram.lmel");
    let mut w = BufWriter::new(File::create(&lmel).map_err(io_err(&lmel))?);
    write_lmel(&mut w, &spec)?;
    w.flush().map_err(io_err(&lmel))?;
    let batch = clip.to_batch()?;
    let (mut g, o) = infer(&cfg.model, params, &batch, mute_audio)?;
    for (i, a) in o.encoder.audio_states.iter().enumerate() {
        dump(&out.join(format!("audio_state_{}.tnsr", i + 1)), &g, a.value)?;
    }
    for (i, &v) in o.encoder.enhanced.stages.iter().enumerate() {
        dump(&out.join(format!("enhanced_{}.tnsr", i + 1)), &g, v)?;
    }
    let [_, _, h, w] = batch.frames.dims4()?;
    let maps = alignment_maps(&mut g, &o.seg.per_stage_features, &o.seg.per_stage_audio, cfg.train.tau, h, w)?;
    for (&stage, &s) in o.seg.stage_index.iter().zip(&maps.s_up) {
        dump(&out.join(format!("alignment_stage{stage}.tnsr")), &g, s)?;
    }
    dump(&out.join("logits.tnsr"), &g, o.seg.logits)?;
    let pred = predict(&cfg.model, params, &batch, mute_audio)?;
    for t in 0..clip.num_frames() {
        write_mask_png(&out.join(format!("pred_{t:05}.png")), &pred, t, cfg.model.num_classes == 1)?;
    }
    Ok(())
}
