use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lightavseg::checkpoint::Checkpoint;
use lightavseg::config::{RunConfig, SEED_ENV};
use lightavseg::error::{Error, Result};
use lightavseg::harness;
use lightavseg::layout::{load_clip, Clip};
use lightavseg_core::attention::SweepModule;
use lightavseg_core::dataset::generate_scene;

#[derive(Parser)]
#[command(name = "lightavseg", version, about = "Audio-visual segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write config.txt, log.jsonl and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue from a checkpoint (its config is the base).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; writes eval.json into the run directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// AVSBench-style clip directory (default: the checkpoint's synthetic set).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Replace the initial audio state with zeros.
        #[arg(long)]
        mute_audio: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// FLOP scaling sweep with timing; writes bench.csv and bench.json.
    Bench {
        /// `fusion`, `xattn`, or both comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "fusion")]
        module: Vec<String>,
        /// Grid sides, strictly increasing.
        #[arg(long, value_delimiter = ',', default_value = "28,56,112,224")]
        grids: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 64)]
        head_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Run the gradient-check suite; exits nonzero on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Relative-error tolerance.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Write synthetic scenes in the clip directory layout.
    SynthData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump activations, alignment maps and predictions for one clip.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
        /// Clip directory; default is synthetic scene `--scene`.
        #[arg(long)]
        clip: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        scene: usize,
        #[arg(long)]
        mute_audio: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set lr=1e-3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    loss_variant: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// AVSBench-style clip directory instead of synthetic scenes.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut c = base;
        if let Some(p) = &self.config {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io { path: p.clone(), source })?;
            c.apply_text(&text)?;
        }
        c.apply_env_seed(std::env::var(SEED_ENV).ok().as_deref())?;
        for kv in &self.sets {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            c.set(k.trim(), v)?;
        }
        let flags = [
            ("steps", self.steps.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("loss_variant", self.loss_variant.clone()),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("tau", self.tau.map(|v| v.to_string())),
            ("data_root", self.data.as_ref().map(|p| p.display().to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                c.set(k, &v)?;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Train { cfg, out, resume } => {
            let resume = resume.map(|p| Checkpoint::load(&p)).transpose()?;
            let base = resume.as_ref().map_or_else(RunConfig::default, |c| c.config.clone());
            let cfg = cfg.resolve(base)?;
            let data = harness::load_batches(&cfg)?;
            let ckpt = harness::train_run(&cfg, &data, &out, resume.as_ref())?;
            println!("trained to step {} -> {}", ckpt.step, harness::ckpt_path(&out, ckpt.step).display());
        }
        Cmd::Eval { ckpt, data, mute_audio, out } => {
            let c = Checkpoint::load(&ckpt)?;
            let mut cfg = c.config.clone();
            if data.is_some() {
                cfg.data_root = data;
            }
            let batches = harness::load_batches(&cfg)?;
            let r = harness::evaluate_parallel(&cfg.model, &c.params, &batches, mute_audio)?;
            println!("miou {:.4} fscore {:.4} scenes {}", r.miou, r.fscore, r.per_scene.len());
            let dir = out.unwrap_or_else(|| ckpt.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
            std::fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
            let path = dir.join(if mute_audio { "eval_mute.json" } else { "eval.json" });
            let text = serde_json::to_string_pretty(&harness::eval_json(&r, mute_audio)).expect("json values serialize");
            std::fs::write(&path, text).map_err(|source| Error::Io { path: path.clone(), source })?;
        }
        Cmd::Bench { module, grids, channels, head_dim, seed, out } => {
            let mut reports = Vec::new();
            for m in &module {
                let r = harness::bench(SweepModule::parse(m)?, &grids, channels, head_dim, seed)?;
                println!("{}: slope {:.4} (all work {:.4})", r.module, r.slope, r.total_slope);
                for p in &r.points {
                    println!("  N={:<7} flops={:<12} wall_ms={:.3}", p.n, p.flops, p.wall_ms.unwrap_or(f64::NAN));
                }
                reports.push(r);
            }
            harness::write_bench(&out, &reports)?;
        }
        Cmd::Gradcheck { seed, tol } => {
            let (entries, ok) = harness::gradcheck(seed, tol)?;
            for e in &entries {
                let status = if harness::entry_passes(e, tol) { "ok" } else { "FAIL" };
                println!("{status:<4} {:<36} max_rel_err {:.3e}", e.name, e.report.max_rel_err);
            }
            println!("{} checks, {}", entries.len(), if ok { "all passed" } else { "FAILURES" });
            return Ok(ok);
        }
        Cmd::SynthData { cfg, out } => {
            let cfg = cfg.resolve(RunConfig::default())?;
            let scenes = harness::synth_data(&cfg, &out)?;
            println!("wrote {} scenes to {}", scenes.len(), out.display());
        }
        Cmd::Inspect { ckpt, clip, scene, mute_audio, out } => {
            let c = Checkpoint::load(&ckpt)?;
            let clip = match clip {
                Some(dir) => load_clip(&dir, c.config.model.num_classes)?,
                None => Clip::from_scene(&format!("scene_{scene:05}"), &generate_scene(&c.config.data, scene)?),
            };
            harness::inspect(&c.config, &c.params, &clip, &out, mute_audio)?;
            println!("dumped `{}` to {}", clip.id, out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
