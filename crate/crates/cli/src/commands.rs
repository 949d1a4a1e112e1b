use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lapnerf::checkpoint::Checkpoint;
use lapnerf::colmap::{self, FormatHint};
use lapnerf::dataset::{self, DatasetManifest, PrepConfig, MANIFEST_FILE};
use lapnerf::field::FieldConfig;
use lapnerf::metrics::{self, load_eval_frames, sha256_hex, EvalOptions, SsimMode};
use lapnerf::rays::TrainingSet;
use lapnerf::render::SceneField;
use lapnerf::synthetic::{fixture_field_config, fixture_train_config, SyntheticConfig, SyntheticScene};
use lapnerf::train::{schedule_iterations, TrainConfig, Trainer};

use crate::error::*;
use crate::scene::{LoadedScene, PoseSpec, Quality};
use crate::service::{self, AppState, ServiceConfig};

const AFTER_HELP: &str = "\
Exit codes:
  0   success
  1   other failure
  2   an input file or directory is missing
  3   training diverged (the last checkpoint path is printed)
  4   the checkpoint is corrupt or has an unsupported version
  5   the requested split (train or eval) is empty
  64  invalid command line

Set RUST_LOG (e.g. RUST_LOG=info) to control logging.";

#[derive(Debug, Parser)]
#[command(name = "lapnerf", version, about = "Radiance-field reconstruction for circular-field-of-view endoscopic video", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn extracted frames and a COLMAP sparse model into a training dataset.
    Prepare(PrepareArgs),
    /// Train a field on a prepared dataset.
    Train(TrainArgs),
    /// Score a checkpoint on the eval split.
    Eval(EvalArgs),
    /// Render PNGs from a checkpoint.
    Render(RenderArgs),
    /// Serve renders over HTTP for the interactive viewer.
    Serve(ServeArgs),
    /// Write the procedural sphere-interior scene (frames, COLMAP model, training config).
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory of extracted frames.
    #[arg(long)]
    pub frames: PathBuf,
    /// COLMAP sparse model directory (cameras, images, points3D as .bin or .txt).
    #[arg(long)]
    pub colmap: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of the source width cropped from the left.
    #[arg(long, default_value_t = 0.0)]
    pub crop_left: f64,
    /// Fraction of the source width cropped from the right.
    #[arg(long, default_value_t = 0.0)]
    pub crop_right: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub downscale: u32,
    /// Mask radius as a fraction of half the shorter side.
    #[arg(long, default_value_t = 1.0)]
    pub radius_frac: f64,
    /// Estimate the mask radius from the frames instead.
    #[arg(long)]
    pub auto_radius: bool,
    /// Every n-th posed frame goes to the eval split.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
    pub eval_every: u64,
    #[arg(long, default_value_t = 0.01)]
    pub bounds_lo_pct: f64,
    #[arg(long, default_value_t = 0.99)]
    pub bounds_hi_pct: f64,
    #[arg(long, default_value_t = 1.2)]
    pub bounds_inflate: f64,
    /// Frame rate of the source video, recorded in the manifest.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Frame count of the source video, recorded and checked.
    #[arg(long)]
    pub total_source_frames: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest file, or the directory containing it.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with optional `field` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "paper_schedule")]
    pub iterations: Option<u64>,
    /// Take the iteration count from the pose-count schedule (the default
    /// when neither this nor --iterations nor a config value is given).
    #[arg(long)]
    pub paper_schedule: bool,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample rays from every pixel, border included.
    #[arg(long)]
    pub no_mask: bool,
    /// Save a checkpoint every n steps (0 = only initial and final).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Write an eval report every n steps (0 = never).
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Resolve and write config.json, then stop without training.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SsimArg {
    Luma,
    PerChannel,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Score every pixel instead of only the mask.
    #[arg(long)]
    pub unmasked: bool,
    #[arg(long, value_enum, default_value_t = SsimArg::Luma)]
    pub ssim: SsimArg,
    /// Also write the rendered eval frames here.
    #[arg(long)]
    pub renders: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Render every eval pose of this manifest.
    #[arg(long, conflicts_with = "pose")]
    pub manifest: Option<PathBuf>,
    /// JSON pose file (`camera_to_world` or `look_at`), as accepted by the service.
    #[arg(long)]
    pub pose: Option<PathBuf>,
    /// Defaults to the training width.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=16384))]
    pub width: Option<u32>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=16384))]
    pub height: Option<u32>,
    #[arg(long, value_enum, default_value_t = Quality::Full)]
    pub quality: Quality,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long, default_value_t = 1920, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_dimension: u32,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_in_flight: u64,
    /// Allowed CORS origin; any origin when omitted.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub cameras: u64,
    /// Square frame size in pixels.
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u32).range(16..))]
    pub size: u32,
}

/// Optional training overrides read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub field: Option<FieldConfig>,
    pub train: Option<TrainConfig>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Render(a) => render(a),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth(a),
    }
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::new(EXIT_MISSING_INPUT, format!("{what} not found: {}", path.display())))
    }
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_manifest(p: &Path) -> Result<(DatasetManifest, PathBuf), CliError> {
    let path = manifest_path(p);
    require(&path, "manifest")?;
    let m = DatasetManifest::load(&path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((m, base))
}

fn load_scene(p: &Path) -> Result<LoadedScene, CliError> {
    require(p, "checkpoint")?;
    Ok(LoadedScene::load(p)?)
}

fn prepare(a: PrepareArgs) -> Result<(), CliError> {
    require(&a.frames, "frames directory")?;
    require(&a.colmap, "COLMAP directory")?;
    let model = colmap::parse_sparse_model(&a.colmap, FormatHint::Auto)?;
    let cfg = PrepConfig {
        crop_left_frac: a.crop_left,
        crop_right_frac: a.crop_right,
        downscale: a.downscale,
        radius_frac: a.radius_frac,
        eval_every: a.eval_every as usize,
        bounds_lo_pct: a.bounds_lo_pct,
        bounds_hi_pct: a.bounds_hi_pct,
        bounds_inflate: a.bounds_inflate,
        fps: a.fps,
        total_source_frames: a.total_source_frames,
    };
    let m = dataset::prepare_dataset(&model, &a.frames, &a.out, &cfg, a.auto_radius)?;
    println!(
        "n_frame {}  n_pose {}  unposed {}  train {}  eval {}",
        m.n_frame(),
        m.n_pose(),
        m.n_frame() - m.n_pose(),
        m.frames_in(dataset::Split::Train).count(),
        m.frames_in(dataset::Split::Eval).count()
    );
    println!("manifest {}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join(format!("checkpoint_{step:07}.bin"))
}

fn save_checkpoint(t: &Trainer, out: &Path) -> Result<PathBuf, CliError> {
    let ck = Checkpoint::capture(
        &t.state,
        &t.config,
        &t.settings,
        &t.data.camera,
        t.data.frames.first().map(|f| f.pose),
    );
    let path = checkpoint_path(out, t.state.step);
    ck.save(&path)?;
    Ok(path)
}

fn write_eval(t: &Trainer, manifest: &DatasetManifest, base: &Path, out: &Path) -> Result<(), CliError> {
    let frames = match load_eval_frames(manifest, base) {
        Ok(f) => f,
        Err(metrics::MetricsError::EmptySplit) => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    let field = SceneField::new(&t.state.field, manifest.bounds);
    let digest = sha256_hex(serde_json::to_string(&(t.state.field.config(), &t.config))?.as_bytes());
    let report = metrics::evaluate(
        &frames,
        &manifest.camera,
        &manifest.bounds,
        &manifest.mask,
        &field,
        Some(&t.state.grid),
        &t.settings,
        &EvalOptions::default(),
        digest,
    )?;
    fs::write(out.join(format!("eval_{:07}.json", t.state.step)), report.to_json())?;
    log::info!("step {} eval PSNR {:.2} SSIM {:.4}", t.state.step, report.mean_psnr, report.mean_ssim);
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let (manifest, base) = load_manifest(&a.manifest)?;
    let file: TrainFile = match &a.config {
        Some(p) => {
            require(p, "config")?;
            serde_json::from_str(&fs::read_to_string(p)?)?
        }
        None => TrainFile::default(),
    };
    let data = TrainingSet::load(&manifest, &base)?;
    fs::create_dir_all(&a.out)?;

    let mut trainer = match &a.resume {
        Some(p) => {
            require(p, "checkpoint")?;
            let ck = Checkpoint::load(p)?;
            let mut cfg = ck.header.train.clone();
            cfg.iterations = a.iterations.unwrap_or(cfg.iterations);
            Trainer::from_state(cfg, ck.state, data)?
        }
        None => {
            let mut cfg = file.train.clone().unwrap_or_default();
            cfg.iterations = match a.iterations {
                Some(n) => n,
                None if a.paper_schedule || file.train.is_none() => schedule_iterations(manifest.n_pose() as u64),
                None => cfg.iterations,
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if a.no_mask {
                cfg.mask_sampling = false;
            }
            if let Some(n) = a.checkpoint_every {
                cfg.checkpoint_every = n;
            }
            if let Some(n) = a.eval_every {
                cfg.eval_every = n;
            }
            Trainer::new(file.field.unwrap_or_default(), cfg, data)?
        }
    };
    let total = trainer.config.iterations;
    let resolved = TrainFile {
        field: Some(*trainer.state.field.config()),
        train: Some(trainer.config.clone()),
    };
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&resolved)? + "\n")?;
    println!("training {} -> {} steps", trainer.state.step, total);
    if a.dry_run {
        return Ok(());
    }

    let mut last = save_checkpoint(&trainer, &a.out)?;
    let mut log = BufWriter::new(
        fs::OpenOptions::new()
            .create(true)
            .append(a.resume.is_some())
            .write(true)
            .truncate(a.resume.is_none())
            .open(a.out.join("train_log.jsonl"))?,
    );
    let (ck_every, eval_every) = (trainer.config.checkpoint_every, trainer.config.eval_every);
    while trainer.state.step < total {
        let entry = match trainer.step() {
            Ok(e) => e,
            Err(e) => {
                log.flush()?;
                let err: CliError = e.into();
                return Err(CliError::new(
                    err.code,
                    format!("{}; last checkpoint {}", err.message, last.display()),
                ));
            }
        };
        writeln!(log, "{}", serde_json::to_string(&entry)?)?;
        let step = trainer.state.step;
        if step % 100 == 0 || step == total {
            log::info!("step {step} loss {:.6} batch PSNR {:.2}", entry.loss, entry.psnr_train_batch);
        }
        if ck_every > 0 && step % ck_every == 0 && step < total {
            last = save_checkpoint(&trainer, &a.out)?;
        }
        if eval_every > 0 && step % eval_every == 0 {
            write_eval(&trainer, &manifest, &base, &a.out)?;
        }
    }
    log.flush()?;
    if last != checkpoint_path(&a.out, trainer.state.step) {
        last = save_checkpoint(&trainer, &a.out)?;
    }
    fs::copy(&last, a.out.join("final.bin"))?;
    let final_loss = trainer.state.loss_history.last().copied();
    match final_loss {
        Some(l) => println!("final loss {l:.6e}; checkpoint {}", last.display()),
        None => println!("checkpoint {}", last.display()),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let scene = load_scene(&a.checkpoint)?;
    let (manifest, base) = load_manifest(&a.manifest)?;
    let frames = load_eval_frames(&manifest, &base)?;
    let opts = EvalOptions {
        masked_region_only: !a.unmasked,
        ssim_mode: match a.ssim {
            SsimArg::Luma => SsimMode::Luma,
            SsimArg::PerChannel => SsimMode::PerChannel,
        },
    };
    let settings = scene.settings(Quality::Full);
    let field = SceneField::new(&scene.field, scene.bounds());
    let digest = sha256_hex(serde_json::to_string(&(&scene.header.field, &scene.header.train))?.as_bytes());
    let report = metrics::evaluate(
        &frames,
        &manifest.camera,
        &scene.bounds(),
        &manifest.mask,
        &field,
        Some(&scene.grid),
        &settings,
        &opts,
        digest,
    )?;
    if let Some(dir) = &a.renders {
        fs::create_dir_all(dir)?;
        for f in &frames {
            let img = metrics::render_stored(&manifest.camera, &f.pose, &scene.bounds(), Some(&scene.grid), &field, &settings)?;
            img.save_png(&dir.join(format!("eval_{:04}.png", f.index)))?;
        }
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, report.to_json())?;
    println!(
        "{} frames  PSNR {:.3} ± {:.3}  SSIM {:.4} ± {:.4}",
        report.frames.len(),
        report.mean_psnr,
        report.std_psnr,
        report.mean_ssim,
        report.std_ssim
    );
    Ok(())
}

fn render(a: RenderArgs) -> Result<(), CliError> {
    let scene = load_scene(&a.checkpoint)?;
    let cam = &scene.header.camera;
    let width = a.width.unwrap_or(cam.width);
    let height = a.height.unwrap_or_else(|| {
        // Keep the training aspect ratio when only the width is given.
        ((width as f64 * cam.height as f64 / cam.width as f64).round() as u32).max(1)
    });
    let mut jobs = Vec::new();
    if let Some(m) = &a.manifest {
        let (manifest, _) = load_manifest(m)?;
        for f in manifest.frames_in(dataset::Split::Eval) {
            jobs.push((format!("render_{:04}.png", f.index), f.pose.expect("eval frames are posed")));
        }
        if jobs.is_empty() {
            return Err(CliError::new(EXIT_EMPTY_SPLIT, "no eval frames"));
        }
    } else if let Some(p) = &a.pose {
        require(p, "pose file")?;
        let spec: PoseSpec = serde_json::from_str(&fs::read_to_string(p)?)?;
        let pose = spec
            .to_pose()
            .map_err(|e| CliError::new(EXIT_USAGE, format!("{}: {}", e.field, e.message)))?;
        jobs.push(("render.png".to_string(), pose));
    } else {
        jobs.push(("render.png".to_string(), scene.default_pose()));
    }
    fs::create_dir_all(&a.out)?;
    for (name, pose) in jobs {
        let img = scene.render(&pose, width, height, a.quality)?;
        img.to_srgb().save_png(&a.out.join(&name))?;
        println!("{}", a.out.join(name).display());
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let scene = load_scene(&a.checkpoint)?;
    let state = Arc::new(AppState::new(
        scene,
        ServiceConfig {
            max_dimension: a.max_dimension,
            max_in_flight: a.max_in_flight as usize,
            cors_origin: a.cors_origin,
        },
    ));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(state, &a.bind))?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let base = SyntheticConfig::default();
    let scale = a.size as f64 / base.width as f64;
    let scene = SyntheticScene::new(SyntheticConfig {
        n_cameras: a.cameras as usize,
        width: a.size,
        height: a.size,
        focal: base.focal * scale,
        ..base
    });
    let (frames, sparse) = scene.write(&a.out)?;
    // Same box `prepare` derives with the settings printed below.
    let prep = scene.prep_config();
    let bounds = scene
        .sparse_model()
        .bounds(prep.bounds_lo_pct, prep.bounds_hi_pct, prep.bounds_inflate)?;
    let file = TrainFile {
        field: Some(fixture_field_config()),
        train: Some(fixture_train_config(&bounds, 3000, true)),
    };
    let cfg_path = a.out.join("train_config.json");
    File::create(&cfg_path)?.write_all((serde_json::to_string_pretty(&file)? + "\n").as_bytes())?;
    println!("frames {}", frames.display());
    println!("sparse model {}", sparse.display());
    println!("training config {}", cfg_path.display());
    println!(
        "prepare with: --radius-frac {} --eval-every {} --bounds-lo-pct {} --bounds-hi-pct {} --bounds-inflate {}",
        prep.radius_frac, prep.eval_every, prep.bounds_lo_pct, prep.bounds_hi_pct, prep.bounds_inflate
    );
    Ok(())
}
