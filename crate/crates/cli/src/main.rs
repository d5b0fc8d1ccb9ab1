//! mapo-lab: train motion-aware partitioned deformable splats on
//! synthetic scenes, run the toy experiment and the ablation ladder,
//! and render/evaluate checkpoints.
//!
//! Exit codes: 0 success, 2 config error, 3 numeric failure,
//! 4 I/O or corruption.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use mapo_core::ablate::{ladder_csv, reference_train_config, run_ladder};
use mapo_core::checkpoint::{load_checkpoint, render_checkpoint_frame};
use mapo_core::metrics::{psnr, ssim};
use mapo_core::scene::{reference_scene, SceneSpec};
use mapo_core::toy::{toy_fit, ToyCurveSpec, ToyMode};
use mapo_core::trainer::{run as train_run, ConsistencyMode, TrainConfig};
use mapo_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mapo-lab", version, about)]
struct Cli {
    /// Worker threads; 1 forces the deterministic single-threaded mode.
    /// Defaults to the MAPO_LAB_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a scene and write metrics, partition tree, checkpoint,
    /// eval frames, and summary.
    Train {
        #[arg(long)]
        scene: PathBuf,
        /// Training config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable the cross-frame consistency loss.
        #[arg(long)]
        no_consistency: bool,
        /// Disable static identification.
        #[arg(long)]
        no_static: bool,
        /// Disable temporal partitioning.
        #[arg(long)]
        no_partition: bool,
        /// Overwrite an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Fit the kinked toy curve in one of three modes.
    Toy {
        #[arg(long, value_enum)]
        mode: ToyModeArg,
        #[arg(long, default_value_t = 1500)]
        iters: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long)]
        force: bool,
    },
    /// Run the six-configuration ablation ladder on one scene and seed.
    Ablate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override total iterations for every row.
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Render one frame of a checkpoint to a PPM file.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        frame: u32,
        #[arg(long)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame PSNR/SSIM of a checkpoint on the held-out view.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// CSV output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the reference scene (and a default config) for editing.
    GenScene {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ToyModeArg {
    Single,
    Partitioned,
    Consistency,
}

impl From<ToyModeArg> for ToyMode {
    fn from(m: ToyModeArg) -> Self {
        match m {
            ToyModeArg::Single => ToyMode::Single,
            ToyModeArg::Partitioned => ToyMode::Partitioned,
            ToyModeArg::Consistency => ToyMode::PartitionedWithConsistency,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("MAPO_LAB_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    mapo_core::parallel::configure_threads(threads);

    match dispatch(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) => 2,
        Error::NonFiniteLoss { .. } => 3,
        Error::Io(_) | Error::CorruptCheckpoint(_) => 4,
        _ => 1,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            scene,
            config,
            out,
            seed,
            no_consistency,
            no_static,
            no_partition,
            force,
        } => cmd_train(
            &scene,
            config.as_deref(),
            &out,
            seed,
            no_consistency,
            no_static,
            no_partition,
            force,
        ),
        Command::Toy {
            mode,
            iters,
            out,
            seed,
            samples,
            force,
        } => cmd_toy(mode.into(), iters, &out, seed, samples, force),
        Command::Ablate {
            scene,
            out,
            config,
            seed,
            iters,
            force,
        } => cmd_ablate(&scene, config.as_deref(), &out, seed, iters, force),
        Command::Render {
            checkpoint,
            frame,
            view,
            out,
        } => cmd_render(&checkpoint, frame, view, &out),
        Command::Eval {
            checkpoint,
            scene,
            out,
        } => cmd_eval(&checkpoint, &scene, out.as_deref()),
        Command::GenScene { out, force } => cmd_gen_scene(&out, force),
    }
}

fn create_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        if !force {
            return Err(Error::Config(format!(
                "output directory {} exists; pass --force to overwrite",
                out.display()
            )));
        }
        std::fs::remove_dir_all(out)?;
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::create_dir(out)?;
    Ok(())
}

fn load_scene(path: &Path) -> Result<SceneSpec> {
    let bytes = std::fs::read(path)?;
    let spec: SceneSpec = serde_json::from_slice(&bytes)?;
    spec.validate()?;
    Ok(spec)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let bytes = std::fs::read(p)?;
            Ok(serde_json::from_slice(&bytes)?)
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic run id from the inputs that define the run.
fn run_id(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    let digest = hasher.finalize();
    digest
        .iter()
        .take(6)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(serde::Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    scene: Option<String>,
    config: Option<String>,
    seed: u64,
    out_dir: String,
    run_id: String,
    timings_sec: std::collections::BTreeMap<&'a str, f64>,
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<()> {
    let f = std::fs::File::create(out.join("manifest.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), manifest)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    scene_path: &Path,
    config_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    no_consistency: bool,
    no_static: bool,
    no_partition: bool,
    force: bool,
) -> Result<()> {
    let spec = load_scene(scene_path)?;
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if no_consistency {
        cfg.consistency = ConsistencyMode::Off;
    }
    if no_static {
        cfg.enable_static = false;
    }
    if no_partition {
        cfg.enable_partition = false;
    }
    create_out_dir(out, force)?;

    let started = Instant::now();
    let summary = train_run(cfg.clone(), spec, out)?;
    let train_secs = started.elapsed().as_secs_f64();

    let scene_bytes = std::fs::read(scene_path)?;
    let mut timings = std::collections::BTreeMap::new();
    timings.insert("total", train_secs);
    write_manifest(
        out,
        &RunManifest {
            command: "train",
            scene: Some(scene_path.display().to_string()),
            config: config_path.map(|p| p.display().to_string()),
            seed: cfg.seed,
            out_dir: out.display().to_string(),
            run_id: run_id(&[
                b"train",
                &scene_bytes,
                &serde_json::to_vec(&cfg).expect("config serializes"),
            ]),
            timings_sec: timings,
        },
    )?;
    println!(
        "train done: psnr {:.2} dB (crop {:.2} dB), {} instances, {} networks",
        summary.final_psnr_full,
        summary.final_psnr_crop,
        summary.instances_final,
        summary.networks_final
    );
    Ok(())
}

fn cmd_toy(
    mode: ToyMode,
    iters: u64,
    out: &Path,
    seed: u64,
    samples: usize,
    force: bool,
) -> Result<()> {
    create_out_dir(out, force)?;
    let spec = ToyCurveSpec {
        sample_count: samples,
        kinked: true,
    };
    let started = Instant::now();
    let result = toy_fit(&spec, mode, iters, seed);

    let mut csv = std::io::BufWriter::new(std::fs::File::create(out.join("toy.csv"))?);
    writeln!(csv, "t,target_x,target_y,target_z,pred_x,pred_y,pred_z,model")?;
    for row in &result.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            row.t,
            row.target.x,
            row.target.y,
            row.target.z,
            row.prediction.x,
            row.prediction.y,
            row.prediction.z,
            row.model
        )?;
    }
    csv.flush()?;

    #[derive(serde::Serialize)]
    struct ToySummary {
        mode: String,
        iterations: u64,
        seed: u64,
        mse: f64,
        boundary_gap: Option<f64>,
    }
    let summary = ToySummary {
        mode: format!("{mode:?}"),
        iterations: iters,
        seed,
        mse: result.mse,
        boundary_gap: result.boundary_gap,
    };
    let f = std::fs::File::create(out.join("toy_summary.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &summary)?;

    let mut timings = std::collections::BTreeMap::new();
    timings.insert("total", started.elapsed().as_secs_f64());
    write_manifest(
        out,
        &RunManifest {
            command: "toy",
            scene: None,
            config: None,
            seed,
            out_dir: out.display().to_string(),
            run_id: run_id(&[b"toy", format!("{mode:?}/{iters}/{samples}/{seed}").as_bytes()]),
            timings_sec: timings,
        },
    )?;
    println!(
        "toy {:?}: mse {:.6}{}",
        mode,
        result.mse,
        result
            .boundary_gap
            .map(|g| format!(", boundary gap {g:.6}"))
            .unwrap_or_default()
    );
    Ok(())
}

fn cmd_ablate(
    scene_path: &Path,
    config_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    iters: Option<u64>,
    force: bool,
) -> Result<()> {
    let spec = load_scene(scene_path)?;
    // The ladder defaults to the reference experiment config.
    let mut base = match config_path {
        Some(p) => load_config(Some(p))?,
        None => reference_train_config(),
    };
    if let Some(seed) = seed {
        base.seed = seed;
    }
    if let Some(iters) = iters {
        base.total_iterations = iters;
    }
    create_out_dir(out, force)?;

    let scene_bytes = std::fs::read(scene_path)?;
    let scene_hash = sha256_hex(&scene_bytes);

    let started = Instant::now();
    let rows = run_ladder(&base, &spec)?;
    std::fs::write(out.join("ladder.csv"), ladder_csv(&rows, &scene_hash))?;
    for row in &rows {
        let name = format!("summary_{}.json", row.label.replace('+', ""));
        let f = std::fs::File::create(out.join(name))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &row.summary)?;
    }

    let mut timings = std::collections::BTreeMap::new();
    timings.insert("total", started.elapsed().as_secs_f64());
    write_manifest(
        out,
        &RunManifest {
            command: "ablate",
            scene: Some(scene_path.display().to_string()),
            config: config_path.map(|p| p.display().to_string()),
            seed: base.seed,
            out_dir: out.display().to_string(),
            run_id: run_id(&[
                b"ablate",
                &scene_bytes,
                &serde_json::to_vec(&base).expect("config serializes"),
            ]),
            timings_sec: timings,
        },
    )?;
    for row in &rows {
        println!(
            "{:<12} psnr {:.3} crop {:.3} deform-calls {}",
            row.label,
            row.summary.final_psnr_full,
            row.summary.final_psnr_crop,
            row.summary.deform_calls_main
        );
    }
    Ok(())
}

fn cmd_render(checkpoint: &Path, frame: u32, view: usize, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let img = render_checkpoint_frame(&ckpt, frame, view)?;
    img.save_ppm(out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, scene_path: &Path, out: Option<&Path>) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let spec = load_scene(scene_path)?;
    if spec.t_frames != ckpt.cloud.t_total {
        return Err(Error::Config(format!(
            "scene has {} frames but checkpoint covers {}",
            spec.t_frames, ckpt.cloud.t_total
        )));
    }
    let held = spec
        .held_out_camera_index()
        .ok_or_else(|| Error::Config("scene has no held-out view".into()))?;
    let gt = mapo_core::scene::gen_scene(&spec);

    let mut csv = String::from("frame,psnr,ssim\n");
    for t in 0..spec.t_frames {
        let img = {
            let members = mapo_core::partition::active_set(&ckpt.cloud, t)?;
            mapo_core::pipeline::render_members_at(
                &ckpt.cloud,
                &ckpt.nets,
                &members,
                t,
                &spec.camera(held),
                spec.background(),
                &mapo_core::render::RenderOptions::default(),
            )?
        };
        let gt_img = mapo_core::scene::gt_frame(&spec, &gt, t, held)?;
        csv.push_str(&format!(
            "{},{},{}\n",
            t,
            psnr(&img, &gt_img)?,
            ssim(&img, &gt_img)?
        ));
    }
    match out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_gen_scene(out: &Path, force: bool) -> Result<()> {
    create_out_dir(out, force)?;
    let spec = reference_scene();
    let f = std::fs::File::create(out.join("reference_scene.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &spec)?;
    let f = std::fs::File::create(out.join("train_config.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &TrainConfig::default())?;
    let f = std::fs::File::create(out.join("reference_config.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &reference_train_config())?;
    println!("wrote {}", out.display());
    Ok(())
}
