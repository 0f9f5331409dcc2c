//! `hullstereo` command-line front end.
//!
//! Every subcommand writes a resolved-config snapshot next to its outputs so
//! a run can be repeated exactly. Exit codes: 0 ok, 2 configuration, 3 I/O,
//! 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use hullstereo::disparity::{DisparityMap, Resolution};
use hullstereo::eval::{ablation_run, compute_metrics, perturb_masks, write_ablation_csv, MorphOp};
use hullstereo::geometry::{carve_hull, compute_bounds, BoundsMap, CameraSet, VisualHull, FEATURE_SCALE};
use hullstereo::io::{read_disparity, read_image, read_mask, write_disparity};
use hullstereo::matcher::{match_stereo_with, HullMode, MatchConfig, MatchHooks, MatchObserver};
use hullstereo::memstat::{instrument_run, model_memory, ModelParams, Strategy};
use hullstereo::pipeline::{run_pipeline, write_pipeline_outputs, HullConfig, PipelineConfig, StageError};
use hullstereo::synth::{desk_cameras, generate_scene, load_obj, render, Capture, Scene, SceneObject, Stage};
use hullstereo::Error;

#[derive(Parser)]
#[command(name = "hullstereo", version, about = "Visual-hull guided stereo matching")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "HULLSTEREO_THREADS")]
    threads: Option<usize>,

    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a procedural scene into a scene directory.
    Synth(SynthArgs),
    /// Carve a visual hull from a scene directory's masks.
    Hull(HullArgs),
    /// Extract feature-resolution disparity bounds from a hull.
    Bounds(BoundsArgs),
    /// Match a rectified stereo pair.
    Match(MatchArgs),
    /// Score a disparity map against ground truth.
    Eval(EvalArgs),
    /// Run every hull routing mode over a dataset of scene directories.
    Ablate(AblateArgs),
    /// Compare modeled and observed correlation memory across widths.
    Memstat(MemstatArgs),
    /// Synthesize (or load), carve, match and evaluate in one go.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Render this scene file instead of generating one from the seed.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Extra OBJ meshes to place in the scene (world coordinates).
    #[arg(long)]
    obj: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HullArgs {
    /// Scene directory with cameras.json and masks/.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_depth: Option<u32>,
    /// Grow masks by this many pixels before carving.
    #[arg(long, conflicts_with = "erode")]
    dilate: Option<usize>,
    /// Shrink masks by this many pixels before carving.
    #[arg(long)]
    erode: Option<usize>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    hull: PathBuf,
    /// cameras.json providing the stereo rig.
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    bounds: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hull_mode: Option<HullMode>,
    #[arg(long)]
    out: PathBuf,
    /// Write the feature-resolution map after each stage here.
    #[arg(long)]
    dump_iters: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    occ: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values = ["none", "initial_only", "update_only", "both"])]
    modes: Vec<HullMode>,
}

#[derive(Args)]
struct MemstatArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [256, 512, 1024])]
    widths: Vec<usize>,
    #[arg(long, default_value_t = 320)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    radius: usize,
    #[arg(long, default_value_t = 8)]
    groups: usize,
    #[arg(long, default_value_t = 4)]
    bytes_per_value: usize,
    /// Skip the instrumented runs and report the model only.
    #[arg(long)]
    model_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Existing scene directory to ingest instead of synthesizing.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, overrides_with = "no_hull")]
    hull: bool,
    #[arg(long)]
    no_hull: bool,
    #[arg(long)]
    hull_mode: Option<HullMode>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Maps the first library error in the chain to a process exit code.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        let core = cause
            .downcast_ref::<StageError>()
            .map(|s| &s.source)
            .or_else(|| cause.downcast_ref::<Error>());
        if let Some(core) = core {
            return match core {
                Error::Config(_) | Error::Input(_) | Error::Unsupported(_) | Error::Json(_) => 2,
                Error::Io(_) | Error::Parse { .. } | Error::Csv(_) => 3,
                Error::Domain(_) | Error::OutOfRange { .. } | Error::EmptyReport => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Hull(a) => hull(a),
        Command::Bounds(a) => bounds(a),
        Command::Match(a) => match_pair(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Memstat(a) => memstat(a),
        Command::Pipeline(a) => pipeline(a, cli.threads),
    }
}

/// Parses `path` as JSON, with missing fields taking their defaults.
fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
    let cfg = serde_json::from_str(&text).map_err(Error::from).with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg)
}

/// Snapshot written beside a single-file output: `disp.pfm` -> `disp.config.json`.
fn write_snapshot(out_file: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let path = out_file.with_extension("config.json");
    fs::write(&path, serde_json::to_string_pretty(value)?).map_err(Error::from)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut scene = match &a.scene {
        Some(path) => Scene::load(path)?,
        None => generate_scene(a.seed),
    };
    for (i, path) in a.obj.iter().enumerate() {
        scene.objects.push(SceneObject {
            shape: load_obj(path)?,
            texture_seed: a.seed.wrapping_add(1000 + i as u64),
        });
    }
    scene.validate()?;
    let cameras = desk_cameras(&scene.stage);
    let rendered = render(&scene, &cameras.rig, &cameras.ring, a.seed);
    let capture = Capture {
        cameras,
        left: rendered.left,
        right: rendered.right,
        gt_disparity: Some(rendered.gt_disparity),
        occlusion: Some(rendered.occlusion),
        masks: Some(rendered.masks),
    };
    capture.save(&a.out)?;
    scene.save(a.out.join("scene.json"))?;
    let snapshot = json!({ "command": "synth", "seed": a.seed, "scene": a.scene, "obj": a.obj });
    fs::write(a.out.join("resolved_config.json"), serde_json::to_string_pretty(&snapshot)?).map_err(Error::from)?;
    info!("wrote scene with {} objects to {}", scene.objects.len(), a.out.display());
    Ok(())
}

fn hull(a: HullArgs) -> anyhow::Result<()> {
    let mut cfg: HullConfig = load_config(a.config.as_deref())?;
    if let Some(d) = a.max_depth {
        cfg.max_depth = d;
    }
    let capture = Capture::load(&a.scene).with_context(|| format!("loading {}", a.scene.display()))?;
    let masks = capture
        .masks
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{} has no silhouette masks", a.scene.display())))?;
    let masks = match (a.dilate, a.erode) {
        (Some(r), _) => perturb_masks(masks, MorphOp::Dilate, r),
        (_, Some(r)) => perturb_masks(masks, MorphOp::Erode, r),
        _ => masks.to_vec(),
    };
    let scene_file = a.scene.join("scene.json");
    let stage = if scene_file.exists() {
        Scene::load(scene_file)?.stage
    } else {
        Stage::default()
    };
    let hull = carve_hull(&capture.silhouettes_from(&masks)?, stage.hull_root(cfg.root_margin), cfg.max_depth)?;
    ensure_parent(&a.out)?;
    hull.save(&a.out)?;
    write_snapshot(
        &a.out,
        &json!({ "command": "hull", "scene": a.scene, "hull": cfg, "dilate": a.dilate, "erode": a.erode }),
    )?;
    info!("hull with {} nodes written to {}", hull.node_count(), a.out.display());
    Ok(())
}

fn bounds(a: BoundsArgs) -> anyhow::Result<()> {
    let hull = VisualHull::load(&a.hull).with_context(|| format!("reading {}", a.hull.display()))?;
    let cameras = CameraSet::load(&a.cameras).with_context(|| format!("reading {}", a.cameras.display()))?;
    let map = compute_bounds(&hull, &cameras.rig, FEATURE_SCALE);
    ensure_parent(&a.out)?;
    map.save(&a.out)?;
    write_snapshot(
        &a.out,
        &json!({ "command": "bounds", "hull": a.hull, "cameras": a.cameras, "feature_scale": FEATURE_SCALE }),
    )?;
    info!("{} of {} pixels bounded", map.valid_count(), map.width() * map.height());
    Ok(())
}

/// Writes every intermediate feature-resolution map as PFM.
struct IterDumper {
    dir: PathBuf,
    error: Option<Error>,
}

impl IterDumper {
    fn write(&mut self, name: String, map: &DisparityMap) {
        if self.error.is_none() {
            self.error = write_disparity(self.dir.join(name), map).err();
        }
    }
}

impl MatchObserver for IterDumper {
    fn initial(&mut self, d0: &DisparityMap) {
        self.write("d0.pfm".into(), d0);
    }

    fn iteration(&mut self, index: usize, _before: &DisparityMap, unsmoothed: &DisparityMap, after: &DisparityMap) {
        self.write(format!("iter_{:02}_unsmoothed.pfm", index + 1), unsmoothed);
        self.write(format!("iter_{:02}.pfm", index + 1), after);
    }
}

fn match_pair(a: MatchArgs) -> anyhow::Result<()> {
    let mut cfg: MatchConfig = load_config(a.config.as_deref())?;
    if let Some(mode) = a.hull_mode {
        cfg.hull_mode = mode;
    }
    let left = read_image(&a.left).with_context(|| format!("reading {}", a.left.display()))?;
    let right = read_image(&a.right).with_context(|| format!("reading {}", a.right.display()))?;
    let bounds = a
        .bounds
        .as_ref()
        .map(|p| BoundsMap::load(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let mut dumper = match &a.dump_iters {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(Error::from)?;
            Some(IterDumper {
                dir: dir.clone(),
                error: None,
            })
        }
        None => None,
    };
    let hooks = MatchHooks {
        tracker: None,
        observer: dumper.as_mut().map(|d| d as &mut dyn MatchObserver),
    };
    let disparity = match_stereo_with(&left, &right, bounds.as_ref(), &cfg, hooks)?;
    if let Some(e) = dumper.and_then(|d| d.error) {
        return Err(e.into());
    }
    ensure_parent(&a.out)?;
    write_disparity(&a.out, &disparity)?;
    write_snapshot(
        &a.out,
        &json!({ "command": "match", "left": a.left, "right": a.right, "bounds": a.bounds, "matcher": cfg }),
    )?;
    info!("{} valid pixels written to {}", disparity.valid_count(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let pred = read_disparity(&a.pred, Resolution::Full).with_context(|| format!("reading {}", a.pred.display()))?;
    let gt = read_disparity(&a.gt, Resolution::Full).with_context(|| format!("reading {}", a.gt.display()))?;
    let occ = a
        .occ
        .as_ref()
        .map(|p| read_mask(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let report = compute_metrics(&pred, &gt, occ.as_ref(), None)?;
    ensure_parent(&a.out)?;
    fs::write(&a.out, serde_json::to_string_pretty(&report)?).map_err(Error::from)?;
    info!("epe_all {:.3}, d1_all {:.2}%", report.epe_all, report.d1_all);
    Ok(())
}

fn ablate(a: AblateArgs) -> anyhow::Result<()> {
    let cfg: PipelineConfig = load_config(a.config.as_deref())?;
    let rows = ablation_run(&a.data, &a.modes, &cfg.hull, &cfg.matcher)?;
    if rows.is_empty() {
        bail!(Error::Input(format!("no usable scenes under {}", a.data.display())));
    }
    ensure_parent(&a.out)?;
    write_ablation_csv(&rows, &a.out)?;
    write_snapshot(
        &a.out,
        &json!({ "command": "ablate", "data": a.data, "modes": a.modes, "hull": cfg.hull, "matcher": cfg.matcher }),
    )?;
    info!("{} rows written to {}", rows.len(), a.out.display());
    Ok(())
}

fn memstat(a: MemstatArgs) -> anyhow::Result<()> {
    let params = ModelParams {
        k: a.k,
        radius: a.radius,
        groups: a.groups,
        bytes_per_value: a.bytes_per_value,
    };
    ensure_parent(&a.out)?;
    let mut w = csv::Writer::from_path(&a.out).map_err(Error::from)?;
    w.write_record(["strategy", "w", "modeled_bytes", "observed_bytes"]).map_err(Error::from)?;
    for &width in &a.widths {
        let observed = if a.model_only {
            None
        } else {
            Some(instrument_run(width, a.height, params, 0)?)
        };
        for strategy in Strategy::ALL {
            let modeled = model_memory(strategy, width, a.height, params)?.peak_bytes;
            let seen = observed
                .as_ref()
                .and_then(|o| o.iter().find(|p| p.strategy == strategy))
                .map(|p| p.observed_bytes.to_string())
                .unwrap_or_default();
            w.write_record([strategy.name().to_string(), width.to_string(), modeled.to_string(), seen])
                .map_err(Error::from)?;
        }
    }
    w.flush().map_err(Error::from)?;
    write_snapshot(
        &a.out,
        &json!({ "command": "memstat", "widths": a.widths, "height": a.height, "params": params, "model_only": a.model_only }),
    )?;
    Ok(())
}

fn pipeline(a: PipelineArgs, threads: Option<usize>) -> anyhow::Result<()> {
    let mut cfg: PipelineConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.scene.is_some() {
        cfg.scene_dir = a.scene;
    }
    if a.no_hull {
        cfg.use_hull = false;
    } else if a.hull {
        cfg.use_hull = true;
    }
    if let Some(mode) = a.hull_mode {
        cfg.matcher.hull_mode = mode;
    }
    cfg.threads = threads;
    let result = run_pipeline(&cfg)?;
    write_pipeline_outputs(&a.out, &cfg, &result)?;
    if let Some(r) = &result.report {
        info!("epe_all {:.3}, epe_noc {:.3}, d1_all {:.2}%", r.epe_all, r.epe_noc, r.d1_all);
    }
    Ok(())
}
