//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or invalid input, 2 infeasible targets
//! (proposal budget exhausted), 3 I/O failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::Value;

use crate::annomodel::{
    parse_dataset, scenes_from_dataset, scenes_to_dataset, serialize_dataset, SourceScene,
};
use crate::evaluator::{match_and_score, parse_detections};
use crate::exec::Execution;
use crate::sampler::{sample_dataset, GenerationConfig, Resolution, SampleError};
use crate::scenegen::{generate_scene, SceneGenParams};
use crate::stats::{boxplot_table, dataset_stats, DatasetStats};
use crate::synth::raster::{
    write_png, Pattern, PixelRect, SceneRaster, TileLayout, TILE_LAYOUT_FILE,
};
use crate::synth::{apply_downscale, assign_splits, emit_dataset, EmitOptions, SynthError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// File name of the scene set written by `synth-scenes`.
pub const SCENES_FILE: &str = "scenes.json";

#[derive(Debug, Parser)]
#[command(
    name = "crowdcrop",
    version,
    about = "Crowd-aware crop sampling for pose datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic high-resolution source scenes.
    SynthScenes(SynthScenesArgs),
    /// Sample crops from source scenes and emit a dataset.
    Generate(GenerateArgs),
    /// Print dataset statistics of COCO keypoint files.
    Stats(StatsArgs),
    /// Score keypoint detections against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RasterMode {
    /// Pixels are computed from the scene uri on demand.
    Procedural,
    /// Pixels are written to disk as PNG tiles.
    Tiles,
}

#[derive(Debug, Args)]
struct SynthScenesArgs {
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// Seed of the first scene; scene k uses seed + k - 1.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = RasterMode::Procedural)]
    raster: RasterMode,
    #[arg(long, default_value_t = 2048)]
    tile_size: u32,
    /// JSON file with scene generator parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Parameter override, e.g. `--set n_persons=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// COCO file of source scenes.
    #[arg(long)]
    scenes: PathBuf,
    /// Generation config; the shipped reference config when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    annotations_only: bool,
    #[arg(long, value_name = "WxH")]
    downscale_to: Option<Resolution>,
    #[arg(long)]
    dataset_size: Option<usize>,
    /// Directory that relative raster uris resolve against; defaults to the
    /// directory of the scenes file.
    #[arg(long)]
    raster_root: Option<PathBuf>,
    /// Config override, e.g. `--set tolerances.avg_iou=0.02`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    dt: PathBuf,
    #[arg(long, default_value_t = 20)]
    max_dets: usize,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{message}")]
    Infeasible {
        message: String,
        snapshot: Option<DatasetStats>,
    },
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Infeasible { .. } => EXIT_INFEASIBLE,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::UnknownScene { .. } | SynthError::UnknownPerson { .. } => {
                CliError::Usage(e.to_string())
            }
            SynthError::Raster(crate::synth::raster::RasterError::OutOfBounds { .. }) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::SynthScenes(a) => synth_scenes(a),
        Command::Generate(a) => generate(a),
        Command::Stats(a) => stats(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Infeasible { snapshot, .. } = &e {
                let text = serde_json::to_string_pretty(snapshot).expect("stats serialize");
                eprintln!("accepted-crop statistics at termination:\n{text}");
            }
            e.code()
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

/// Sets `key` (dot-separated path) in a JSON object. The value is parsed as
/// JSON and falls back to a string.
fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Usage(format!(
                "override `{key}`: `{part}` is not inside an object"
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

fn with_overrides<T>(base: &T, overrides: &[String]) -> Result<T, CliError>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut v = serde_json::to_value(base).expect("serializable");
    for o in overrides {
        apply_override(&mut v, o)?;
    }
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("invalid override: {e}")))
}

fn synth_scenes(a: SynthScenesArgs) -> Result<(), CliError> {
    let base = match &a.params {
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => SceneGenParams::default(),
    };
    let params: SceneGenParams = with_overrides(&base, &a.overrides)?;
    if a.tile_size == 0 {
        return Err(CliError::Usage("--tile-size must be positive".into()));
    }
    create_dir(&a.out)?;
    let start = Instant::now();
    let mut scenes: Vec<SourceScene> = Execution::Parallel
        .map_range(a.count, |i| {
            let p = SceneGenParams {
                seed: a.seed + i as u64,
                ..params.clone()
            };
            generate_scene(&p, i as u64 + 1)
        })
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    if a.raster == RasterMode::Tiles {
        for s in &mut scenes {
            let dir_name = format!("scene_{}", s.id);
            write_tiles(s, &a.out.join(&dir_name), a.tile_size)?;
            s.uri = dir_name;
        }
    }
    let persons: usize = scenes.iter().map(|s| s.persons.len()).sum();
    write_text(
        &a.out.join(SCENES_FILE),
        &serialize_dataset(&scenes_to_dataset(&scenes)),
    )?;
    info!(
        "wrote {} scenes with {} persons to {} in {:.2?}",
        scenes.len(),
        persons,
        a.out.display(),
        start.elapsed()
    );
    Ok(())
}

fn write_tiles(scene: &SourceScene, dir: &Path, tile: u32) -> Result<(), CliError> {
    create_dir(dir)?;
    let pattern = Pattern::from_uri(&scene.uri)
        .ok_or_else(|| CliError::Usage(format!("scene {} has no procedural pattern", scene.id)))?;
    let layout = TileLayout {
        width: scene.width,
        height: scene.height,
        tile_size: tile,
    };
    let rows = scene.height.div_ceil(tile);
    let cols = scene.width.div_ceil(tile);
    let results = Execution::Parallel.map_range((rows * cols) as usize, |k| {
        let (row, col) = (k as u32 / cols, k as u32 % cols);
        let rect = PixelRect {
            x: col * tile,
            y: row * tile,
            w: tile.min(scene.width - col * tile),
            h: tile.min(scene.height - row * tile),
        };
        write_png(
            &dir.join(crate::synth::raster::tile_file_name(row, col)),
            &pattern.render(rect),
        )
    });
    for r in results {
        r.map_err(|e| CliError::Io(e.to_string()))?;
    }
    write_text(
        &dir.join(TILE_LAYOUT_FILE),
        &serde_json::to_string(&layout).expect("layout serializes"),
    )
}

fn load_config(a: &GenerateArgs) -> Result<GenerationConfig, CliError> {
    let base = match &a.config {
        Some(p) => {
            let text = read_text(p)?;
            GenerationConfig::from_json(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => GenerationConfig::panda_pose(),
    };
    let mut cfg: GenerationConfig = with_overrides(&base, &a.overrides)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.dataset_size {
        cfg.dataset_size = n;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn load_dataset(path: &Path) -> Result<crate::annomodel::Dataset, CliError> {
    let text = read_text(path)?;
    parse_dataset(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let cfg = load_config(&a)?;
    if let Some(d) = a.downscale_to {
        if d.width == 0
            || d.height == 0
            || !cfg.aspect_ratio.admits(d.width as f64, d.height as f64)
        {
            return Err(CliError::Usage(format!(
                "--downscale-to {}x{} does not honor the configured aspect ratio",
                d.width, d.height
            )));
        }
    }
    if a.workers == Some(0) {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let scenes = scenes_from_dataset(load_dataset(&a.scenes)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.scenes.display())))?;
    let exec = Execution::Parallel;
    let start = Instant::now();
    let sampled = exec.with_workers(a.workers, || sample_dataset(&scenes, &cfg, exec));
    let mut crops = match sampled {
        Ok(c) => c,
        Err(SampleError::BudgetExhausted { snapshot, .. }) => {
            let message = sampled_error_message(&cfg, &snapshot);
            return Err(CliError::Infeasible { message, snapshot });
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    info!("sampled {} crops in {:.2?}", crops.len(), start.elapsed());

    if let Some(d) = a.downscale_to {
        apply_downscale(&mut crops, d);
    }
    let splits = assign_splits(&crops, cfg.split_fractions);
    let raster_root = a
        .raster_root
        .clone()
        .unwrap_or_else(|| a.scenes.parent().map(Path::to_path_buf).unwrap_or_default());
    let src = SceneRaster::new(raster_root);
    let opts = EmitOptions {
        out_dir: &a.out,
        extension: "png",
        annotations_only: a.annotations_only,
        downscale_to: a.downscale_to,
        exec,
    };
    let emit_start = Instant::now();
    let manifest = exec.with_workers(a.workers, || {
        emit_dataset(&crops, &splits, &scenes, &src, &cfg, &opts)
    })?;
    info!(
        "wrote {} crops to {} in {:.2?} (total {:.2?})",
        manifest.crop_count,
        a.out.display(),
        emit_start.elapsed(),
        start.elapsed()
    );
    Ok(())
}

fn sampled_error_message(cfg: &GenerationConfig, snapshot: &Option<DatasetStats>) -> String {
    let accepted = snapshot.as_ref().map_or(0, |s| s.image_count);
    format!(
        "infeasible targets: a slot exhausted its proposal budget of {} after {} accepted crops",
        cfg.proposal_budget, accepted
    )
}

fn stats(a: StatsArgs) -> Result<(), CliError> {
    let mut report = serde_json::Map::new();
    let mut rows = Vec::new();
    for f in &a.files {
        let d = load_dataset(f)?;
        let s = dataset_stats(&d).ok();
        report.insert(
            f.display().to_string(),
            serde_json::to_value(&s).expect("stats serialize"),
        );
        if let Some(s) = s {
            rows.push((f.display().to_string(), s));
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&Value::Object(report)).expect("report serializes")
    );
    let refs: Vec<(String, &DatasetStats)> = rows.iter().map(|(n, s)| (n.clone(), s)).collect();
    if !refs.is_empty() {
        eprint!("{}", boxplot_table(&refs));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    if a.workers == Some(0) {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let gts = load_dataset(&a.gt)?;
    let dets = parse_detections(&read_text(&a.dt)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.dt.display())))?;
    let exec = Execution::Parallel;
    let r = exec
        .with_workers(a.workers, || match_and_score(&dets, &gts, a.max_dets, exec))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&r).expect("result serializes")
    );
    eprintln!(
        "AP {:.1}  AR {:.1}  F1 {:.1}  (max {} detections per image)",
        r.ap, r.ar, r.f1, a.max_dets
    );
    Ok(())
}
