use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use segsplat::io::{self, SceneConfig};
use segsplat::pipeline::{build_scene, evaluate, evaluate_queries, load_images, load_inputs, train_scene};
use segsplat::render::{render_highlight, render_scene};
use segsplat::semantics::{export_object, query, EmbeddingTable, FileProvider, Prompt};
use segsplat::synthetic::{dynamic_scene, nested_scene, tracking_fixture, write_scene, write_tracking_fixture};
use segsplat::tracking::consolidate;
use segsplat::{Granularity, SceneModel};
use segsplat_server::{AppState, ServerConfig, DEFAULT_PORT, DIM};

#[derive(Parser)]
#[command(name = "segsplat", version, about = "Object-partitioned Gaussian splatting with open-vocabulary retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn raw tracker output into consolidated per-object id maps and tracks.json.
    Consolidate(ConsolidateArgs),
    /// Assign object ids to the point cloud and write the initial checkpoint.
    Init(InitArgs),
    /// Train a scene and write the checkpoint.
    Train(TrainArgs),
    /// Rank objects against an embedding; optionally write a highlight render.
    Query(QueryArgs),
    /// Write one object's Gaussians as PLY.
    Export(ExportArgs),
    /// Score renders, object masks and prompts against ground truth.
    Eval(EvalArgs),
    /// Render a view, optionally highlighting one object.
    Render(RenderArgs),
    /// Write a deterministic synthetic scene.
    GenSynthetic(GenArgs),
    /// Serve the HTTP query API over a checkpoint.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ConsolidateArgs {
    /// Raw masks: PNG id-map directory or RLE JSON file.
    #[arg(long)]
    masks: PathBuf,
    /// Scene config whose `tracking` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for id maps and tracks.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    detect_interval: Option<usize>,
    #[arg(long)]
    no_detect: bool,
    #[arg(long)]
    no_multi_track: bool,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the init report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Start from an initialized checkpoint instead of initializing from the config.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration losses and PSNR as CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Small,
    Middle,
    Large,
}

impl From<Level> for Granularity {
    fn from(l: Level) -> Self {
        match l {
            Level::Small => Granularity::Small,
            Level::Middle => Granularity::Middle,
            Level::Large => Granularity::Large,
        }
    }
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON array with the query embedding.
    #[arg(long, conflicts_with_all = ["prompt", "prompts"])]
    embedding: Option<PathBuf>,
    /// Prompt id looked up in `--prompts`.
    #[arg(long, requires = "prompts")]
    prompt: Option<String>,
    /// JSON map of prompt id to embedding.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long, value_enum)]
    granularity: Option<Level>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Result JSON; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Render the top hit highlighted into this PNG.
    #[arg(long)]
    highlight: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    camera: usize,
    #[arg(long)]
    time: Option<f64>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    object: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scene config supplying cameras and images.
    #[arg(long)]
    config: PathBuf,
    /// Ground-truth consolidated masks; defaults to the checkpoint's own masks.
    #[arg(long)]
    gt_masks: Option<PathBuf>,
    /// Prompts with expected objects (JSON list).
    #[arg(long, requires = "prompt_embeddings")]
    prompts: Option<PathBuf>,
    /// JSON map of prompt text to embedding.
    #[arg(long)]
    prompt_embeddings: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Camera index, into `--cameras` when given, else into the checkpoint's cameras.
    #[arg(long, default_value_t = 0)]
    camera: usize,
    #[arg(long)]
    cameras: Option<PathBuf>,
    #[arg(long)]
    time: Option<f64>,
    #[arg(long)]
    object: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    Nested,
    Dynamic,
    Tracking,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    fixture: Fixture,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Time steps of the dynamic fixture.
    #[arg(long, default_value_t = 17)]
    steps: usize,
    /// Override the generated config's iteration count.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, env = "SEGSPLAT_PORT", default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Text embedding endpoint (`POST {"text"}` answering `{"vector"}`).
    #[arg(long)]
    embed_url: Option<String>,
    /// Static files served at `/`, such as the browser console bundle.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Concurrent renders.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Consolidate(a) => cmd_consolidate(a),
        Command::Init(a) => cmd_init(a),
        Command::Train(a) => cmd_train(a),
        Command::Query(a) => cmd_query(a),
        Command::Export(a) => cmd_export(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Render(a) => cmd_render(a),
        Command::GenSynthetic(a) => cmd_gen(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<SceneConfig> {
    let mut config = SceneConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn load_scene(path: &Path) -> Result<SceneModel> {
    io::load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn cmd_consolidate(a: ConsolidateArgs) -> Result<()> {
    let mut tracking = match &a.config {
        Some(p) => load_config(p, None)?.tracking,
        None => Default::default(),
    };
    if let Some(n) = a.detect_interval {
        tracking.detect_interval = n;
    }
    tracking.detect_new_objects &= !a.no_detect;
    tracking.resolve_multi_tracks &= !a.no_multi_track;
    let raw = io::read_raw_masks(&a.masks).with_context(|| format!("reading {}", a.masks.display()))?;
    let c = consolidate(&raw, &tracking)?;
    io::write_tracked_masks(&a.out, &c.masks)?;
    io::write_json(a.out.join("detections.json"), &c.detections)?;
    log::info!(
        "{} frames, {} tracks, {} detections -> {}",
        c.masks.frame_count(),
        c.masks.registry.tracks.len(),
        c.detections.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_init(a: InitArgs) -> Result<()> {
    let config = load_config(&a.config, a.seed)?;
    let inputs = load_inputs(&config)?;
    let (scene, report) = build_scene(&inputs, &config)?;
    io::save_checkpoint(&a.out, &scene)?;
    if let Some(p) = &a.report {
        io::write_json(p, &report)?;
    }
    log::info!("{} Gaussians, {} objects, {} merges", report.gaussians, report.objects.len(), report.merges.len());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut config = load_config(&a.config, a.seed)?;
    if let Some(n) = a.iterations {
        config.train = config.train.with_iterations(n);
    }
    let (scene, images) = match &a.from {
        Some(p) => {
            let mut scene = load_scene(p)?;
            scene.config = config.train.clone();
            let base = config.cameras.parent().unwrap_or(Path::new("."));
            let images = load_images(&scene.cameras, base)?;
            (scene, images)
        }
        None => {
            let inputs = load_inputs(&config)?;
            let (scene, _) = build_scene(&inputs, &config)?;
            (scene, inputs.images)
        }
    };
    let table = match &config.embeddings {
        Some(p) => Some(EmbeddingTable::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let (scene, log) = train_scene(scene, images, table.as_ref())?;
    io::save_checkpoint(&a.out, &scene)?;
    if let Some(p) = &a.metrics {
        io::write_file(p, log.to_csv().as_bytes())?;
    }
    if let Some(last) = log.rows.iter().rev().find_map(|r| r.psnr) {
        log::info!("{} Gaussians, last training PSNR {last:.2}", scene.gaussians.len());
    }
    Ok(())
}

fn cmd_query(a: QueryArgs) -> Result<()> {
    let scene = load_scene(&a.checkpoint)?;
    let vector: Vec<f32> = match (&a.embedding, &a.prompt, &a.prompts) {
        (Some(p), _, _) => io::read_json(p)?,
        (None, Some(id), Some(p)) => {
            let table: BTreeMap<String, Vec<f32>> = io::read_json(p)?;
            table.get(id).cloned().ok_or_else(|| anyhow!("prompt {id:?} is not in {}", p.display()))?
        }
        _ => bail!("give --embedding, or --prompt with --prompts"),
    };
    let result = query(&scene, &vector, a.granularity.map(Into::into), a.top_k)?;
    let json = serde_json::to_string_pretty(&result)?;
    match &a.out {
        Some(p) => io::write_file(p, json.as_bytes())?,
        None => println!("{json}"),
    }
    if let Some(png) = &a.highlight {
        let best = result.best().ok_or_else(|| anyhow!("query returned no objects"))?;
        let camera = scene
            .cameras
            .get(a.camera)
            .ok_or_else(|| anyhow!("camera {} out of range ({} cameras)", a.camera, scene.cameras.len()))?;
        let time = a.time.unwrap_or(camera.time);
        render_highlight(&scene, best.object_id, best.granularity, camera, time, DIM)?.save_png(png)?;
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let scene = load_scene(&a.checkpoint)?;
    let level = scene.level_of(a.object).ok_or_else(|| anyhow!("unknown object {}", a.object))?;
    let mut bytes = Vec::new();
    let n = export_object(&scene, a.object, level, &mut bytes)?;
    io::write_file(&a.out, &bytes)?;
    log::info!("{n} Gaussians of object {} -> {}", a.object, a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let scene = load_scene(&a.checkpoint)?;
    let config = load_config(&a.config, None)?;
    let cameras = io::read_cameras(&config.cameras)?;
    let base = config.cameras.parent().unwrap_or(Path::new("."));
    let images = load_images(&cameras, base)?;
    let gt = match &a.gt_masks {
        Some(p) => io::read_tracked_masks(p)?,
        None => scene.masks.clone(),
    };
    let mut report = evaluate(&scene, &cameras, &images, &gt)?;
    if let (Some(prompts), Some(vectors)) = (&a.prompts, &a.prompt_embeddings) {
        let prompts: Vec<Prompt> = io::read_json(prompts)?;
        let provider = FileProvider {
            table: EmbeddingTable::new(0),
            prompts: io::read_json(vectors)?,
        };
        report.set_queries(evaluate_queries(&scene, &prompts, &provider)?);
    }
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => io::write_file(p, json.as_bytes())?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let scene = load_scene(&a.checkpoint)?;
    let cameras = match &a.cameras {
        Some(p) => io::read_cameras(p)?,
        None => scene.cameras.clone(),
    };
    let camera = cameras
        .get(a.camera)
        .ok_or_else(|| anyhow!("camera {} out of range ({} cameras)", a.camera, cameras.len()))?;
    let time = a.time.unwrap_or(camera.time);
    if !(0.0..=1.0).contains(&time) {
        bail!("time {time} is outside [0, 1]");
    }
    let image = match a.object {
        Some(id) => {
            let level = scene.level_of(id).ok_or_else(|| anyhow!("unknown object {id}"))?;
            render_highlight(&scene, id, level, camera, time, DIM)?
        }
        None => render_scene(&scene, camera, time).raster.image,
    };
    image.save_png(&a.out)?;
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let path = match a.fixture {
        Fixture::Nested | Fixture::Dynamic => {
            let mut synth = match a.fixture {
                Fixture::Nested => nested_scene(a.seed),
                _ => dynamic_scene(a.seed, a.steps),
            };
            if let Some(n) = a.iterations {
                synth.train = synth.train.with_iterations(n);
            }
            write_scene(&a.out, &synth)?
        }
        Fixture::Tracking => write_tracking_fixture(&a.out, &tracking_fixture())?,
    };
    println!("{}", path.display());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    if !a.checkpoint.is_file() {
        bail!("checkpoint {} does not exist", a.checkpoint.display());
    }
    let mut config = ServerConfig {
        embed_url: a.embed_url,
        static_dir: a.static_dir,
        ..ServerConfig::default()
    };
    if let Some(w) = a.workers {
        config.render_workers = w;
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let state = AppState::new(config);
        let loading = segsplat_server::load_in_background(state.clone(), a.checkpoint);
        let server = tokio::spawn(segsplat_server::serve((a.host, a.port).into(), state));
        loading.await??;
        server.await??;
        Ok(())
    })
}
