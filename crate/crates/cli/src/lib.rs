//! Argument definitions and command implementations for the `wsci` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use wsci_fusion::attribution::{attribute, background, write_report};
use wsci_fusion::data::{
    compute_norm_constants, grid_footprints, read_chips, read_footprints, sample_chips,
    write_chips, write_footprints, Raster, SampleConfig, Split, SplitConfig, SyntheticWorld,
    PIXEL_SIZE_DEG,
};
use wsci_fusion::evaluation::{
    calibration_report, dense_reports, grid_sites, validate_sparse, SparseConfig,
};
use wsci_fusion::inference::{run_tiles, tile_jobs, EnsembleConfig};
use wsci_fusion::io::{read_json, sha256_file, write_csv, write_json};
use wsci_fusion::network::Squeeze;
use wsci_fusion::training::{train, transfer_train, Checkpoint, TrainConfig, TransferMode};
use wsci_fusion::{ArchitectureSpec, Error, ModelState, RngStream};

#[derive(Debug, Parser)]
#[command(
    name = "wsci",
    version,
    about = "Fuse sparse lidar structure samples with wall-to-wall SAR imagery"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic world: SAR rasters, dense truth, sparse footprints.
    Synth(SynthArgs),
    /// Grid footprints onto a reference raster's pixel grid.
    Grid(GridArgs),
    /// Cut 40x40 training chips from input and target rasters.
    Sample(SampleArgs),
    /// Train a model on the training split of a chip file.
    Train(TrainArgs),
    /// Adapt a trained checkpoint to new targets.
    Transfer(TransferArgs),
    /// Predict a four-band mosaic with the shifted-window ensemble.
    Infer(InferArgs),
    /// Validate against held-out chips or a synthetic world's dense truth.
    Evaluate(EvaluateArgs),
    /// Occlusion attribution for one output pixel of one chip.
    Attribute(AttributeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Width and height of the world in cells.
    #[arg(long)]
    pub extent: Option<usize>,
    /// Footprints per square kilometre.
    #[arg(long)]
    pub density: Option<f64>,
    /// Acquisition quarter to render.
    #[arg(long, default_value_t = 1)]
    pub quarter: i32,
    /// Put the signal in the HH layer only.
    #[arg(long)]
    pub hh_only: bool,
    /// JSON world configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Footprint CSV (lon, lat, quarter, wsci, valid).
    #[arg(long)]
    pub footprints: PathBuf,
    /// Raster whose geometry defines the output grid.
    #[arg(long)]
    pub like: PathBuf,
    /// Quarter to keep.
    #[arg(long)]
    pub quarter: i32,
    /// Output raster path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Seven-band input raster.
    #[arg(long)]
    pub rasters: PathBuf,
    /// One-band sparse target raster.
    #[arg(long)]
    pub target: PathBuf,
    /// Quarter recorded in the chip ids.
    #[arg(long, default_value_t = 1)]
    pub quarter: i32,
    /// Spacing between chip origins in pixels.
    #[arg(long, default_value_t = 40)]
    pub stride: usize,
    /// Minimum valid target pixels per chip.
    #[arg(long, default_value_t = 16)]
    pub min_valid: usize,
    /// Maximum chips kept per spatial block.
    #[arg(long, default_value_t = 300)]
    pub max_per_block: usize,
    /// Edge of the spatial blocks in kilometres.
    #[arg(long, default_value_t = 80.0)]
    pub block_km: f64,
    /// Seed for per-block subsampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output chip file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-width network.
    Default,
    /// Half-width network for desk-scale runs.
    Desk,
    /// Very small network for smoke tests.
    Tiny,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Chip file.
    #[arg(long)]
    pub chips: PathBuf,
    /// JSON training configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Network size.
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    /// Use windowed squeeze-excitation with this radius instead of global pooling.
    #[arg(long)]
    pub se_radius: Option<usize>,
    /// Number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Chips per batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for initialisation, shuffling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the block split.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Fraction of blocks held out for testing.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Re-optimise every parameter.
    Full,
    /// Retrain only the output head.
    FrozenHead,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Trained base checkpoint.
    #[arg(long)]
    pub base: PathBuf,
    /// Chip file carrying the new targets.
    #[arg(long)]
    pub chips: PathBuf,
    /// Which parameters to retrain.
    #[arg(long, value_enum, default_value_t = ModeArg::FrozenHead)]
    pub mode: ModeArg,
    /// JSON training configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Chips per batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for shuffling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Seven-band input raster.
    #[arg(long)]
    pub rasters: PathBuf,
    /// Quarter recorded in the output sidecar.
    #[arg(long, default_value_t = 1)]
    pub quarter: i32,
    /// Tile edge in pixels.
    #[arg(long, default_value_t = 1600)]
    pub tile_size: usize,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Comma-separated diagonal window offsets in pixels.
    #[arg(long, value_delimiter = ',')]
    pub offsets: Option<Vec<usize>>,
    /// Dropout passes per offset.
    #[arg(long)]
    pub mc_passes: Option<usize>,
    /// Seed for dropout draws.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable dropout (deterministic passes).
    #[arg(long)]
    pub no_dropout: bool,
    /// JSON ensemble configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output mosaic raster.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["chips", "world"])))]
pub struct EvaluateArgs {
    /// Checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Chip file; its test split is validated.
    #[arg(long)]
    pub chips: Option<PathBuf>,
    /// Directory written by `synth`; validated against its dense truth.
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Dropout passes per chip (chip mode).
    #[arg(long, default_value_t = 5)]
    pub mc_passes: usize,
    /// Seed for dropout draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated observed-value bin edges for the calibration table.
    #[arg(long, value_delimiter = ',', default_value = "6,7,8,9,10,11,12.000001")]
    pub bins: Vec<f64>,
    /// Site edge in pixels (world mode).
    #[arg(long, default_value_t = 64)]
    pub site_size: usize,
    /// Tile edge in pixels (world mode).
    #[arg(long, default_value_t = 1600)]
    pub tile_size: usize,
    /// Worker threads (world mode).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Output JSON report; CSV tables are written next to it.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    /// Checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Chip file; also the background reference set.
    #[arg(long)]
    pub chips: PathBuf,
    /// Id of the chip to explain.
    #[arg(long)]
    pub chip_id: u64,
    /// Target output pixel as `row,col`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub pixel: Vec<usize>,
    /// Occlusion patch radius in pixels.
    #[arg(long, default_value_t = 1)]
    pub radius: usize,
    /// Seed for choosing background chips.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON report; the influence raster is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    /// Single-line JSON rendering for standard error.
    pub fn to_line(&self) -> String {
        json!({ "code": self.code, "error": self.message }).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let input = match &e {
            Error::InvalidArgument(_)
            | Error::InvalidArchitecture(_)
            | Error::SpecMismatch { .. }
            | Error::CorruptCheckpoint(_)
            | Error::CorruptFile { .. }
            | Error::Json(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        };
        Self {
            code: if input { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub timings: BTreeMap<String, f64>,
}

struct Run {
    manifest: RunManifest,
    start: Instant,
}

impl Run {
    fn new(command: &str, seed: u64) -> Self {
        Self {
            manifest: RunManifest {
                command: command.into(),
                config: Value::Null,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                seed,
                timings: BTreeMap::new(),
            },
            start: Instant::now(),
        }
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        require(path)?;
        self.manifest
            .inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn raster_input(&mut self, path: &Path) -> CliResult<()> {
        self.input(path)?;
        self.input(&wsci_fusion::data::sidecar_path(path))
    }

    fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    fn time(&mut self, key: &str, since: Instant) {
        self.manifest
            .timings
            .insert(key.into(), since.elapsed().as_secs_f64());
    }

    /// Writes the manifest at `path` and prints it on standard output.
    fn finish(mut self, path: &Path) -> CliResult<()> {
        self.manifest
            .timings
            .insert("total_seconds".into(), self.start.elapsed().as_secs_f64());
        write_json(path, &self.manifest)?;
        println!(
            "{}",
            serde_json::to_string(&self.manifest).map_err(Error::from)?
        );
        Ok(())
    }
}

fn require(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "missing input file: {}",
            path.display()
        )))
    }
}

/// `dir/stem.suffix` for an output `dir/stem.ext`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            std::fs::create_dir_all(p).map_err(|e| Error::io(p, e).into())
        }
        _ => Ok(()),
    }
}

fn load_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
    run: &mut Run,
) -> CliResult<T> {
    match path {
        Some(p) => {
            run.input(p)?;
            Ok(read_json(p)?)
        }
        None => Ok(T::default()),
    }
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    Ok(serde_json::to_value(v).map_err(Error::from)?)
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Grid(a) => grid(a),
        Command::Sample(a) => sample(a),
        Command::Train(a) => train_cmd(a),
        Command::Transfer(a) => transfer(a),
        Command::Infer(a) => infer(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Attribute(a) => attribute_cmd(a),
    }
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let mut run = Run::new("synth", 0);
    let mut world: SyntheticWorld = load_config(a.config.as_deref(), &mut run)?;
    if let Some(s) = a.seed {
        world.seed = s;
    }
    if let Some(e) = a.extent {
        world.width = e;
        world.height = e;
    }
    if let Some(d) = a.density {
        world.density_per_km2 = d;
    }
    world.hh_only |= a.hh_only;
    run.manifest.seed = world.seed;
    run.manifest.config = to_value(&world)?;
    let out = world.generate(a.quarter)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let files = [
        ("inputs.f32", &out.inputs),
        ("truth.f32", &out.truth),
        ("target.f32", &out.target),
    ];
    for (name, raster) in files {
        let p = a.out.join(name);
        raster.write(&p)?;
        run.output(&p);
    }
    let fp = a.out.join("footprints.csv");
    write_footprints(&fp, &out.footprints)?;
    run.output(&fp);
    let wj = a.out.join("world.json");
    write_json(&wj, &world)?;
    run.output(&wj);
    run.finish(&a.out.join("manifest.json"))
}

fn grid(a: GridArgs) -> CliResult<()> {
    let mut run = Run::new("grid", 0);
    run.input(&a.footprints)?;
    run.raster_input(&a.like)?;
    run.manifest.config = json!({ "quarter": a.quarter });
    let like = Raster::read(&a.like)?;
    let records = read_footprints(&a.footprints)?;
    let raster = grid_footprints(&records, like.geometry, a.quarter);
    ensure_parent(&a.out)?;
    raster.write(&a.out)?;
    run.output(&a.out);
    run.finish(&sibling(&a.out, "manifest.json"))
}

fn sample(a: SampleArgs) -> CliResult<()> {
    let mut run = Run::new("sample", a.seed);
    run.raster_input(&a.rasters)?;
    run.raster_input(&a.target)?;
    if a.block_km.is_nan() || a.block_km <= 0.0 {
        return Err(CliError::usage("--block-km must be positive"));
    }
    let cfg = SampleConfig {
        quarter: a.quarter,
        stride: a.stride,
        min_valid: a.min_valid,
        max_per_block: a.max_per_block,
        block_size_deg: a.block_km * 1000.0 * PIXEL_SIZE_DEG / 25.0,
        seed: a.seed,
    };
    run.manifest.config = to_value(&cfg)?;
    let inputs = Raster::read(&a.rasters)?;
    let target = Raster::read(&a.target)?;
    let chips = sample_chips(&inputs, &target, &cfg)?;
    log::info!("sampled {} chips", chips.len());
    ensure_parent(&a.out)?;
    write_chips(&a.out, &chips)?;
    run.output(&a.out);
    run.manifest
        .timings
        .insert("chips".into(), chips.len() as f64);
    run.finish(&sibling(&a.out, "manifest.json"))
}

fn split_of_checkpoint(ckpt: &Checkpoint) -> SplitConfig {
    serde_json::from_str::<Value>(&ckpt.config)
        .ok()
        .and_then(|v| serde_json::from_value::<TrainConfig>(v["train"].clone()).ok())
        .map(|t| t.split)
        .unwrap_or_default()
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let mut run = Run::new("train", 0);
    run.input(&a.chips)?;
    let mut cfg: TrainConfig = load_config(a.config.as_deref(), &mut run)?;
    override_train(&mut cfg, a.epochs, a.batch_size, a.lr, a.seed);
    if let Some(s) = a.split_seed {
        cfg.split.seed = s;
    }
    if let Some(f) = a.test_fraction {
        cfg.split.test_fraction = f;
    }
    cfg.validate()?;
    let mut spec = match a.preset {
        Preset::Default => ArchitectureSpec::default(),
        Preset::Desk => ArchitectureSpec::desk(),
        Preset::Tiny => ArchitectureSpec::tiny(),
    };
    if let Some(radius) = a.se_radius {
        spec = spec.with_squeeze(Squeeze::Local { radius });
    }
    run.manifest.seed = cfg.seed;
    run.manifest.config = json!({ "preset": a.preset, "se_radius": a.se_radius, "train": cfg });
    let chips = read_chips(&a.chips)?;
    let train_chips = cfg.split.select(&chips, Split::Train);
    if train_chips.is_empty() {
        return Err(CliError::usage("chip file has no training-split chips"));
    }
    let norm = compute_norm_constants(train_chips.iter().copied())?;
    let mut model = ModelState::<f32>::build(&spec, &mut RngStream::new(cfg.seed, 0))?;
    model.set_normalization(norm.mean, norm.std)?;
    let t = Instant::now();
    let outcome = train(&mut model, &train_chips, &cfg, None)?;
    run.time("train_seconds", t);
    let ckpt = Checkpoint {
        model,
        optimizer: Some(outcome.optimizer.clone()),
        epoch: cfg.epochs as u64,
        config: run.manifest.config.to_string(),
    };
    ensure_parent(&a.out)?;
    ckpt.save(&a.out)?;
    run.output(&a.out);
    let hist = sibling(&a.out, "history.csv");
    write_csv(&hist, &outcome.history)?;
    run.output(&hist);
    run.finish(&sibling(&a.out, "manifest.json"))
}

fn override_train(
    cfg: &mut TrainConfig,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
) {
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(b) = batch {
        cfg.batch_size = b;
    }
    if let Some(l) = lr {
        cfg.learning_rate = l;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
}

fn transfer(a: TransferArgs) -> CliResult<()> {
    let mut run = Run::new("transfer", 0);
    run.input(&a.base)?;
    run.input(&a.chips)?;
    let base = Checkpoint::load(&a.base)?;
    let mut cfg: TrainConfig = match a.config.as_deref() {
        Some(p) => load_config(Some(p), &mut run)?,
        None => TrainConfig {
            epochs: 10,
            milestones: Vec::new(),
            ..Default::default()
        },
    };
    override_train(&mut cfg, a.epochs, a.batch_size, a.lr, a.seed);
    cfg.split = split_of_checkpoint(&base);
    cfg.validate()?;
    let mode = match a.mode {
        ModeArg::Full => TransferMode::Full,
        ModeArg::FrozenHead => TransferMode::FrozenHead,
    };
    run.manifest.seed = cfg.seed;
    run.manifest.config = json!({ "transfer": mode, "train": cfg });
    let chips = read_chips(&a.chips)?;
    let train_chips = cfg.split.select(&chips, Split::Train);
    if train_chips.is_empty() {
        return Err(CliError::usage("chip file has no training-split chips"));
    }
    let t = Instant::now();
    let outcome = transfer_train(&base, &train_chips, mode, &cfg)?;
    run.time("train_seconds", t);
    run.manifest.timings.insert(
        "mean_backward_seconds".into(),
        outcome.mean_backward_seconds,
    );
    run.manifest.timings.insert(
        "gradient_parameters".into(),
        outcome.gradient_parameters as f64,
    );
    ensure_parent(&a.out)?;
    outcome.checkpoint.save(&a.out)?;
    run.output(&a.out);
    let hist = sibling(&a.out, "history.csv");
    write_csv(&hist, &outcome.history)?;
    run.output(&hist);
    run.finish(&sibling(&a.out, "manifest.json"))
}

fn infer(a: InferArgs) -> CliResult<()> {
    let mut run = Run::new("infer", 0);
    run.input(&a.model)?;
    run.raster_input(&a.rasters)?;
    let mut cfg: EnsembleConfig = load_config(a.config.as_deref(), &mut run)?;
    if let Some(o) = a.offsets {
        cfg.offsets = o;
    }
    if let Some(p) = a.mc_passes {
        cfg.mc_passes = p;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.no_dropout {
        cfg.dropout = false;
    }
    if a.tile_size == 0 || a.workers == 0 {
        return Err(CliError::usage(
            "--tile-size and --workers must be positive",
        ));
    }
    run.manifest.seed = cfg.seed;
    run.manifest.config =
        json!({ "ensemble": cfg, "tile_size": a.tile_size, "quarter": a.quarter });
    let ckpt = Checkpoint::load(&a.model)?;
    let inputs = Raster::read(&a.rasters)?;
    let jobs = tile_jobs(&inputs.geometry, a.tile_size);
    let (mosaic, report) = run_tiles(&ckpt.model, &inputs, &jobs, &cfg, a.workers)?;
    log::info!(
        "{:.0} pixels/s over {} tiles",
        report.pixels_per_second,
        report.tiles
    );
    if !report.failed_tiles.is_empty() {
        log::warn!("tiles left as holes: {:?}", report.failed_tiles);
    }
    let mut extra = serde_json::Map::new();
    extra.insert("offsets".into(), to_value(&cfg.offsets)?);
    extra.insert("mc_passes".into(), cfg.mc_passes.into());
    extra.insert("checkpoint_hash".into(), ckpt.hash().into());
    extra.insert("quarter".into(), a.quarter.into());
    ensure_parent(&a.out)?;
    mosaic.write_with(&a.out, extra)?;
    run.output(&a.out);
    run.manifest
        .timings
        .insert("pixels_per_second".into(), report.pixels_per_second);
    run.manifest
        .timings
        .insert("infer_seconds".into(), report.seconds);
    run.finish(&sibling(&a.out, "manifest.json"))
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let mut run = Run::new("evaluate", a.seed);
    run.input(&a.model)?;
    let ckpt = Checkpoint::load(&a.model)?;
    let hash = ckpt.hash();
    ensure_parent(&a.report)?;
    if let Some(chips_path) = &a.chips {
        run.input(chips_path)?;
        let cfg = SparseConfig {
            mc_passes: a.mc_passes,
            seed: a.seed,
            split: split_of_checkpoint(&ckpt),
        };
        run.manifest.config = json!({ "mode": "sparse", "sparse": cfg, "bins": a.bins });
        let chips = read_chips(chips_path)?;
        let test = cfg.split.select(&chips, Split::Test);
        if test.is_empty() {
            return Err(CliError::usage("chip file has no test-split chips"));
        }
        let v = validate_sparse(&ckpt.model, &hash, &test, &cfg, |c| {
            format!("q{}", c.quarter)
        })?;
        let cal = calibration_report(&v.run, &a.bins)?;
        let report = json!({ "checkpoint_hash": hash, "overall": v.report, "strata": v.strata, "calibration": cal });
        write_json(&a.report, &report)?;
        let strata = sibling(&a.report, "strata.csv");
        write_csv(&strata, &v.strata)?;
        let bins = sibling(&a.report, "bins.csv");
        write_csv(&bins, &cal.bins)?;
        for p in [&a.report, &strata, &bins] {
            run.output(p);
        }
    } else if let Some(dir) = &a.world {
        let (inp, truth, target) = (
            dir.join("inputs.f32"),
            dir.join("truth.f32"),
            dir.join("target.f32"),
        );
        for p in [&inp, &truth, &target] {
            run.raster_input(p)?;
        }
        run.manifest.config = json!({ "mode": "dense", "site_size": a.site_size, "tile_size": a.tile_size, "seed": a.seed });
        let inputs = Raster::read(&inp)?;
        let truth = Raster::read(&truth)?;
        let target = Raster::read(&target)?;
        let cfg = EnsembleConfig {
            seed: a.seed,
            ..Default::default()
        };
        let jobs = tile_jobs(&inputs.geometry, a.tile_size.max(1));
        let (mosaic, _) = run_tiles(&ckpt.model, &inputs, &jobs, &cfg, a.workers)?;
        let sites = grid_sites(&inputs.geometry, a.site_size);
        let dense = dense_reports(&mosaic, &truth, &target, &sites, None)?;
        write_json(
            &a.report,
            &json!({ "checkpoint_hash": hash, "dense": dense }),
        )?;
        let sites_csv = sibling(&a.report, "sites.csv");
        write_csv(&sites_csv, &dense.sites)?;
        run.output(&a.report);
        run.output(&sites_csv);
    }
    run.finish(&sibling(&a.report, "manifest.json"))
}

fn attribute_cmd(a: AttributeArgs) -> CliResult<()> {
    let mut run = Run::new("attribute", a.seed);
    run.input(&a.model)?;
    run.input(&a.chips)?;
    let [row, col] = a.pixel[..] else {
        return Err(CliError::usage("--pixel takes row,col"));
    };
    run.manifest.config = json!({ "chip_id": a.chip_id, "pixel": [row, col], "radius": a.radius });
    let ckpt = Checkpoint::load(&a.model)?;
    let chips = read_chips(&a.chips)?;
    let chip = chips.iter().find(|c| c.id == a.chip_id).ok_or_else(|| {
        CliError::usage(format!("chip {} not in {}", a.chip_id, a.chips.display()))
    })?;
    let refs: Vec<_> = chips.iter().collect();
    let bg = background(&refs, a.seed)?;
    let report = attribute(&ckpt.model, chip, &bg, row, col, a.radius)?;
    ensure_parent(&a.out)?;
    let raster = sibling(&a.out, "influence.f32");
    write_report(&report, chip, PIXEL_SIZE_DEG, &a.out, &raster)?;
    run.output(&a.out);
    run.output(&raster);
    run.finish(&sibling(&a.out, "manifest.json"))
}
