use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::Value;

use trajmap::classifier::{self, Model, Prediction, TrainConfig};
use trajmap::dataset::{self, DatasetManifest, Label, Provenance, TileSample};
use trajmap::geocell::{cell_bounds, Precision};
use trajmap::ingest::{self, Journey};
use trajmap::metrics;
use trajmap::pipeline::{self, PipelineConfig};
use trajmap::raster::{self, RenderMode, RenderParams, TileRaster};
use trajmap::simgen::{self, GridKind, SimConfig};
use trajmap::tiler::{self, TileClip};
use trajmap::{Error, Result};

#[derive(Parser)]
#[command(
    name = "trajmap",
    version,
    about = "Classify geohash tiles of vehicle trajectories as intersections or straight road"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a street grid and simulated journeys on it.
    Simulate(SimulateArgs),
    /// Clean waypoints and optionally drop points far from a network.
    Ingest(IngestArgs),
    /// Write the tile index for a waypoint file.
    Tile(TileArgs),
    /// Render tile images.
    Render(RenderArgs),
    /// Label tiles from intersection points.
    Label(LabelArgs),
    /// Split labels into train and test sets.
    Split(SplitArgs),
    /// Train the convolutional classifier on rendered tiles.
    Train(TrainArgs),
    /// Classify tiles with a trained model or the geometric heuristic.
    Classify(ClassifyArgs),
    /// Score predictions against labels.
    Evaluate(EvaluateArgs),
    /// Export predictions as a GeoJSON grid map.
    Map(MapArgs),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "perturbed-grid")]
    kind: GridKindArg,
    #[arg(long, default_value_t = 5)]
    rows: usize,
    #[arg(long, default_value_t = 5)]
    cols: usize,
    #[arg(long, default_value_t = 180.0)]
    spacing: f64,
    #[arg(long, default_value_t = 42.0308, allow_hyphen_values = true)]
    origin_lat: f64,
    #[arg(long, default_value_t = -93.6319, allow_hyphen_values = true)]
    origin_lon: f64,
    #[arg(long, default_value_t = 200)]
    journeys: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum GridKindArg {
    Grid,
    PerturbedGrid,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Grayscale,
    Speed,
}

impl From<ModeArg> for RenderMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Grayscale => RenderMode::Grayscale,
            ModeArg::Speed => RenderMode::Speed,
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Reference network GeoJSON; enables the distance filter.
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long, default_value_t = ingest::DEFAULT_MAX_OFFSET_M)]
    max_offset: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TilingArgs {
    /// Waypoint CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 8)]
    precision: u8,
}

#[derive(Args)]
struct TileArgs {
    #[command(flatten)]
    tiling: TilingArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderOpts {
    #[arg(long, default_value_t = 640)]
    size: usize,
    #[arg(long, value_enum, default_value = "speed")]
    mode: ModeArg,
    #[arg(long, default_value_t = 35.0)]
    v_max: f64,
    #[arg(long, default_value_t = 2)]
    line_width: usize,
}

impl RenderOpts {
    fn params(&self) -> RenderParams {
        RenderParams {
            size: self.size,
            mode: self.mode.into(),
            v_max: self.v_max,
            line_width: self.line_width,
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    tiling: TilingArgs,
    #[command(flatten)]
    render: RenderOpts,
    /// Only render these cells.
    #[arg(long = "cell")]
    cells: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    #[command(flatten)]
    tiling: TilingArgs,
    /// GeoJSON with intersection points.
    #[arg(long)]
    network: PathBuf,
    #[arg(long, default_value_t = 3)]
    min_points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.10)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    augment_k: usize,
    #[arg(long, default_value_t = 0)]
    augment_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of `<geohash>.png` tiles.
    #[arg(long)]
    tiles: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 64)]
    input_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Cells to classify.
    #[arg(long)]
    labels: PathBuf,
    /// Trained model; classify tile images in `--tiles`.
    #[arg(long, requires = "tiles", conflicts_with = "heuristic")]
    model: Option<PathBuf>,
    #[arg(long)]
    tiles: Option<PathBuf>,
    /// Use the geometric heuristic on clipped trajectories from `--input`.
    #[arg(long, requires = "input")]
    heuristic: bool,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    precision: u8,
    #[arg(long, default_value_t = classifier::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = classifier::DEFAULT_SNAP_M)]
    snap: f64,
    #[arg(long, default_value_t = classifier::DEFAULT_MIN_BRANCH_DEG)]
    min_branch: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Restrict scoring to the manifest's test split.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the confusion matrix as CSV.
    #[arg(long)]
    confusion_csv: Option<PathBuf>,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json(path: &Path) -> Result<Value> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn load_journeys(path: &Path) -> Result<Vec<Journey>> {
    let loaded = ingest::load_waypoints(open(path)?)?;
    Ok(ingest::build_journeys(loaded.points).journeys)
}

fn load_tiles(args: &TilingArgs) -> Result<std::collections::BTreeMap<String, TileClip>> {
    let precision = Precision::new(args.precision).map_err(|e| Error::Config(e.to_string()))?;
    Ok(tiler::assign_tiles(&load_journeys(&args.input)?, precision))
}

fn load_tile_png(dir: &Path, code: &str) -> Result<TileRaster> {
    TileRaster::load_png(&dir.join(format!("{code}.png")))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let kind = match a.kind {
        GridKindArg::Grid => GridKind::Grid,
        GridKindArg::PerturbedGrid => GridKind::PerturbedGrid,
    };
    let network = simgen::generate_network(kind, a.rows, a.cols, a.spacing, (a.origin_lat, a.origin_lon), a.seed)?;
    let journeys = simgen::simulate_trajectories(
        &network,
        a.journeys,
        &SimConfig {
            seed: a.seed,
            ..Default::default()
        },
    )?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    write_json(&a.out_dir.join("network.geojson"), &network.to_geojson())?;
    ingest::write_waypoints(
        create(&a.out_dir.join("waypoints.csv"))?,
        journeys.iter().flat_map(|j| &j.points),
    )?;
    eprintln!(
        "{} nodes, {} edges, {} intersections, {} journeys",
        network.nodes.len(),
        network.edges.len(),
        network.intersections().len(),
        journeys.len()
    );
    Ok(())
}

fn ingest_cmd(a: IngestArgs) -> Result<()> {
    let loaded = ingest::load_waypoints(open(&a.input)?)?;
    let set = ingest::build_journeys(loaded.points);
    let mut journeys = set.journeys;
    let mut removed = 0;
    if let Some(path) = &a.network {
        let doc = simgen::network_from_geojson(&read_json(path)?)?;
        let f = ingest::filter_to_reference(&journeys, &doc.network, a.max_offset)?;
        removed = f.removed_points;
        journeys = f.journeys;
    }
    ingest::write_waypoints(create(&a.out)?, journeys.iter().flat_map(|j| &j.points))?;
    eprintln!(
        "{} rows rejected, {} journeys dropped as too short, {} points off-network, {} journeys kept",
        loaded.rejected,
        set.dropped,
        removed,
        journeys.len()
    );
    Ok(())
}

fn tile_cmd(a: TileArgs) -> Result<()> {
    let tiles = load_tiles(&a.tiling)?;
    tiler::write_tile_index(create(&a.out)?, tiles.values())?;
    eprintln!("{} tiles", tiles.len());
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let params = a.render.params();
    params.validate()?;
    let tiles = load_tiles(&a.tiling)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let selected: Vec<&TileClip> = if a.cells.is_empty() {
        tiles.values().collect()
    } else {
        a.cells
            .iter()
            .map(|c| {
                tiles
                    .get(c)
                    .ok_or_else(|| Error::Domain(format!("no trajectories in cell {c}")))
            })
            .collect::<Result<_>>()?
    };
    selected.par_iter().try_for_each(|clip| {
        raster::render_tile(clip, &params)?.save_png(&a.out_dir.join(format!("{}.png", clip.cell.code)))
    })?;
    eprintln!("{} tiles rendered", selected.len());
    Ok(())
}

fn label_cmd(a: LabelArgs) -> Result<()> {
    let tiles = load_tiles(&a.tiling)?;
    let doc = simgen::network_from_geojson(&read_json(&a.network)?)?;
    let out = dataset::label_cells(&tiles, &doc.intersections, a.min_points)?;
    dataset::write_labels(create(&a.out)?, &out.labels)?;
    eprintln!("{} labeled, {} excluded as sparse", out.labels.len(), out.excluded);
    Ok(())
}

fn split_cmd(a: SplitArgs) -> Result<()> {
    let labels = dataset::read_labels(open(&a.labels)?)?;
    let manifest = DatasetManifest::build(&labels, a.test_fraction, a.seed, a.augment_seed, a.augment_k)?;
    write_json(&a.out, &manifest)?;
    eprintln!("{} train, {} test", manifest.train.len(), manifest.test.len());
    Ok(())
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        momentum: a.momentum,
        input_size: a.input_size,
        seed: a.seed,
    };
    cfg.validate()?;
    let mut train = Vec::new();
    for entry in &manifest.train {
        let raster = load_tile_png(&a.tiles, &entry.code)?.resample(cfg.input_size);
        let original = TileSample {
            code: entry.code.clone(),
            raster,
            label: entry.label,
            provenance: Provenance::Original,
        };
        let variants = dataset::augment(&original, manifest.augment_per_original, manifest.augment_seed);
        train.push(original);
        train.extend(variants);
    }
    let (model, curve) = classifier::train_model(&train, &cfg)?;
    model.save(&a.out)?;
    for (epoch, loss) in curve.iter().enumerate() {
        eprintln!("epoch {:3}  loss {loss:.6}", epoch + 1);
    }
    Ok(())
}

fn classify_cmd(a: ClassifyArgs) -> Result<()> {
    let codes: Vec<String> = dataset::read_labels(open(&a.labels)?)?
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    let predictions: Vec<(String, Prediction)> = match (&a.model, &a.tiles) {
        (Some(model_path), Some(dir)) => {
            let model = Model::load(model_path)?;
            codes
                .par_iter()
                .map(|code| {
                    Ok((
                        code.clone(),
                        classifier::predict(&model, &load_tile_png(dir, code)?, a.threshold)?,
                    ))
                })
                .collect::<Result<_>>()?
        }
        _ if a.heuristic => {
            let input = a
                .input
                .clone()
                .ok_or_else(|| Error::Config("--heuristic needs --input".into()))?;
            let tiles = load_tiles(&TilingArgs {
                input,
                precision: a.precision,
            })?;
            codes
                .par_iter()
                .map(|code| {
                    let empty;
                    let clip = match tiles.get(code) {
                        Some(c) => c,
                        None => {
                            empty = TileClip::empty(cell_bounds(code)?);
                            &empty
                        }
                    };
                    Ok((
                        code.clone(),
                        classifier::classify_heuristic(clip, a.snap, a.min_branch)?,
                    ))
                })
                .collect::<Result<_>>()?
        }
        _ => {
            return Err(Error::Config(
                "pass --model with --tiles, or --heuristic with --input".into(),
            ))
        }
    };
    classifier::write_predictions(create(&a.out)?, &predictions)?;
    eprintln!("{} tiles classified", predictions.len());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let labels: std::collections::BTreeMap<String, Label> =
        dataset::read_labels(open(&a.labels)?)?.into_iter().collect();
    let predictions = classifier::read_predictions(open(&a.predictions)?)?;
    let keep: Option<std::collections::BTreeSet<String>> = match &a.manifest {
        Some(path) => Some(read_manifest(path)?.test.into_iter().map(|e| e.code).collect()),
        None => None,
    };
    let mut pairs = Vec::new();
    for (code, p) in &predictions {
        if keep.as_ref().is_some_and(|k| !k.contains(code)) {
            continue;
        }
        let actual = labels
            .get(code)
            .ok_or_else(|| Error::Domain(format!("prediction for unlabeled cell {code}")))?;
        pairs.push((*actual, p.label));
    }
    let cm = metrics::confusion(pairs);
    let report = metrics::report(&cm)?;
    write_json(&a.out, &report)?;
    if let Some(path) = &a.confusion_csv {
        cm.write_csv(create(path)?)?;
    }
    eprintln!("accuracy {:.4} over {} tiles", report.accuracy, report.total);
    Ok(())
}

fn map_cmd(a: MapArgs) -> Result<()> {
    let predictions = classifier::read_predictions(open(&a.predictions)?)?;
    let cells = predictions
        .into_iter()
        .map(|(code, p)| Ok((cell_bounds(&code)?, p)))
        .collect::<Result<Vec<_>>>()?;
    write_json(&a.out, &pipeline::export_map(&cells))?;
    eprintln!("{} cells mapped", cells.len());
    Ok(())
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(out) = a.out {
        cfg.output = out;
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    if let Some(mode) = a.mode {
        cfg.render.mode = mode.into();
    }
    if let Some(epochs) = a.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
        cfg.split_seed = seed;
        cfg.augment_seed = seed;
    }
    let outcome = pipeline::run_pipeline(&cfg)?;
    let s = &outcome.summary;
    eprintln!(
        "{} tiles, {} labeled ({} intersection), {} train + {} augmented, {} test, accuracy {:.4}",
        s.tiles, s.labeled, s.intersections, s.train, s.augmented, s.test, s.test_accuracy
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // bad flags are configuration errors
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Ingest(a) => ingest_cmd(a),
        Command::Tile(a) => tile_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Label(a) => label_cmd(a),
        Command::Split(a) => split_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Map(a) => map_cmd(a),
        Command::Run(a) => run_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
