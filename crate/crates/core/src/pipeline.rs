//! End-to-end batch run and classified-map export.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::classifier::{self, Model, Prediction, TrainConfig};
use crate::dataset::{self, DatasetManifest, Label, Provenance, TileSample};
use crate::error::{Error, Result};
use crate::geocell::{GeoCell, Precision};
use crate::ingest::{self, Journey};
use crate::metrics::{self, EvalReport};
use crate::raster::{self, RenderParams, TileRaster};
use crate::simgen::{self, GridKind, NetworkDocument, SimConfig};
use crate::tiler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    #[default]
    Cnn,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicParams {
    pub snap_m: f64,
    pub min_branch_deg: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self {
            snap_m: classifier::DEFAULT_SNAP_M,
            min_branch_deg: classifier::DEFAULT_MIN_BRANCH_DEG,
        }
    }
}

/// Synthetic input: a generated street grid and simulated journeys on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub kind: GridKind,
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub journeys: usize,
    pub seed: u64,
    pub sim: SimConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            kind: GridKind::PerturbedGrid,
            rows: 5,
            cols: 5,
            spacing_m: 180.0,
            origin_lat: 42.0308,
            origin_lon: -93.6319,
            journeys: 200,
            seed: 42,
            sim: SimConfig::default(),
        }
    }
}

/// Everything a run depends on. Relative paths resolve against the
/// working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Waypoint CSV; ignored when `synthetic` is set.
    pub waypoints: Option<PathBuf>,
    /// Reference network GeoJSON with intersection points; ignored when
    /// `synthetic` is set.
    pub network: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
    pub output: PathBuf,
    /// Drop points farther than this from the network; `None` disables
    /// the filter.
    pub max_offset_m: Option<f64>,
    pub precision: u8,
    pub render: RenderParams,
    pub min_points: usize,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub augment_k: usize,
    pub augment_seed: u64,
    pub classifier: ClassifierKind,
    pub train: TrainConfig,
    /// Use this model instead of training one.
    pub model: Option<PathBuf>,
    pub threshold: f64,
    pub heuristic: HeuristicParams,
    pub write_tiles: bool,
    /// Worker threads; `None` uses one per core.
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            waypoints: None,
            network: None,
            synthetic: None,
            output: PathBuf::from("out"),
            max_offset_m: Some(ingest::DEFAULT_MAX_OFFSET_M),
            precision: 8,
            render: RenderParams::default(),
            min_points: 3,
            test_fraction: 0.10,
            split_seed: 0,
            augment_k: 2,
            augment_seed: 0,
            classifier: ClassifierKind::Cnn,
            train: TrainConfig::default(),
            model: None,
            threshold: classifier::DEFAULT_THRESHOLD,
            heuristic: HeuristicParams::default(),
            write_tiles: true,
            workers: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("pipeline config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks values and that every referenced input exists, before any
    /// work is done.
    pub fn validate(&self) -> Result<()> {
        Precision::new(self.precision).map_err(|e| Error::Config(e.to_string()))?;
        self.render.validate()?;
        self.train.validate()?;
        if self.min_points < 1 {
            return Err(Error::Config("min_points must be at least 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must be in [0, 1], got {}",
                self.threshold
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.synthetic.is_none() {
            match (&self.waypoints, &self.network) {
                (Some(_), Some(_)) => {}
                _ => {
                    return Err(Error::Config(
                        "either `synthetic` or both `waypoints` and `network` are required".into(),
                    ))
                }
            }
        }
        let inputs = [
            self.waypoints.as_ref().filter(|_| self.synthetic.is_none()),
            self.network.as_ref().filter(|_| self.synthetic.is_none()),
            self.model.as_ref(),
        ];
        for path in inputs.into_iter().flatten() {
            if !path.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

/// Per-stage counts and artifact names (relative to the output directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub waypoints: usize,
    pub rejected_rows: usize,
    pub journeys: usize,
    pub dropped_journeys: usize,
    pub filtered_points: usize,
    pub tiles: usize,
    pub sparse_excluded: usize,
    pub labeled: usize,
    pub intersections: usize,
    pub straights: usize,
    pub train: usize,
    pub augmented: usize,
    pub test: usize,
    pub classifier: ClassifierKind,
    pub loss_curve: Vec<f64>,
    pub test_accuracy: f64,
    pub artifacts: BTreeMap<String, String>,
}

/// Everything a run produced, for callers that want more than the files.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub report: EvalReport,
    pub labels: Vec<(String, Label)>,
    pub predictions: Vec<(String, Prediction)>,
    pub test_codes: Vec<String>,
}

struct Inputs {
    journeys: Vec<Journey>,
    network: NetworkDocument,
    waypoints: usize,
    rejected: usize,
    dropped: usize,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn load_inputs(cfg: &PipelineConfig, out: &Path) -> Result<Inputs> {
    if let Some(syn) = &cfg.synthetic {
        let network = simgen::generate_network(
            syn.kind,
            syn.rows,
            syn.cols,
            syn.spacing_m,
            (syn.origin_lat, syn.origin_lon),
            syn.seed,
        )?;
        let sim = SimConfig {
            seed: syn.seed,
            ..syn.sim.clone()
        };
        let journeys = simgen::simulate_trajectories(&network, syn.journeys, &sim)?;
        write_file(&out.join("network.geojson"), &json_bytes(&network.to_geojson())?)?;
        ingest::write_waypoints(
            create(&out.join("waypoints.csv"))?,
            journeys.iter().flat_map(|j| &j.points),
        )?;
        let intersections = network.intersections().iter().map(|n| (n.lat, n.lon)).collect();
        let waypoints = journeys.iter().map(|j| j.points.len()).sum();
        return Ok(Inputs {
            journeys,
            network: NetworkDocument { network, intersections },
            waypoints,
            rejected: 0,
            dropped: 0,
        });
    }
    let (wp_path, net_path) = match (&cfg.waypoints, &cfg.network) {
        (Some(w), Some(n)) => (w, n),
        _ => return Err(Error::Config("waypoints and network are required".into())),
    };
    let file = fs::File::open(wp_path).map_err(|e| Error::io(wp_path, e))?;
    let loaded = ingest::load_waypoints(std::io::BufReader::new(file))?;
    let waypoints = loaded.points.len();
    let set = ingest::build_journeys(loaded.points);
    let text = fs::read_to_string(net_path).map_err(|e| Error::io(net_path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", net_path.display())))?;
    Ok(Inputs {
        journeys: set.journeys,
        network: simgen::network_from_geojson(&doc)?,
        waypoints,
        rejected: loaded.rejected,
        dropped: set.dropped,
    })
}

/// Runs every stage and writes the artifact tree under `cfg.output`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(|| run_stages(cfg)),
        None => run_stages(cfg),
    }
}

fn run_stages(cfg: &PipelineConfig) -> Result<RunOutcome> {
    let out = cfg.output.as_path();
    let tiles_dir = out.join("tiles");
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if cfg.write_tiles {
        fs::create_dir_all(&tiles_dir).map_err(|e| Error::io(&tiles_dir, e))?;
    }
    let precision = Precision::new(cfg.precision)?;
    let mut artifacts = BTreeMap::new();
    let mut note = |key: &str, name: &str| {
        artifacts.insert(key.to_string(), name.to_string());
    };

    let inputs = load_inputs(cfg, out).map_err(|e| e.in_stage("ingest"))?;
    let (journeys, filtered_points, filter_dropped) = match cfg.max_offset_m {
        Some(offset) => {
            let f = ingest::filter_to_reference(&inputs.journeys, &inputs.network.network, offset)
                .map_err(|e| e.in_stage("filter"))?;
            (f.journeys, f.removed_points, f.dropped_journeys)
        }
        None => (inputs.journeys, 0, 0),
    };

    let tiles = tiler::assign_tiles(&journeys, precision);
    tiler::write_tile_index(create(&out.join("tile_index.jsonl"))?, tiles.values()).map_err(|e| e.in_stage("tile"))?;
    note("tile_index", "tile_index.jsonl");

    let labeled =
        dataset::label_cells(&tiles, &inputs.network.intersections, cfg.min_points).map_err(|e| e.in_stage("label"))?;
    let labels = labeled.labels;
    dataset::write_labels(create(&out.join("labels.jsonl"))?, &labels)?;
    note("labels", "labels.jsonl");

    let manifest = DatasetManifest::build(
        &labels,
        cfg.test_fraction,
        cfg.split_seed,
        cfg.augment_seed,
        cfg.augment_k,
    )
    .map_err(|e| e.in_stage("split"))?;
    write_file(&out.join("dataset.json"), &json_bytes(&manifest)?)?;
    note("manifest", "dataset.json");
    let test_codes: Vec<String> = manifest.test.iter().map(|e| e.code.clone()).collect();

    // Render at full size for the tile images, keep only the model-size copy.
    let model_size = cfg.train.input_size;
    let rendered: Vec<TileRaster> = labels
        .par_iter()
        .map(|(code, _)| {
            let full = raster::render_tile(&tiles[code], &cfg.render)?;
            if cfg.write_tiles {
                full.save_png(&tiles_dir.join(format!("{code}.png")))?;
            }
            Ok(if full.width == model_size {
                full
            } else {
                full.resample(model_size)
            })
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("render"))?;
    if cfg.write_tiles {
        note("tiles", "tiles");
    }
    let index_of: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, (c, _))| (c.as_str(), i)).collect();

    let mut loss_curve = Vec::new();
    let mut augmented = 0;
    let predictions: Vec<(String, Prediction)> = match cfg.classifier {
        ClassifierKind::Heuristic => labels
            .par_iter()
            .map(|(code, _)| {
                let p =
                    classifier::classify_heuristic(&tiles[code], cfg.heuristic.snap_m, cfg.heuristic.min_branch_deg)
                        .map_err(|e| e.in_stage("classify"))?;
                Ok((code.clone(), p))
            })
            .collect::<Result<_>>()?,
        ClassifierKind::Cnn => {
            let model = match &cfg.model {
                Some(path) => Model::load(path).map_err(|e| e.in_stage("load model"))?,
                None => {
                    let mut train = Vec::new();
                    for entry in &manifest.train {
                        let original = TileSample {
                            code: entry.code.clone(),
                            raster: rendered[index_of[entry.code.as_str()]].clone(),
                            label: entry.label,
                            provenance: Provenance::Original,
                        };
                        let variants = dataset::augment(&original, cfg.augment_k, cfg.augment_seed);
                        augmented += variants.len();
                        train.push(original);
                        train.extend(variants);
                    }
                    let (model, curve) =
                        classifier::train_model(&train, &cfg.train).map_err(|e| e.in_stage("train"))?;
                    loss_curve = curve;
                    model
                }
            };
            model.save(&out.join("model.bin"))?;
            note("model", "model.bin");
            labels
                .par_iter()
                .zip(&rendered)
                .map(|((code, _), r)| {
                    let p = classifier::predict(&model, r, cfg.threshold).map_err(|e| e.in_stage("classify"))?;
                    Ok((code.clone(), p))
                })
                .collect::<Result<_>>()?
        }
    };
    classifier::write_predictions(create(&out.join("predictions.jsonl"))?, &predictions)?;
    note("predictions", "predictions.jsonl");

    let cm = metrics::confusion(test_codes.iter().map(|c| {
        let i = index_of[c.as_str()];
        (labels[i].1, predictions[i].1.label)
    }));
    let report = metrics::report(&cm).map_err(|e| e.in_stage("evaluate"))?;
    write_file(&out.join("report.json"), &json_bytes(&report)?)?;
    cm.write_csv(create(&out.join("confusion.csv"))?)?;
    note("report", "report.json");
    note("confusion", "confusion.csv");

    let cells: Vec<(GeoCell, Prediction)> = predictions
        .iter()
        .map(|(code, p)| (tiles[code].cell.clone(), *p))
        .collect();
    write_file(&out.join("map.geojson"), &json_bytes(&export_map(&cells))?)?;
    note("map", "map.geojson");
    note("summary", "summary.json");

    let intersections = labels.iter().filter(|(_, l)| *l == Label::Intersection).count();
    let summary = RunSummary {
        waypoints: inputs.waypoints,
        rejected_rows: inputs.rejected,
        journeys: journeys.len(),
        dropped_journeys: inputs.dropped + filter_dropped,
        filtered_points,
        tiles: tiles.len(),
        sparse_excluded: labeled.excluded,
        labeled: labels.len(),
        intersections,
        straights: labels.len() - intersections,
        train: manifest.train.len(),
        augmented,
        test: test_codes.len(),
        classifier: cfg.classifier,
        loss_curve,
        test_accuracy: report.accuracy,
        artifacts,
    };
    write_file(&out.join("summary.json"), &json_bytes(&summary)?)?;
    Ok(RunOutcome {
        summary,
        report,
        labels,
        predictions,
        test_codes,
    })
}

/// One closed polygon per cell, blue for straight and green for
/// intersection, sorted by geohash.
pub fn export_map(cells: &[(GeoCell, Prediction)]) -> Value {
    let mut sorted: Vec<&(GeoCell, Prediction)> = cells.iter().collect();
    sorted.sort_by(|a, b| a.0.code.cmp(&b.0.code));
    let features: Vec<Value> = sorted
        .into_iter()
        .map(|(cell, p)| {
            let b = &cell.bbox;
            let ring = [
                [b.lon_min, b.lat_min],
                [b.lon_max, b.lat_min],
                [b.lon_max, b.lat_max],
                [b.lon_min, b.lat_max],
                [b.lon_min, b.lat_min],
            ];
            let color = match p.label {
                Label::Intersection => "green",
                Label::Straight => "blue",
            };
            json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {"geohash": cell.code, "class": p.label, "score": p.score, "color": color},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}
