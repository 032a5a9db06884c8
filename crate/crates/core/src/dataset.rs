//! Tile labels, stratified splits and training-image augmentation.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geocell::{cell_bounds, encode, Precision};
use crate::raster::{TileRaster, BACKGROUND};
use crate::seed::{derive_seed, derive_seed_str};
use crate::tiler::TileClip;

/// Tile class. Declaration order is the class order used by confusion
/// matrices and model outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Intersection,
    Straight,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Intersection, Label::Straight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Intersection => "intersection",
            Label::Straight => "straight",
        }
    }

    pub fn parse(s: &str) -> Result<Label> {
        match s {
            "intersection" => Ok(Label::Intersection),
            "straight" => Ok(Label::Straight),
            other => Err(Error::Domain(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Augmented { source: String, variant: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileSample {
    pub code: String,
    pub raster: TileRaster,
    pub label: Label,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelOutcome {
    pub labels: Vec<(String, Label)>,
    /// Cells dropped for having fewer than `min_points` waypoints.
    pub excluded: usize,
}

/// Labels a cell `intersection` when any inventory point falls in it
/// (using the geohash ownership rule, so a point on a shared edge labels
/// exactly one cell) and `straight` otherwise.
pub fn label_cells(
    tiles: &BTreeMap<String, TileClip>,
    intersections: &[(f64, f64)],
    min_points: usize,
) -> Result<LabelOutcome> {
    if min_points < 1 {
        return Err(Error::Config("min_points must be at least 1".into()));
    }
    let mut hits: HashMap<Precision, HashSet<String>> = HashMap::new();
    let mut out = LabelOutcome::default();
    for (code, tile) in tiles {
        if tile.point_count < min_points {
            out.excluded += 1;
            continue;
        }
        let precision = tile.cell.precision;
        let codes = match hits.entry(precision) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(
                intersections
                    .iter()
                    .map(|&(lat, lon)| encode(lat, lon, precision).map(|c| c.code))
                    .collect::<Result<HashSet<_>>>()?,
            ),
        };
        let label = if codes.contains(code) {
            Label::Intersection
        } else {
            Label::Straight
        };
        out.labels.push((code.clone(), label));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    code: String,
    label: Label,
}

pub fn write_labels<W: Write>(mut sink: W, labels: &[(String, Label)]) -> Result<()> {
    for (code, label) in labels {
        let line = serde_json::to_string(&LabelRecord {
            code: code.clone(),
            label: *label,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        writeln!(sink, "{line}").map_err(|e| Error::Input(e.to_string()))?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(source: R) -> Result<Vec<(String, Label)>> {
    let mut out = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line = line.map_err(|e| Error::Input(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: LabelRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("labels line {}: {e}", n + 1)))?;
        cell_bounds(&r.code)?;
        out.push((r.code, r.label));
    }
    Ok(out)
}

/// Indices of a stratified train/test partition, each list ascending.
///
/// The test set holds `floor(n * test_fraction)` items. Each class gets the
/// floor of its proportional share; leftover slots go to the classes with the
/// largest fractional remainders (class order breaks ties). Members are
/// drawn by a seeded shuffle within each class.
pub fn split_indices(labels: &[Label], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut strata: [Vec<usize>; 2] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        strata[l.index()].push(i);
    }
    if let Some(l) = Label::ALL.iter().find(|l| strata[l.index()].is_empty()) {
        return Err(Error::Config(format!("no samples of class {}", l.name())));
    }
    // tolerate representation error such as 0.29 * 100 = 28.999999999999996
    let total = (labels.len() as f64 * test_fraction + 1e-9).floor() as usize;
    let shares: Vec<f64> = strata.iter().map(|s| s.len() as f64 * test_fraction).collect();
    let mut quota: Vec<usize> = shares.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - quota[a] as f64;
        let fb = shares[b] - quota[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = quota.iter().sum();
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        quota[c] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "split", 0));
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (members, q) in strata.iter_mut().zip(quota) {
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..q]);
        train.extend_from_slice(&members[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<TileSample>,
    pub test: Vec<TileSample>,
}

pub fn split_dataset(samples: Vec<TileSample>, test_fraction: f64, seed: u64) -> Result<Split> {
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let (_, test_idx) = split_indices(&labels, test_fraction, seed)?;
    let test_set: HashSet<usize> = test_idx.into_iter().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in samples.into_iter().enumerate() {
        if test_set.contains(&i) {
            test.push(s);
        } else {
            train.push(s);
        }
    }
    Ok(Split { train, test })
}

/// Split membership and augmentation seeds, enough to rebuild a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split_seed: u64,
    pub test_fraction: f64,
    pub augment_seed: u64,
    pub augment_per_original: usize,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub code: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variant_seeds: Vec<u64>,
}

impl DatasetManifest {
    pub fn build(
        labels: &[(String, Label)],
        test_fraction: f64,
        split_seed: u64,
        augment_seed: u64,
        augment_per_original: usize,
    ) -> Result<Self> {
        let classes: Vec<Label> = labels.iter().map(|(_, l)| *l).collect();
        let (train_idx, test_idx) = split_indices(&classes, test_fraction, split_seed)?;
        let entry = |i: usize, k: usize| ManifestEntry {
            code: labels[i].0.clone(),
            label: labels[i].1,
            variant_seeds: (0..k).map(|v| variant_seed(augment_seed, &labels[i].0, v)).collect(),
        };
        Ok(Self {
            split_seed,
            test_fraction,
            augment_seed,
            augment_per_original,
            train: train_idx.into_iter().map(|i| entry(i, augment_per_original)).collect(),
            test: test_idx.into_iter().map(|i| entry(i, 0)).collect(),
        })
    }
}

/// Seed of augmentation variant `variant` of the original tile `code`.
pub fn variant_seed(seed: u64, code: &str, variant: usize) -> u64 {
    derive_seed(derive_seed_str(seed, "augment", code), "variant", variant as u64)
}

/// `k` randomized variants of an original sample. Each variant draws its
/// own composition of flips, quarter turns, a small rotation, shear, box
/// blur and pixel noise from a stream seeded by `(seed, code, variant)`.
pub fn augment(sample: &TileSample, k: usize, seed: u64) -> Vec<TileSample> {
    (0..k)
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(variant_seed(seed, &sample.code, v));
            TileSample {
                code: sample.code.clone(),
                raster: random_variant(&sample.raster, &mut rng),
                label: sample.label,
                provenance: Provenance::Augmented {
                    source: sample.code.clone(),
                    variant: v,
                },
            }
        })
        .collect()
}

fn random_variant(raster: &TileRaster, rng: &mut ChaCha8Rng) -> TileRaster {
    let mut r = raster.clone();
    if rng.random_bool(0.5) {
        r = flip_horizontal(&r);
    }
    if rng.random_bool(0.5) {
        r = flip_vertical(&r);
    }
    if rng.random_bool(0.5) {
        r = rotate_quarter(&r, rng.random_range(1..=3));
    }
    if rng.random_bool(0.5) {
        r = rotate(&r, rng.random_range(-15.0..=15.0));
    }
    if rng.random_bool(0.5) {
        r = shear(&r, rng.random_range(-10.0..=10.0));
    }
    let radius = rng.random_range(0..=2);
    if radius > 0 {
        r = box_blur(&r, radius);
    }
    if rng.random_bool(0.5) {
        add_noise(&mut r, 10, rng);
    }
    r
}

fn remap(
    src: &TileRaster,
    width: usize,
    height: usize,
    map: impl Fn(usize, usize) -> Option<(usize, usize)>,
) -> TileRaster {
    let c = src.channels;
    let mut pixels = vec![BACKGROUND; width * height * c];
    for row in 0..height {
        for col in 0..width {
            if let Some((sc, sr)) = map(col, row) {
                let i = (row * width + col) * c;
                pixels[i..i + c].copy_from_slice(src.pixel(sc, sr));
            }
        }
    }
    TileRaster {
        width,
        height,
        channels: c,
        pixels,
        mode: src.mode,
    }
}

pub fn flip_horizontal(r: &TileRaster) -> TileRaster {
    remap(r, r.width, r.height, |c, row| Some((r.width - 1 - c, row)))
}

pub fn flip_vertical(r: &TileRaster) -> TileRaster {
    remap(r, r.width, r.height, |c, row| Some((c, r.height - 1 - row)))
}

/// Clockwise rotation by `turns` quarter turns.
pub fn rotate_quarter(r: &TileRaster, turns: u32) -> TileRaster {
    let (w, h) = (r.width, r.height);
    match turns % 4 {
        0 => r.clone(),
        1 => remap(r, h, w, |c, row| Some((row, h - 1 - c))),
        2 => remap(r, w, h, |c, row| Some((w - 1 - c, h - 1 - row))),
        _ => remap(r, h, w, |c, row| Some((w - 1 - row, c))),
    }
}

/// Inverse-mapped affine warp about the raster center with nearest-neighbour
/// sampling; uncovered pixels become background.
fn warp(r: &TileRaster, inverse: [[f64; 2]; 2]) -> TileRaster {
    let (cx, cy) = ((r.width as f64 - 1.0) / 2.0, (r.height as f64 - 1.0) / 2.0);
    remap(r, r.width, r.height, |col, row| {
        let (dx, dy) = (col as f64 - cx, row as f64 - cy);
        let sx = (inverse[0][0] * dx + inverse[0][1] * dy + cx).round();
        let sy = (inverse[1][0] * dx + inverse[1][1] * dy + cy).round();
        ((0.0..r.width as f64).contains(&sx) && (0.0..r.height as f64).contains(&sy))
            .then_some((sx as usize, sy as usize))
    })
}

/// Rotation by `degrees` (clockwise on screen).
pub fn rotate(r: &TileRaster, degrees: f64) -> TileRaster {
    let (s, c) = degrees.to_radians().sin_cos();
    warp(r, [[c, s], [-s, c]])
}

/// Horizontal shear by `degrees`.
pub fn shear(r: &TileRaster, degrees: f64) -> TileRaster {
    let k = degrees.to_radians().tan();
    warp(r, [[1.0, -k], [0.0, 1.0]])
}

/// Separable box blur with clamped edges, rounding half up.
pub fn box_blur(r: &TileRaster, radius: usize) -> TileRaster {
    if radius == 0 {
        return r.clone();
    }
    let (w, h, c) = (r.width, r.height, r.channels);
    let n = (2 * radius + 1) as u32;
    let pass = |src: &[u8], horizontal: bool| -> Vec<u8> {
        let mut out = vec![0u8; src.len()];
        for row in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    let mut sum = 0u32;
                    for d in -(radius as i64)..=radius as i64 {
                        let (sc, sr) = if horizontal {
                            ((col as i64 + d).clamp(0, w as i64 - 1) as usize, row)
                        } else {
                            (col, (row as i64 + d).clamp(0, h as i64 - 1) as usize)
                        };
                        sum += src[(sr * w + sc) * c + ch] as u32;
                    }
                    out[(row * w + col) * c + ch] = ((sum + n / 2) / n) as u8;
                }
            }
        }
        out
    };
    let pixels = pass(&pass(&r.pixels, true), false);
    TileRaster { pixels, ..r.clone() }
}

/// Adds independent uniform integer noise in `[-amplitude, amplitude]` to
/// every byte, saturating.
pub fn add_noise(r: &mut TileRaster, amplitude: i16, rng: &mut impl Rng) {
    for v in &mut r.pixels {
        let delta = rng.random_range(-amplitude..=amplitude);
        *v = (*v as i16 + delta).clamp(0, 255) as u8;
    }
}
