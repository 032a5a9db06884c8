//! Training, inference and the finite-difference gradient check.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, TileSample};
use crate::error::{Error, Result};
use crate::raster::TileRaster;
use crate::seed::derive_seed;

use super::network::{InputSpec, Model, Net};
use super::Prediction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub input_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            input_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs >= 1
            && self.batch_size >= 1
            && self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.input_size >= 4;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }
}

/// Area-averages the raster to the model input size and maps it to CHW
/// values in [0, 1] with ink high and background zero.
fn to_input(raster: &TileRaster, spec: InputSpec) -> Result<Vec<f64>> {
    if raster.channels != spec.channels {
        return Err(Error::Shape(format!(
            "raster has {} channels, model expects {}",
            raster.channels, spec.channels
        )));
    }
    let resized;
    let r = if raster.width == spec.size && raster.height == spec.size {
        raster
    } else {
        resized = raster.resample(spec.size);
        &resized
    };
    let (c, plane) = (spec.channels, spec.size * spec.size);
    let mut out = vec![0.0; c * plane];
    for (p, px) in r.pixels.chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            out[ch * plane + p] = 1.0 - v as f64 / 255.0;
        }
    }
    Ok(out)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of one sample; adds its parameter gradient into `grad`
/// when given.
fn sample_loss(net: &Net, params: &[f64], x: Vec<f64>, label: Label, grad: Option<&mut [f64]>) -> f64 {
    let trace = net.forward(params, x);
    let logits = trace.logits();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let loss = log_sum - logits[label.index()];
    if let Some(grad) = grad {
        let mut d = softmax(logits);
        d[label.index()] -= 1.0;
        net.backward(params, &trace, d, grad);
    }
    loss
}

/// Class probabilities in class order.
pub fn probabilities(model: &Model, raster: &TileRaster) -> Result<[f64; 2]> {
    let x = to_input(raster, model.input)?;
    let net = model.net();
    let p = softmax(net.forward(&model.params_f64(), x).logits());
    Ok([p[0], p[1]])
}

pub fn predict(model: &Model, raster: &TileRaster, threshold: f64) -> Result<Prediction> {
    let p = probabilities(model, raster)?;
    Ok(Prediction::from_score(p[Label::Intersection.index()], threshold))
}

/// Trains the reference architecture with minibatch momentum SGD on mean
/// cross-entropy, returning the model and each epoch's mean loss.
///
/// Per-sample gradients of a batch are computed in parallel and summed in
/// sample order, so the result is independent of the worker count.
pub fn train_model(train: &[TileSample], cfg: &TrainConfig) -> Result<(Model, Vec<f64>)> {
    cfg.validate()?;
    for label in Label::ALL {
        if !train.iter().any(|s| s.label == label) {
            return Err(Error::Config(format!("training set has no {} samples", label.name())));
        }
    }
    let spec = InputSpec {
        size: cfg.input_size,
        channels: train[0].raster.channels,
    };
    let inputs: Vec<Vec<f64>> = train
        .par_iter()
        .map(|s| to_input(&s.raster, spec))
        .collect::<Result<_>>()?;

    let mut model = Model::new(spec, cfg.seed)?;
    let mut params = model.params_f64();
    let mut velocity = vec![0.0; params.len()];
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    {
        let net = model.net();
        for epoch in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "epoch", epoch as u64));
            order.sort_unstable();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let per_sample: Vec<(f64, Vec<f64>)> = batch
                    .par_iter()
                    .map(|&i| {
                        let mut g = vec![0.0; params.len()];
                        let loss = sample_loss(&net, &params, inputs[i].clone(), train[i].label, Some(&mut g));
                        (loss, g)
                    })
                    .collect();
                let scale = 1.0 / batch.len() as f64;
                let mut grad = vec![0.0; params.len()];
                for (loss, g) in &per_sample {
                    total += loss;
                    for (a, b) in grad.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                    *v = cfg.momentum * *v + g * scale;
                    *p -= cfg.learning_rate * *v;
                }
            }
            let mean = total / train.len() as f64;
            if !mean.is_finite() || params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    loss: mean,
                });
            }
            curve.push(mean);
        }
    }
    model.weights = params.iter().map(|&p| p as f32).collect();
    Ok((model, curve))
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// Parameters actually compared; exact zeros are skipped.
    pub compared: usize,
}

/// Compares analytic and central-difference gradients of the sample loss
/// over up to `count` random parameters.
///
/// Runs in double precision on the model's weights. Parameters whose
/// analytic and numeric gradients are both below 1e-10 count as exact and
/// are not compared.
pub fn gradient_check(model: &Model, sample: &TileSample, epsilon: f64, count: usize) -> Result<GradientCheck> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let x = to_input(&sample.raster, model.input)?;
    let net = model.net();
    let mut params = model.params_f64();
    let mut analytic = vec![0.0; params.len()];
    sample_loss(&net, &params, x.clone(), sample.label, Some(&mut analytic));

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(model.seed, "gradcheck", 0));
    let picks = index::sample(&mut rng, params.len(), params.len().min(count)).into_vec();
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for i in picks {
        let original = params[i];
        params[i] = original + epsilon;
        let up = sample_loss(&net, &params, x.clone(), sample.label, None);
        params[i] = original - epsilon;
        let down = sample_loss(&net, &params, x.clone(), sample.label, None);
        params[i] = original;
        let numeric = (up - down) / (2.0 * epsilon);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale > 1e-10 {
            worst = worst.max((analytic[i] - numeric).abs() / scale);
            compared += 1;
        }
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        compared,
    })
}

/// A copy of `model` with every bias drawn uniformly from `[-0.1, 0.1]`,
/// which moves rectifier inputs off zero for finite-difference checks.
pub fn with_random_biases(model: &Model, seed: u64) -> Model {
    let mut m = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "bias", 0));
    let mut off = 0;
    for layer in &model.layers {
        let (n, total) = (layer.weight_count(), layer.param_count());
        for b in &mut m.weights[off + n..off + total] {
            *b = rng.random_range(-0.1f32..=0.1);
        }
        off += total;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Provenance;
    use crate::raster::RenderMode;

    fn striped(size: usize, mode: RenderMode, vertical: bool, offset: usize) -> TileRaster {
        let mut r = TileRaster::blank(size, mode);
        let c = r.channels;
        for i in 0..size {
            for band in 0..2 {
                let (col, row) = if vertical {
                    (size / 2 + band - offset, i)
                } else {
                    (i, size / 2 + band - offset)
                };
                let px = (row * size + col) * c;
                r.pixels[px..px + c].iter_mut().for_each(|v| *v = 0);
            }
        }
        r
    }

    fn toy_set(n: usize, mode: RenderMode) -> Vec<TileSample> {
        (0..n)
            .map(|i| TileSample {
                code: format!("t{i}"),
                raster: striped(16, mode, i % 2 == 0, i % 3),
                label: if i % 2 == 0 {
                    Label::Intersection
                } else {
                    Label::Straight
                },
                provenance: Provenance::Original,
            })
            .collect()
    }

    fn spec(size: usize, channels: usize) -> InputSpec {
        InputSpec { size, channels }
    }

    #[test]
    fn zero_model_scores_one_half() {
        let m = Model::zeros(spec(64, 3)).unwrap();
        let p = predict(&m, &TileRaster::blank(64, RenderMode::Speed), 0.5).unwrap();
        assert_eq!(p.score, 0.5);
        assert_eq!(p.label, Label::Intersection);
    }

    #[test]
    fn threshold_zero_always_intersection() {
        let m = Model::new(spec(16, 1), 3).unwrap();
        let r = striped(16, RenderMode::Grayscale, true, 0);
        assert_eq!(predict(&m, &r, 0.0).unwrap().label, Label::Intersection);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let m = Model::new(spec(16, 3), 3).unwrap();
        let r = TileRaster::blank(16, RenderMode::Grayscale);
        assert!(matches!(predict(&m, &r, 0.5), Err(Error::Shape(_))));
    }

    #[test]
    fn large_rasters_are_downscaled() {
        let m = Model::new(spec(16, 1), 3).unwrap();
        let big = striped(64, RenderMode::Grayscale, false, 0);
        let small = big.resample(16);
        assert_eq!(predict(&m, &big, 0.5).unwrap(), predict(&m, &small, 0.5).unwrap());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = with_random_biases(&Model::new(spec(16, 3), 11).unwrap(), 2);
        let p = probabilities(&m, &striped(16, RenderMode::Speed, true, 1)).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_on_toy_data() {
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            input_size: 16,
            seed: 7,
            ..Default::default()
        };
        let (_, curve) = train_model(&toy_set(20, RenderMode::Grayscale), &cfg).unwrap();
        assert_eq!(curve.len(), 50);
        assert!(curve[49] < curve[0], "{curve:?}");
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 3,
            learning_rate: 0.0,
            input_size: 16,
            seed: 1,
            ..Default::default()
        };
        let (model, curve) = train_model(&toy_set(8, RenderMode::Speed), &cfg).unwrap();
        assert!(curve.iter().all(|&l| (l - curve[0]).abs() < 1e-12), "{curve:?}");
        assert_eq!(model, Model::new(spec(16, 3), 1).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            input_size: 16,
            seed: 2,
            ..Default::default()
        };
        let data = toy_set(12, RenderMode::Grayscale);
        assert_eq!(train_model(&data, &cfg).unwrap(), train_model(&data, &cfg).unwrap());
    }

    #[test]
    fn single_class_is_config_error() {
        let data: Vec<TileSample> = toy_set(6, RenderMode::Grayscale)
            .into_iter()
            .filter(|s| s.label == Label::Straight)
            .collect();
        assert!(matches!(
            train_model(&data, &TrainConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 2,
            learning_rate: 1e300,
            input_size: 16,
            seed: 2,
            ..Default::default()
        };
        assert!(matches!(
            train_model(&toy_set(8, RenderMode::Grayscale), &cfg),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = with_random_biases(&Model::new(spec(16, 3), 4).unwrap(), 4);
        let s = &toy_set(3, RenderMode::Speed)[2];
        let g = gradient_check(&m, s, 1e-4, 128).unwrap();
        assert!(g.max_relative_error < 1e-4, "{g:?}");
        assert!(g.compared >= 100, "{g:?}");
        let g2 = gradient_check(&m, s, 2e-4, 128).unwrap();
        assert!(g2.max_relative_error < 1e-4, "{g2:?}");
    }

    #[test]
    fn zero_model_bias_gradients_are_exact() {
        let m = Model::zeros(spec(16, 1)).unwrap();
        let s = TileSample {
            code: "z".into(),
            raster: TileRaster::blank(16, RenderMode::Grayscale),
            label: Label::Straight,
            provenance: Provenance::Original,
        };
        assert!(gradient_check(&m, &s, 1e-4, 128).unwrap().max_relative_error < 1e-9);
    }

    #[test]
    fn epsilon_out_of_range() {
        let m = Model::zeros(spec(16, 1)).unwrap();
        let s = &toy_set(1, RenderMode::Grayscale)[0];
        assert!(gradient_check(&m, s, 1e-2, 128).is_err());
    }
}
