//! Tile classifiers: a geometric baseline over clipped chains and a small
//! convolutional network trained from scratch on rasters.

mod heuristic;
mod network;
mod train;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

pub use heuristic::{classify_heuristic, max_node_degree, DEFAULT_MIN_BRANCH_DEG, DEFAULT_SNAP_M};
pub use network::{InputSpec, LayerSpec, Model, FORMAT_VERSION, MAGIC};
pub use train::{gradient_check, predict, probabilities, train_model, with_random_biases, GradientCheck, TrainConfig};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// Probability of `intersection`.
    pub score: f64,
}

impl Prediction {
    /// Ties at the threshold go to `intersection`.
    pub fn from_score(score: f64, threshold: f64) -> Self {
        let label = if score >= threshold {
            Label::Intersection
        } else {
            Label::Straight
        };
        Self { label, score }
    }
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    code: String,
    label: Label,
    score: f64,
}

pub fn write_predictions<W: Write>(mut sink: W, predictions: &[(String, Prediction)]) -> Result<()> {
    for (code, p) in predictions {
        let record = PredictionRecord {
            code: code.clone(),
            label: p.label,
            score: p.score,
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(sink, "{line}").map_err(|e| Error::Input(e.to_string()))?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(source: R) -> Result<Vec<(String, Prediction)>> {
    let mut out = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line = line.map_err(|e| Error::Input(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("predictions line {}: {e}", n + 1)))?;
        out.push((
            r.code,
            Prediction {
                label: r.label,
                score: r.score,
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_ties_go_to_intersection() {
        assert_eq!(Prediction::from_score(0.5, 0.5).label, Label::Intersection);
        assert_eq!(Prediction::from_score(0.0, 0.0).label, Label::Intersection);
        assert_eq!(Prediction::from_score(0.49, 0.5).label, Label::Straight);
    }

    #[test]
    fn prediction_jsonl_round_trip() {
        let preds = vec![
            ("9zvxvbq8".to_string(), Prediction::from_score(0.25, 0.5)),
            ("9zvxvbq9".to_string(), Prediction::from_score(1.0, 0.5)),
        ];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &preds).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with(r#"{"code":"9zvxvbq8","label":"straight","score":0.25}"#));
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), preds);
    }
}
