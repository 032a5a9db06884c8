//! Confusion matrices and precision/recall/F1 reports.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

/// `counts[actual][predicted]` in class order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 2]; 2]) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..2).map(|i| self.counts[i][i]).sum()
    }

    /// The same matrix with the class order reversed.
    pub fn swapped(&self) -> Self {
        let c = self.counts;
        Self::new([[c[1][1], c[1][0]], [c[0][1], c[0][0]]])
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let err = |e: csv::Error| Error::Input(e.to_string());
        w.write_record(["actual", "predicted", "count"]).map_err(err)?;
        for a in Label::ALL {
            for p in Label::ALL {
                let n = self.counts[a.index()][p.index()].to_string();
                w.write_record([a.name(), p.name(), n.as_str()]).map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::Input(e.to_string()))
    }
}

pub fn confusion(pairs: impl IntoIterator<Item = (Label, Label)>) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for (actual, predicted) in pairs {
        cm.counts[actual.index()][predicted.index()] += 1;
    }
    cm
}

/// Like [`confusion`] for label names, rejecting anything outside the two
/// classes.
pub fn confusion_from_names<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<ConfusionMatrix> {
    let typed = pairs
        .into_iter()
        .map(|(a, p)| Ok((Label::parse(a)?, Label::parse(p)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(confusion(typed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Full-precision metrics; round only for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: BTreeMap<String, ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: u64,
    /// Degenerate ratios and reference mismatches, one line each.
    pub flags: Vec<String>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64, what: String, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(format!("{what}: 0/0 reported as 0"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Domain("cannot report on an empty confusion matrix".into()));
    }
    let mut flags = Vec::new();
    let mut per_class = Vec::new();
    for label in Label::ALL {
        let k = label.index();
        let tp = cm.counts[k][k];
        let support: u64 = cm.counts[k].iter().sum();
        let predicted: u64 = (0..2).map(|a| cm.counts[a][k]).sum();
        let precision = ratio(tp, predicted, format!("{}.precision", label.name()), &mut flags);
        let recall = ratio(tp, support, format!("{}.recall", label.name()), &mut flags);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            flags.push(format!("{}.f1: 0/0 reported as 0", label.name()));
            0.0
        };
        per_class.push((
            label,
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            },
        ));
    }

    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|(_, m)| f(m)).sum::<f64>() / n;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|(_, m)| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    Ok(EvalReport {
        macro_avg: Averages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        },
        weighted_avg: Averages {
            precision: weighted(|m| m.precision),
            recall: weighted(|m| m.recall),
            f1: weighted(|m| m.f1),
        },
        classes: per_class.iter().map(|(l, m)| (l.name().to_string(), *m)).collect(),
        accuracy: cm.correct() as f64 / total as f64,
        total,
        flags,
        confusion: *cm,
    })
}

/// Two-decimal display rounding, half away from zero.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Two-decimal reference figures to compare a report against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMetrics {
    pub classes: BTreeMap<String, Averages>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
}

impl EvalReport {
    /// Every metric whose two-decimal value differs from the reference by
    /// more than `tolerance`, as `(name, computed, reference)`.
    pub fn reference_mismatches(&self, reference: &ReferenceMetrics, tolerance: f64) -> Vec<(String, f64, f64)> {
        let mut cells = Vec::new();
        let mut push = |name: String, ours: &Averages, theirs: &Averages| {
            cells.push((format!("{name}.precision"), ours.precision, theirs.precision));
            cells.push((format!("{name}.recall"), ours.recall, theirs.recall));
            cells.push((format!("{name}.f1"), ours.f1, theirs.f1));
        };
        for (name, theirs) in &reference.classes {
            if let Some(m) = self.classes.get(name) {
                push(
                    name.clone(),
                    &Averages {
                        precision: m.precision,
                        recall: m.recall,
                        f1: m.f1,
                    },
                    theirs,
                );
            }
        }
        push("macro_avg".into(), &self.macro_avg, &reference.macro_avg);
        push("weighted_avg".into(), &self.weighted_avg, &reference.weighted_avg);
        cells.push(("accuracy".into(), self.accuracy, reference.accuracy));
        cells
            .into_iter()
            .filter(|(_, ours, theirs)| (round2(*ours) - theirs).abs() > tolerance)
            .collect()
    }

    /// Records each reference mismatch in `flags` and returns how many there were.
    pub fn flag_reference_mismatches(&mut self, reference: &ReferenceMetrics, tolerance: f64) -> usize {
        let found = self.reference_mismatches(reference, tolerance);
        for (name, ours, theirs) in &found {
            self.flags.push(format!(
                "{name}: computed {ours:.4} (rounds to {:.2}) but reference prints {theirs:.2}",
                round2(*ours)
            ));
        }
        found.len()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Intersection as I, Straight as S};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn counts_pairs() {
        assert_eq!(confusion([(I, I), (S, S)]).counts, [[1, 0], [0, 1]]);
        assert_eq!(confusion([]).counts, [[0, 0], [0, 0]]);
        let pairs = std::iter::repeat_n((I, I), 56)
            .chain(std::iter::repeat_n((I, S), 11))
            .chain(std::iter::repeat_n((S, I), 1))
            .chain(std::iter::repeat_n((S, S), 169));
        assert_eq!(confusion(pairs).counts, [[56, 11], [1, 169]]);
    }

    #[test]
    fn unknown_name_is_domain_error() {
        assert!(matches!(
            confusion_from_names([("intersection", "ramp")]),
            Err(Error::Domain(_))
        ));
        assert_eq!(
            confusion_from_names([("straight", "intersection")]).unwrap().counts,
            [[0, 0], [1, 0]]
        );
    }

    #[test]
    fn perfect_classifier() {
        let r = report(&ConfusionMatrix::new([[1, 0], [0, 1]])).unwrap();
        assert!(r.flags.is_empty());
        assert_eq!(r.accuracy, 1.0);
        for m in r.classes.values() {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(
            r.macro_avg,
            Averages {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
    }

    #[test]
    fn degenerate_class_is_flagged() {
        let r = report(&ConfusionMatrix::new([[0, 5], [0, 5]])).unwrap();
        let int = r.classes["intersection"];
        assert_eq!((int.precision, int.recall), (0.0, 0.0));
        assert_eq!(r.classes["straight"].recall, 1.0);
        assert_eq!(r.accuracy, 0.5);
        assert!(r.flags.iter().any(|f| f.starts_with("intersection.precision")));
    }

    #[test]
    fn empty_matrix_is_domain_error() {
        assert!(matches!(report(&ConfusionMatrix::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn hand_computed_values() {
        let r = report(&ConfusionMatrix::new([[56, 11], [1, 169]])).unwrap();
        let int = r.classes["intersection"];
        assert!(close(int.precision, 56.0 / 57.0));
        assert!(close(int.recall, 56.0 / 67.0));
        assert_eq!(int.support, 67);
        assert!(close(r.accuracy, 225.0 / 237.0));
        assert!(close(r.weighted_avg.recall, r.accuracy));
        assert_eq!(round2(r.weighted_avg.f1), 0.95);
        assert_eq!(r.total, 237);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        ConfusionMatrix::new([[2, 1], [0, 3]]).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "actual,predicted,count\nintersection,intersection,2\nintersection,straight,1\nstraight,intersection,0\nstraight,straight,3\n"
        );
    }

    #[test]
    fn json_field_names() {
        let r = report(&ConfusionMatrix::new([[1, 0], [0, 1]])).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in [
            "classes",
            "accuracy",
            "macro_avg",
            "weighted_avg",
            "total",
            "flags",
            "confusion",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["classes"]["intersection"]["support"].is_u64());
    }

    #[test]
    fn mismatches_are_flagged() {
        let mut r = report(&ConfusionMatrix::new([[1, 0], [0, 1]])).unwrap();
        let ones = Averages {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
        let mut reference = ReferenceMetrics {
            classes: [("intersection".to_string(), ones), ("straight".to_string(), ones)].into(),
            accuracy: 1.0,
            macro_avg: ones,
            weighted_avg: ones,
        };
        assert_eq!(r.flag_reference_mismatches(&reference, 0.005), 0);
        reference.weighted_avg.f1 = 0.93;
        assert_eq!(r.flag_reference_mismatches(&reference, 0.005), 1);
        assert!(r.flags[0].starts_with("weighted_avg.f1"));
    }
}
