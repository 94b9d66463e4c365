//! Confusion matrix and per-class precision, recall, F1 and IoU.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::shape("confusion", format!("{} counts for {classes} classes", counts.len())));
        }
        Ok(Self { classes, counts })
    }

    pub fn from_labels(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        let mut cm = Self::new(classes);
        cm.accumulate(truth, pred)?;
        if cm.total() == 0 {
            return Err(Error::invalid("confusion matrix of zero points"));
        }
        Ok(cm)
    }

    pub fn accumulate(&mut self, truth: &[usize], pred: &[usize]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::shape("confusion", format!("{} true vs {} predicted labels", truth.len(), pred.len())));
        }
        let c = self.classes;
        if let Some(&bad) = truth.iter().chain(pred).find(|&&l| l >= c) {
            return Err(Error::Index {
                op: "confusion",
                index: bad,
                len: c,
            });
        }
        for (&t, &p) in truth.iter().zip(pred) {
            self.counts[t * c + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("confusion", "class count mismatch"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.get(class, class)
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.classes).filter(|&t| t != class).map(|t| self.get(t, class)).sum()
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.classes).filter(|&p| p != class).map(|p| self.get(class, p)).sum()
    }

    /// CSV with a header of class names; `names` must have one entry per class.
    pub fn to_csv(&self, names: &[String]) -> Result<String> {
        if names.len() != self.classes {
            return Err(Error::shape("confusion", "one name per class required"));
        }
        let mut out = String::from("true\\pred");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (t, n) in names.iter().enumerate() {
            out.push_str(n);
            for v in self.row(t) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    /// No true or predicted points of this class.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub absent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub oa: f64,
    pub mf1: f64,
    pub miou: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores every class; `names` defaults to `class{i}` when `None`.
pub fn per_class_metrics(cm: &ConfusionMatrix, names: Option<&[String]>) -> MetricsReport {
    let c = cm.classes();
    let classes: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let (tp, fp, fn_) = (cm.true_positives(k), cm.false_positives(k), cm.false_negatives(k));
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                name: names
                    .and_then(|n| n.get(k).cloned())
                    .unwrap_or_else(|| format!("class{k}")),
                precision,
                recall,
                f1,
                iou: ratio(tp, tp + fp + fn_),
                absent: tp + fp + fn_ == 0,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if c == 0 {
            0.0
        } else {
            classes.iter().map(f).sum::<f64>() / c as f64
        }
    };
    MetricsReport {
        oa: ratio(cm.trace(), cm.total()),
        mf1: mean(|m| m.f1),
        miou: mean(|m| m.iou),
        classes,
    }
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,precision,recall,f1,iou,oa\n");
        for m in &self.classes {
            let cols = [m.precision, m.recall, m.f1, m.iou].map(significant);
            writeln!(out, "{},{},", m.name, cols.join(",")).unwrap();
        }
        writeln!(
            out,
            "mean,,,{},{},{}",
            significant(self.mf1),
            significant(self.miou),
            significant(self.oa)
        )
        .unwrap();
        out
    }
}

/// Fixed-point text with at least nine significant digits.
fn significant(v: f64) -> String {
    let decimals = if v == 0.0 {
        9
    } else {
        (8 - v.abs().log10().floor() as i32).max(0) as usize
    };
    format!("{v:.decimals$}")
}

pub fn export_report(report: &MetricsReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv(),
    };
    std::fs::write(path, text)?;
    Ok(())
}
