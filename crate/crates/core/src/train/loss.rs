//! Multi-resolution supervision: a softmax + per-class binary cross-entropy
//! term at every decoder level, combined with per-level weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LossReduction, Tape, Tensor, Var};

/// Per-level loss weights, finest level first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossWeights(pub Vec<f64>);

/// Weight combinations shipped as named presets.
pub const LOSS_PRESETS: &[(&str, [f64; 4])] = &[
    ("vaihingen", [1.0, 0.3, 0.3, 0.3]),
    ("lasdu", [1.0, 1.5, 1.5, 1.5]),
    ("dfc2019", [1.0, 1.5, 1.5, 1.5]),
    ("finest-only", [1.0, 0.0, 0.0, 0.0]),
    ("sweep-1", [1.0, 0.5, 1.0, 1.5]),
    ("sweep-2", [1.0, 1.5, 1.0, 0.5]),
    ("sweep-3", [1.0, 1.0, 1.0, 1.0]),
    ("sweep-4", [1.0, 1.5, 1.5, 1.5]),
    ("sweep-5", [1.0, 2.0, 2.0, 2.0]),
    ("sweep-6", [1.0, 0.5, 0.5, 0.5]),
    ("sweep-7", [1.0, 0.3, 0.3, 0.3]),
];

impl Default for LossWeights {
    fn default() -> Self {
        Self(vec![1.0, 0.3, 0.3, 0.3])
    }
}

impl LossWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let w = Self(weights);
        w.validate()?;
        Ok(w)
    }

    /// Supervision of the finest level only.
    pub fn finest_only(levels: usize) -> Self {
        let mut w = vec![0.0; levels];
        w[0] = 1.0;
        Self(w)
    }

    pub fn preset(name: &str) -> Option<Self> {
        LOSS_PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, w)| Self(w.to_vec()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!("loss weights must be finite and nonnegative: {:?}", self.0)));
        }
        if !self.0.iter().any(|w| *w > 0.0) {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

impl std::str::FromStr for LossWeights {
    type Err = Error;

    /// A preset name or a comma-separated list.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(p) = Self::preset(s) {
            return Ok(p);
        }
        let values = s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(format!("loss weights '{s}': {e}")))?;
        Self::new(values)
    }
}

/// Total loss node and the unweighted per-level terms.
#[derive(Clone, Debug)]
pub struct MrfaLoss {
    pub total: Var,
    pub levels: Vec<Var>,
}

impl MrfaLoss {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> (f64, Vec<f64>) {
        let v = |x: Var| tape.value(x).data()[0].as_f64();
        (v(self.total), self.levels.iter().map(|&l| v(l)).collect())
    }
}

/// `Σ_l λ_l · L_l` with `L_l = −Σ_j Σ_c [a log s + (1−a) log(1−s)]`,
/// averaged over the level's points under [`LossReduction::Mean`].
pub fn mrfa_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: &[Var],
    labels: &[&[usize]],
    weights: &LossWeights,
    reduction: LossReduction,
) -> Result<MrfaLoss> {
    weights.validate()?;
    if logits.len() != labels.len() || logits.len() != weights.0.len() {
        return Err(Error::shape(
            "mrfa_loss",
            format!("{} logit levels, {} label levels, {} weights", logits.len(), labels.len(), weights.0.len()),
        ));
    }
    let levels = logits
        .iter()
        .zip(labels)
        .map(|(&z, &a)| tape.softmax_bce(z, a, reduction))
        .collect::<Result<Vec<_>>>()?;
    let terms: Vec<(Var, T)> = levels.iter().zip(&weights.0).map(|(&l, &w)| (l, T::of(w))).collect();
    let total = tape.weighted_sum(&terms)?;
    Ok(MrfaLoss { total, levels })
}

/// The per-class cross-entropy bracket evaluated on scores directly, with
/// `0·log 0 := 0`. Used to check the loss at exact one-hot scores, which
/// no finite logits can reach.
pub fn bce_from_scores<T: Scalar>(scores: &Tensor<T>, labels: &[usize], reduction: LossReduction) -> Result<f64> {
    let c = scores.cols();
    let n = scores.len() / c;
    if labels.len() != n {
        return Err(Error::shape("bce_from_scores", format!("{n} rows vs {} labels", labels.len())));
    }
    let xlogy = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * y.ln() };
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Index {
                op: "bce_from_scores",
                index: y,
                len: c,
            });
        }
        for (ch, &s) in scores.row(i).iter().enumerate() {
            let a = if ch == y { 1.0 } else { 0.0 };
            let s = s.as_f64();
            total -= xlogy(a, s) + xlogy(1.0 - a, 1.0 - s);
        }
    }
    Ok(match reduction {
        LossReduction::Mean => total / n as f64,
        LossReduction::Sum => total,
    })
}
