// SPDX-License-Identifier: Apache-2.0

//! Logit-based confidence scores. Higher means more in-distribution.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::interchange::{ClassifierHead, FeatureMatrix};
use crate::linalg::{self, DenseMatrix};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_GEN_GAMMA: f64 = 0.1;
pub const DEFAULT_GEN_TOP_M: usize = 100;

/// A logit score together with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum LogitScore {
    Msp,
    MaxLogit,
    Energy {
        temperature: f64,
    },
    /// `top_m = None` resolves to `min(100, c)` at scoring time.
    Gen {
        top_m: Option<usize>,
        gamma: f64,
    },
}

impl Default for LogitScore {
    fn default() -> Self {
        LogitScore::Energy {
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl fmt::Display for LogitScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl LogitScore {
    pub fn gen_default() -> Self {
        LogitScore::Gen {
            top_m: None,
            gamma: DEFAULT_GEN_GAMMA,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LogitScore::Msp => "msp",
            LogitScore::MaxLogit => "maxlogit",
            LogitScore::Energy { .. } => "energy",
            LogitScore::Gen { .. } => "gen",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LogitScore::Energy { temperature }
                if !(temperature > 0.0 && temperature.is_finite()) =>
            {
                Err(OodError::InvalidConfig(format!(
                    "energy temperature must be positive, got {temperature}"
                )))
            }
            LogitScore::Gen { gamma, .. } if !(gamma > 0.0 && gamma.is_finite()) => Err(
                OodError::InvalidConfig(format!("GEN gamma must be positive, got {gamma}")),
            ),
            LogitScore::Gen { top_m: Some(0), .. } => {
                Err(OodError::MOutOfRange { m: 0, classes: 0 })
            }
            _ => Ok(()),
        }
    }

    pub fn score(&self, logits: &[f64]) -> Result<f64> {
        Ok(match *self {
            LogitScore::Msp => msp(logits),
            LogitScore::MaxLogit => maxlogit(logits),
            LogitScore::Energy { temperature } => energy(logits, temperature),
            LogitScore::Gen { top_m, gamma } => {
                let m = top_m.unwrap_or_else(|| DEFAULT_GEN_TOP_M.min(logits.len()));
                gen(logits, m, gamma)?
            }
        })
    }
}

/// `W · feature + B`.
pub fn logits_for(feature: &[f64], head: &ClassifierHead) -> Result<Vec<f64>> {
    let mut out = head.weights().matvec(feature)?;
    for (o, b) in out.iter_mut().zip(head.bias()) {
        *o += b;
    }
    Ok(out)
}

/// Logits for every row, as an `N x c` matrix.
pub fn compute_logits(features: &FeatureMatrix, head: &ClassifierHead) -> Result<DenseMatrix> {
    if features.dim() != head.feature_dim() {
        return Err(OodError::DimensionMismatch(format!(
            "features have {} columns, head expects {}",
            features.dim(),
            head.feature_dim()
        )));
    }
    let mut logits = linalg::matmul(features.matrix(), &head.weights().transpose())?;
    for i in 0..logits.rows() {
        for (k, b) in head.bias().iter().enumerate() {
            logits.set(i, k, logits.get(i, k) + b);
        }
    }
    Ok(logits)
}

/// Predicted class: argmax of the logits, ties to the lowest index.
pub fn predict(logits: &[f64]) -> usize {
    linalg::argmax(logits).expect("head has at least two classes")
}

pub fn msp(logits: &[f64]) -> f64 {
    linalg::softmax(logits)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn maxlogit(logits: &[f64]) -> f64 {
    logits.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `T · log Σ exp(L / T)`.
pub fn energy(logits: &[f64], temperature: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    temperature * linalg::log_sum_exp(&scaled)
}

/// Negated truncated generalized entropy over the `m` largest softmax
/// probabilities: `-Σ_{i<=m} p_i^γ (1 - p_i)^γ`.
pub fn gen(logits: &[f64], m: usize, gamma: f64) -> Result<f64> {
    if m == 0 || m > logits.len() {
        return Err(OodError::MOutOfRange {
            m,
            classes: logits.len(),
        });
    }
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let total: f64 = linalg::top_k(&exps, m)
        .into_iter()
        .map(|i| {
            let p = exps[i] / sum;
            // 1 - p loses every digit when p is close to 1
            let rest = if exps[i] > 0.5 * sum {
                exps.iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, e)| e)
                    .sum::<f64>()
            } else {
                sum - exps[i]
            };
            p.powf(gamma) * (rest / sum).powf(gamma)
        })
        .sum();
    Ok(-total)
}
