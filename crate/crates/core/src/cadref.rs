// SPDX-License-Identifier: Apache-2.0

//! Decoupled class-aware relative feature error.
//!
//! The relative feature `rel = F(x) - mean[pred(x)]` is split by the sign
//! of each index's product with `W_max`, the weight row of the winning
//! logit. The two partial errors are
//!
//! ```text
//! E_p = |Σ_{i∈Pos} rel_i| / ‖F(x)‖₁      E_n = |Σ_{i∈Neg} rel_i| / ‖F(x)‖₁
//! ```
//!
//! and the fused score is `-(E_p / S(x) + E_n / S_train)`, where `S` is a
//! logit score of the sample and `S_train` its mean over the training split.
//! Indices whose product is exactly zero belong to `Neg`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::caref::{self, ClassProfile};
use crate::error::{OodError, Result};
use crate::interchange::{ClassifierHead, FeatureMatrix};
use crate::linalg;
use crate::logit::{self, LogitScore};

/// Sample logit scores at or below this are too small to divide by.
pub const SAMPLE_SCORE_FLOOR: f64 = 1e-9;

/// Which product decides whether index `i` is positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoupleMode {
    /// `W_max[i] · (F(x)[i] - mean[i])`.
    #[default]
    RelativeFeatureSign,
    /// `W_max[i] · F(x)[i]`.
    RawFeatureSign,
}

/// How the relative features of one index set collapse to a scalar.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoupleAggregation {
    /// `|Σ rel_i|`.
    #[default]
    AbsSum,
    /// `Σ |rel_i|`; with this, `E_p + E_n` equals the CARef error.
    SumAbs,
}

impl FromStr for DecoupleMode {
    type Err = OodError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" | "relative_feature_sign" => Ok(DecoupleMode::RelativeFeatureSign),
            "raw" | "raw_feature_sign" => Ok(DecoupleMode::RawFeatureSign),
            other => Err(OodError::InvalidConfig(format!(
                "unknown decouple mode {other:?}"
            ))),
        }
    }
}

impl FromStr for DecoupleAggregation {
    type Err = OodError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs_sum" => Ok(DecoupleAggregation::AbsSum),
            "sum_abs" => Ok(DecoupleAggregation::SumAbs),
            other => Err(OodError::InvalidConfig(format!(
                "unknown decouple aggregation {other:?}"
            ))),
        }
    }
}

impl fmt::Display for DecoupleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoupleMode::RelativeFeatureSign => "relative_feature_sign",
            DecoupleMode::RawFeatureSign => "raw_feature_sign",
        })
    }
}

impl fmt::Display for DecoupleAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoupleAggregation::AbsSum => "abs_sum",
            DecoupleAggregation::SumAbs => "sum_abs",
        })
    }
}

/// Component toggles for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub use_pos: bool,
    pub use_neg: bool,
    /// Divide `E_p` by the sample's logit score; when off the divisor is 1.
    pub use_scaling: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_pos: true,
            use_neg: true,
            use_scaling: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CadrefConfig {
    pub mode: DecoupleMode,
    pub aggregation: DecoupleAggregation,
    pub logit_score: LogitScore,
    pub ablation: Ablation,
}

impl CadrefConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.ablation.use_pos && !self.ablation.use_neg {
            return Err(OodError::InvalidConfig(
                "CADRef needs at least one of the positive or negative error terms".into(),
            ));
        }
        self.logit_score.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoupledError {
    pub pos: f64,
    pub neg: f64,
}

/// Splits the relative error of `feature` against its predicted class mean.
pub fn decouple_errors(
    feature: &[f64],
    profile: &ClassProfile,
    head: &ClassifierHead,
    mode: DecoupleMode,
    aggregation: DecoupleAggregation,
) -> Result<DecoupledError> {
    profile.check(head)?;
    let logits = logit::logits_for(feature, head)?;
    let winner = logit::predict(&logits);
    let mean = profile.class_mean(winner)?;
    decouple_with(feature, mean, head.weights().row(winner), mode, aggregation)
}

pub(crate) fn decouple_with(
    feature: &[f64],
    mean: &[f64],
    winner_weights: &[f64],
    mode: DecoupleMode,
    aggregation: DecoupleAggregation,
) -> Result<DecoupledError> {
    let norm = linalg::l1_norm(feature);
    if norm == 0.0 {
        return Err(OodError::ZeroNormFeature);
    }
    let (mut pos, mut neg) = (0.0, 0.0);
    for ((&f, &m), &w) in feature.iter().zip(mean).zip(winner_weights) {
        let rel = f - m;
        let sign_source = match mode {
            DecoupleMode::RelativeFeatureSign => rel,
            DecoupleMode::RawFeatureSign => f,
        };
        let term = match aggregation {
            DecoupleAggregation::AbsSum => rel,
            DecoupleAggregation::SumAbs => rel.abs(),
        };
        if w * sign_source > 0.0 {
            pos += term;
        } else {
            neg += term;
        }
    }
    Ok(DecoupledError {
        pos: pos.abs() / norm,
        neg: neg.abs() / norm,
    })
}

fn raw_mean_logit_score(
    train: &FeatureMatrix,
    head: &ClassifierHead,
    score: &LogitScore,
) -> Result<f64> {
    if train.rows() == 0 {
        return Err(OodError::EmptyInput(
            "mean logit score needs training features",
        ));
    }
    let logits = logit::compute_logits(train, head)?;
    let mut total = 0.0;
    for row in logits.row_iter() {
        total += score.score(row)?;
    }
    Ok(total / train.rows() as f64)
}

/// Mean of `score` over the training split. A non-positive mean would flip
/// the sign of the negative-error term for every sample, so it is rejected.
pub fn fit_mean_logit_score(
    train: &FeatureMatrix,
    head: &ClassifierHead,
    score: &LogitScore,
) -> Result<f64> {
    let mean = raw_mean_logit_score(train, head, score)?;
    if mean <= 0.0 {
        return Err(OodError::NonPositiveMean(mean));
    }
    Ok(mean)
}

/// Class means plus the training-mean logit score.
pub fn fit_cadref(
    train: &FeatureMatrix,
    head: &ClassifierHead,
    config: &CadrefConfig,
) -> Result<ClassProfile> {
    config.validate()?;
    let mut profile = caref::fit_class_means(train, head)?;
    let mean = if config.ablation.use_neg {
        fit_mean_logit_score(train, head, &config.logit_score)?
    } else {
        raw_mean_logit_score(train, head, &config.logit_score)?
    };
    profile.mean_logit_score = Some(mean);
    profile.fitted_with = Some(config.logit_score);
    Ok(profile)
}

/// `-(E_p / S(x) + E_n / S_train)` with the ablation toggles applied.
pub fn fuse(
    errors: DecoupledError,
    sample_score: f64,
    train_mean_score: f64,
    ablation: Ablation,
) -> Result<f64> {
    let mut total = 0.0;
    if ablation.use_pos && errors.pos != 0.0 {
        if ablation.use_scaling {
            if sample_score <= SAMPLE_SCORE_FLOOR {
                return Err(OodError::NonPositiveSampleScore(sample_score));
            }
            total += errors.pos / sample_score;
        } else {
            total += errors.pos;
        }
    }
    if ablation.use_neg {
        total += errors.neg / train_mean_score;
    }
    Ok(-total)
}

pub fn cadref_score(
    feature: &[f64],
    profile: &ClassProfile,
    head: &ClassifierHead,
    config: &CadrefConfig,
) -> Result<f64> {
    let train_mean = match (profile.mean_logit_score, profile.fitted_with) {
        (Some(m), Some(with)) if with == config.logit_score => m,
        (Some(_), Some(with)) => {
            return Err(OodError::InvalidState(format!(
                "profile mean was fitted with {with:?}, scoring uses {:?}",
                config.logit_score
            )))
        }
        _ => return Err(OodError::NotFitted("cadref".into())),
    };
    if config.ablation.use_neg && train_mean <= 0.0 {
        return Err(OodError::NonPositiveMean(train_mean));
    }
    profile.check(head)?;
    let logits = logit::logits_for(feature, head)?;
    let winner = logit::predict(&logits);
    let mean = profile.class_mean(winner)?;
    let errors = decouple_with(
        feature,
        mean,
        head.weights().row(winner),
        config.mode,
        config.aggregation,
    )?;
    let sample_score = if config.ablation.use_pos && config.ablation.use_scaling {
        config.logit_score.score(&logits)?
    } else {
        1.0
    };
    fuse(errors, sample_score, train_mean, config.ablation)
}
