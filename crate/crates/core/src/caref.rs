// SPDX-License-Identifier: Apache-2.0

//! Class-aware relative feature error.
//!
//! Training features are grouped by the class the head *predicts* for them
//! (not their ground-truth label) and averaged per class. A sample is then
//! scored by the l1 distance to the mean of its predicted class, normalized
//! by its own l1 norm:
//!
//! ```text
//! E(x) = ‖F(x) - mean[pred(x)]‖₁ / ‖F(x)‖₁        score = -E(x)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::interchange::{ClassifierHead, FeatureMatrix};
use crate::linalg::{self, DenseMatrix};
use crate::logit::{self, LogitScore};

/// Per-class mean features fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub class_means: DenseMatrix,
    pub class_counts: Vec<usize>,
    /// Training-mean logit score, filled in by the CADRef fit.
    pub mean_logit_score: Option<f64>,
    pub fitted_with: Option<LogitScore>,
}

impl ClassProfile {
    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.class_means.cols()
    }

    pub fn is_usable(&self, class: usize) -> bool {
        self.class_counts.get(class).is_some_and(|&n| n > 0)
    }

    pub fn class_mean(&self, class: usize) -> Result<&[f64]> {
        if !self.is_usable(class) {
            return Err(OodError::UnusableClass(class));
        }
        Ok(self.class_means.row(class))
    }

    pub(crate) fn check(&self, head: &ClassifierHead) -> Result<()> {
        if self.num_classes() != head.num_classes() || self.feature_dim() != head.feature_dim() {
            return Err(OodError::ShapeMismatch {
                tensor: "class profile".into(),
                expected: format!("[{}, {}]", head.num_classes(), head.feature_dim()),
                actual: format!("[{}, {}]", self.num_classes(), self.feature_dim()),
            });
        }
        Ok(())
    }
}

pub fn fit_class_means(train: &FeatureMatrix, head: &ClassifierHead) -> Result<ClassProfile> {
    if train.rows() == 0 {
        return Err(OodError::EmptyInput("class means need training features"));
    }
    let logits = logit::compute_logits(train, head)?;
    let (c, d) = (head.num_classes(), head.feature_dim());
    let mut sums = DenseMatrix::zeros(c, d);
    let mut counts = vec![0usize; c];
    for (row, l) in train.matrix().row_iter().zip(logits.row_iter()) {
        let k = logit::predict(l);
        counts[k] += 1;
        for (j, x) in row.iter().enumerate() {
            sums.set(k, j, sums.get(k, j) + x);
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        if n == 0 {
            log::warn!("class {k} is never predicted on the training split; samples predicted as {k} score as most-OOD");
            continue;
        }
        for j in 0..d {
            sums.set(k, j, sums.get(k, j) / n as f64);
        }
    }
    Ok(ClassProfile {
        class_means: sums,
        class_counts: counts,
        mean_logit_score: None,
        fitted_with: None,
    })
}

/// `‖feature - class_mean‖₁ / ‖feature‖₁`.
pub fn relative_error(feature: &[f64], class_mean: &[f64]) -> Result<f64> {
    let norm = linalg::l1_norm(feature);
    if norm == 0.0 {
        return Err(OodError::ZeroNormFeature);
    }
    let distance: f64 = feature
        .iter()
        .zip(class_mean)
        .map(|(f, m)| (f - m).abs())
        .sum();
    Ok(distance / norm)
}

fn predicted_mean<'a>(
    feature: &[f64],
    profile: &'a ClassProfile,
    head: &ClassifierHead,
) -> Result<&'a [f64]> {
    profile.check(head)?;
    let logits = logit::logits_for(feature, head)?;
    profile.class_mean(logit::predict(&logits))
}

pub fn caref_score(feature: &[f64], profile: &ClassProfile, head: &ClassifierHead) -> Result<f64> {
    let mean = predicted_mean(feature, profile, head)?;
    Ok(-relative_error(feature, mean)?)
}

/// `-‖feature - class_mean‖₁`, no normalization.
pub fn l1_distance_score(
    feature: &[f64],
    profile: &ClassProfile,
    head: &ClassifierHead,
) -> Result<f64> {
    let mean = predicted_mean(feature, profile, head)?;
    Ok(-feature
        .iter()
        .zip(mean)
        .map(|(f, m)| (f - m).abs())
        .sum::<f64>())
}

/// `‖feature‖₁`.
pub fn l1_norm_score(feature: &[f64]) -> f64 {
    linalg::l1_norm(feature)
}
