// SPDX-License-Identifier: Apache-2.0

//! Feature-shaping baselines. Each one rewrites the feature vector (or the
//! head weights) and hands the resulting logits to an inner logit score.

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::interchange::{ClassifierHead, FeatureMatrix};
use crate::linalg::{self, DenseMatrix};
use crate::logit::{self, LogitScore};

pub const DEFAULT_REACT_PERCENTILE: f64 = 90.0;
pub const DEFAULT_ASH_PRUNE_PERCENT: f64 = 90.0;
pub const DEFAULT_DICE_SPARSITY: f64 = 0.7;

/// Rectification threshold: the `p`-th percentile over every training
/// activation pooled together.
pub fn fit_react_threshold(train: &FeatureMatrix, p: f64) -> Result<f64> {
    if train.rows() == 0 || train.dim() == 0 {
        return Err(OodError::EmptyInput("ReAct needs training activations"));
    }
    linalg::percentile(train.matrix().as_slice(), p)
}

pub fn react_shape(feature: &[f64], threshold: f64) -> Vec<f64> {
    feature.iter().map(|&x| x.min(threshold)).collect()
}

pub fn react_score(
    feature: &[f64],
    threshold: f64,
    head: &ClassifierHead,
    inner: &LogitScore,
) -> Result<f64> {
    inner.score(&logit::logits_for(&react_shape(feature, threshold), head)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AshVariant {
    /// Kept activations scaled by `exp(s_o / s_p)`.
    S,
    /// Kept activations left as they are.
    P,
    /// Every kept slot carries `s_o / n`.
    B,
}

impl AshVariant {
    pub fn name(self) -> &'static str {
        match self {
            AshVariant::S => "ash_s",
            AshVariant::P => "ash_p",
            AshVariant::B => "ash_b",
        }
    }
}

/// Prunes every activation below the sample's own `prune_percent`
/// percentile and rescales the survivors according to `variant`.
///
/// `s_o` is the sum before pruning, `s_p` the sum of the survivors and `n`
/// their count. When `s_p == 0` the ASH-S exponent is undefined and the
/// survivors are left unscaled.
pub fn ash_shape(feature: &[f64], variant: AshVariant, prune_percent: f64) -> Result<Vec<f64>> {
    if !(0.0..100.0).contains(&prune_percent) {
        return Err(OodError::InvalidConfig(format!(
            "ASH prune percent {prune_percent} outside [0, 100)"
        )));
    }
    let threshold = linalg::percentile(feature, prune_percent)?;
    let kept = feature.iter().filter(|&&x| x >= threshold).count();
    if kept == 0 {
        return Err(OodError::AllPruned(threshold));
    }
    let sum_before: f64 = feature.iter().sum();
    let sum_after: f64 = feature.iter().filter(|&&x| x >= threshold).sum();
    let shaped = feature
        .iter()
        .map(|&x| {
            if x < threshold {
                return 0.0;
            }
            match variant {
                AshVariant::S if sum_after != 0.0 => x * (sum_before / sum_after).exp(),
                AshVariant::S | AshVariant::P => x,
                AshVariant::B => sum_before / kept as f64,
            }
        })
        .collect();
    Ok(shaped)
}

pub fn ash_score(
    feature: &[f64],
    variant: AshVariant,
    prune_percent: f64,
    head: &ClassifierHead,
    inner: &LogitScore,
) -> Result<f64> {
    let shaped = ash_shape(feature, variant, prune_percent)?;
    inner.score(&logit::logits_for(&shaped, head)?)
}

/// Per-class weight mask: `keep[k][j]` says whether `W[k][j]` survives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceMask {
    classes: usize,
    dim: usize,
    keep: Vec<bool>,
}

impl DiceMask {
    pub fn from_keep(classes: usize, dim: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != classes * dim {
            return Err(OodError::ShapeMismatch {
                tensor: "dice mask".into(),
                expected: format!("[{classes}, {dim}]"),
                actual: format!("{} entries", keep.len()),
            });
        }
        Ok(DiceMask { classes, dim, keep })
    }

    pub fn all(classes: usize, dim: usize, value: bool) -> Self {
        DiceMask {
            classes,
            dim,
            keep: vec![value; classes * dim],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kept(&self, class: usize, j: usize) -> bool {
        self.keep[class * self.dim + j]
    }

    pub fn row(&self, class: usize) -> &[bool] {
        &self.keep[class * self.dim..(class + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.keep
    }

    /// `W ⊙ M`.
    pub fn masked_weights(&self, head: &ClassifierHead) -> Result<DenseMatrix> {
        self.check(head)?;
        let w = head.weights();
        let mut out = DenseMatrix::zeros(self.classes, self.dim);
        for k in 0..self.classes {
            for j in 0..self.dim {
                if self.kept(k, j) {
                    out.set(k, j, w.get(k, j));
                }
            }
        }
        Ok(out)
    }

    fn check(&self, head: &ClassifierHead) -> Result<()> {
        if head.num_classes() != self.classes || head.feature_dim() != self.dim {
            return Err(OodError::ShapeMismatch {
                tensor: "dice mask".into(),
                expected: format!("[{}, {}]", head.num_classes(), head.feature_dim()),
                actual: format!("[{}, {}]", self.classes, self.dim),
            });
        }
        Ok(())
    }
}

/// Number of weights each class row keeps at the given sparsity.
pub fn dice_keep_count(dim: usize, sparsity: f64) -> usize {
    (((1.0 - sparsity) * dim as f64).round() as usize).min(dim)
}

/// Ranks each weight by its contribution `W[k][j] · mean_train[j]` and keeps
/// the top `(1 - sparsity)` fraction per class row.
pub fn fit_dice_mask(
    train: &FeatureMatrix,
    head: &ClassifierHead,
    sparsity: f64,
) -> Result<DiceMask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(OodError::InvalidConfig(format!(
            "DICE sparsity {sparsity} outside [0, 1)"
        )));
    }
    if train.rows() == 0 {
        return Err(OodError::EmptyInput("DICE needs training features"));
    }
    if train.dim() != head.feature_dim() {
        return Err(OodError::DimensionMismatch(format!(
            "features have {} columns, head expects {}",
            train.dim(),
            head.feature_dim()
        )));
    }
    let n = train.rows() as f64;
    let mean: Vec<f64> = train
        .matrix()
        .tr_matvec(&vec![1.0; train.rows()])?
        .into_iter()
        .map(|s| s / n)
        .collect();
    Ok(dice_mask_from_mean(head, &mean, sparsity))
}

pub(crate) fn dice_mask_from_mean(head: &ClassifierHead, mean: &[f64], sparsity: f64) -> DiceMask {
    let (c, d) = (head.num_classes(), head.feature_dim());
    let keep_count = dice_keep_count(d, sparsity);
    let mut mask = DiceMask::all(c, d, false);
    for k in 0..c {
        let contribution: Vec<f64> = head
            .weights()
            .row(k)
            .iter()
            .zip(mean)
            .map(|(w, m)| w * m)
            .collect();
        for j in linalg::top_k(&contribution, keep_count) {
            mask.keep[k * d + j] = true;
        }
    }
    mask
}

pub fn dice_score(
    feature: &[f64],
    mask: &DiceMask,
    head: &ClassifierHead,
    inner: &LogitScore,
) -> Result<f64> {
    mask.check(head)?;
    let w = head.weights();
    let logits: Vec<f64> = (0..mask.classes)
        .map(|k| {
            let masked: f64 = (0..mask.dim)
                .filter(|&j| mask.kept(k, j))
                .map(|j| w.get(k, j) * feature[j])
                .sum();
            masked + head.bias()[k]
        })
        .collect();
    inner.score(&logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn head_3x4() -> ClassifierHead {
        let w = DenseMatrix::from_rows(&[
            vec![0.5, -1.0, 0.25, 2.0],
            vec![1.5, 0.75, -0.5, 0.1],
            vec![-0.3, 0.9, 1.2, -0.7],
        ])
        .unwrap();
        ClassifierHead::new(w, vec![0.2, -0.1, 0.05]).unwrap()
    }

    #[test]
    fn react_threshold_spot_values() {
        let constant = FeatureMatrix::from_rows(&vec![vec![5.0; 3]; 4]).unwrap();
        assert_eq!(fit_react_threshold(&constant, 37.0).unwrap(), 5.0);

        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| (1..=10).map(|j| (i * 10 + j) as f64).collect())
            .collect();
        let hundred = FeatureMatrix::from_rows(&rows).unwrap();
        assert!((fit_react_threshold(&hundred, 90.0).unwrap() - 90.1).abs() < 1e-12);
        assert_eq!(fit_react_threshold(&hundred, 100.0).unwrap(), 100.0);
    }

    #[test]
    fn react_clamps_before_head() {
        assert_eq!(react_shape(&[10.0, 1.0], 2.0), vec![2.0, 1.0]);
        let head = head_3x4();
        let f = [0.5, 1.0, 0.2, 0.9];
        let inner = LogitScore::default();
        let raw = inner.score(&logit::logits_for(&f, &head).unwrap()).unwrap();
        assert_eq!(react_score(&f, 5.0, &head, &inner).unwrap(), raw);
    }

    #[test]
    fn ash_b_and_s_hand_values() {
        let f = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(
            ash_shape(&f, AshVariant::B, 50.0).unwrap(),
            vec![5.0, 5.0, 0.0, 0.0]
        );
        let s = ash_shape(&f, AshVariant::S, 50.0).unwrap();
        let scale = (10.0f64 / 7.0).exp();
        assert_eq!(s, vec![4.0 * scale, 3.0 * scale, 0.0, 0.0]);
        assert_eq!(
            ash_shape(&f, AshVariant::P, 50.0).unwrap(),
            vec![4.0, 3.0, 0.0, 0.0]
        );
    }

    #[test]
    fn ash_p_without_pruning_is_identity() {
        let head = head_3x4();
        let f = [0.5, 1.0, 0.2, 0.9];
        let inner = LogitScore::MaxLogit;
        let raw = inner.score(&logit::logits_for(&f, &head).unwrap()).unwrap();
        assert_eq!(
            ash_score(&f, AshVariant::P, 0.0, &head, &inner).unwrap(),
            raw
        );
    }

    #[test]
    fn ash_keeps_ties_at_threshold() {
        let shaped = ash_shape(&[2.0, 2.0, 2.0, 1.0], AshVariant::P, 50.0).unwrap();
        assert_eq!(shaped, vec![2.0, 2.0, 2.0, 0.0]);
        assert!(ash_shape(&[1.0], AshVariant::P, 100.0).is_err());
    }

    #[test]
    fn dice_top_half_selection() {
        // contributions in class 0 are [4, 3, 2, 1] with a unit mean feature
        let w =
            DenseMatrix::from_rows(&[vec![4.0, 3.0, 2.0, 1.0], vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let head = ClassifierHead::new(w, vec![0.0, 0.0]).unwrap();
        let train = FeatureMatrix::from_rows(&[vec![1.0; 4], vec![1.0; 4]]).unwrap();
        let mask = fit_dice_mask(&train, &head, 0.5).unwrap();
        assert_eq!(mask.row(0), &[true, true, false, false]);
        assert_eq!(mask.row(1), &[false, false, true, true]);
    }

    #[test]
    fn dice_sparsity_zero_keeps_everything() {
        let head = head_3x4();
        let train = FeatureMatrix::from_rows(&[vec![1.0, 0.5, 2.0, 0.1]]).unwrap();
        let mask = fit_dice_mask(&train, &head, 0.0).unwrap();
        assert!(mask.as_slice().iter().all(|&k| k));
        let f = [0.3, 0.8, 1.1, 0.0];
        let inner = LogitScore::default();
        let raw = inner.score(&logit::logits_for(&f, &head).unwrap()).unwrap();
        assert_eq!(dice_score(&f, &mask, &head, &inner).unwrap(), raw);
    }

    #[test]
    fn dice_all_false_mask_gives_bias() {
        let head = head_3x4();
        let mask = DiceMask::all(3, 4, false);
        let s = dice_score(&[9.0, 9.0, 9.0, 9.0], &mask, &head, &LogitScore::MaxLogit).unwrap();
        assert_eq!(s, 0.2);
        let wrong = DiceMask::all(2, 4, true);
        assert!(matches!(
            dice_score(&[0.0; 4], &wrong, &head, &LogitScore::MaxLogit),
            Err(OodError::ShapeMismatch { .. })
        ));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn dice_matches_sort_oracle_and_masked_matmul() {
        let head = head_3x4();
        let train = FeatureMatrix::from_rows(&[
            vec![0.2, 1.4, 0.7, 0.3],
            vec![1.1, 0.2, 0.9, 0.8],
            vec![0.6, 0.5, 0.1, 1.9],
        ])
        .unwrap();
        let mask = fit_dice_mask(&train, &head, 0.5).unwrap();
        let mean: Vec<f64> = (0..4)
            .map(|j| (0..3).map(|i| train.row(i)[j]).sum::<f64>() / 3.0)
            .collect();
        for k in 0..3 {
            let mut pairs: Vec<(f64, usize)> = (0..4)
                .map(|j| (head.weights().get(k, j) * mean[j], j))
                .collect();
            pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut expected = [false; 4];
            for &(_, j) in &pairs[..2] {
                expected[j] = true;
            }
            assert_eq!(mask.row(k), &expected);
        }
        let f = [0.4, 1.3, 0.2, 0.6];
        let mut logits = vec![0.0; 3];
        for k in 0..3 {
            logits[k] = head.bias()[k];
            for j in 0..4 {
                if mask.kept(k, j) {
                    logits[k] += head.weights().get(k, j) * f[j];
                }
            }
        }
        let got = dice_score(&f, &mask, &head, &LogitScore::MaxLogit).unwrap();
        assert!((got - logit::maxlogit(&logits)).abs() <= 1e-12);
    }

    proptest! {
        #[test]
        fn ash_b_preserves_total(f in prop::collection::vec(0.0f64..10.0, 2..30), p in 0.0f64..99.0) {
            let shaped = ash_shape(&f, AshVariant::B, p).unwrap();
            let total: f64 = f.iter().sum();
            let shaped_total: f64 = shaped.iter().sum();
            prop_assert!((total - shaped_total).abs() <= 1e-9 * total.max(1.0));
        }

        #[test]
        fn ash_p_is_pruned_subvector(f in prop::collection::vec(0.0f64..10.0, 2..30), p in 0.0f64..99.0) {
            let shaped = ash_shape(&f, AshVariant::P, p).unwrap();
            let threshold = linalg::percentile(&f, p).unwrap();
            let expected_nonzero = f.iter().filter(|&&x| x >= threshold && x != 0.0).count();
            prop_assert_eq!(shaped.iter().filter(|&&x| x != 0.0).count(), expected_nonzero);
            for (s, x) in shaped.iter().zip(&f) {
                prop_assert!(s <= x);
            }
        }

        #[test]
        fn react_above_max_is_identity(f in prop::collection::vec(-5.0f64..5.0, 4)) {
            let head = head_3x4();
            let inner = LogitScore::default();
            let raw = inner.score(&logit::logits_for(&f, &head).unwrap()).unwrap();
            prop_assert_eq!(react_score(&f, 5.0, &head, &inner).unwrap(), raw);
        }

        #[test]
        fn dice_row_counts(seed in prop::collection::vec(-1.0f64..1.0, 12), sparsity in 0.0f64..0.99) {
            let head = ClassifierHead::new(DenseMatrix::from_vec(3, 4, seed).unwrap(), vec![0.0; 3]).unwrap();
            let train = FeatureMatrix::from_rows(&[vec![0.5, 1.0, 0.25, 2.0]]).unwrap();
            let mask = fit_dice_mask(&train, &head, sparsity).unwrap();
            let expected = dice_keep_count(4, sparsity);
            for k in 0..3 {
                prop_assert_eq!(mask.row(k).iter().filter(|&&b| b).count(), expected);
            }
        }
    }
}
