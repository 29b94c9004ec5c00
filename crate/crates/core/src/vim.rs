// SPDX-License-Identifier: Apache-2.0

//! Virtual-logit matching: the norm of a feature's component outside the
//! principal subspace of the training features, fused with a logit score.

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::interchange::{ClassifierHead, FeatureMatrix};
use crate::linalg::{self, DenseMatrix};
use crate::logit::{self, LogitScore};

/// Origin used before projecting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VimCenter {
    /// Uncentered second moments.
    #[default]
    None,
    /// Training feature mean.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VimModel {
    /// `d x D`, orthonormal columns.
    pub basis: DenseMatrix,
    pub alpha: f64,
    pub center: VimCenter,
    /// Subtracted from every feature before projecting; zeros for
    /// [`VimCenter::None`].
    pub offset: Vec<f64>,
    /// Eigenvalue `D` and `D+1` coincide, so the basis is not unique.
    pub degenerate_spectrum: bool,
    /// The residual-to-logit scale could not be calibrated and fell back to 1.
    pub alpha_fallback: bool,
}

impl VimModel {
    pub fn subspace_dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.basis.rows()
    }

    /// `‖x - P Pᵀ x‖₂` with `x = feature - offset`.
    pub fn residual(&self, feature: &[f64]) -> Result<f64> {
        if feature.len() != self.feature_dim() {
            return Err(OodError::ShapeMismatch {
                tensor: "feature".into(),
                expected: format!("[{}]", self.feature_dim()),
                actual: format!("[{}]", feature.len()),
            });
        }
        let x: Vec<f64> = feature
            .iter()
            .zip(&self.offset)
            .map(|(f, o)| f - o)
            .collect();
        let coeffs = self.basis.tr_matvec(&x)?;
        let projected = self.basis.matvec(&coeffs)?;
        Ok(x.iter()
            .zip(&projected)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Principal-space size for a feature width: the values used for the common
/// ImageNet backbones, `d / 2` otherwise.
pub fn default_subspace_dim(feature_dim: usize) -> usize {
    match feature_dim {
        // ResNet-50
        2048 => 1000,
        // DenseNet-201, RegNetX-8GF, ViT-B/16, Swin-B, ConvNeXt-B
        1920 | 768 | 1024 => 512,
        // MaxViT-T
        512 => 256,
        d => (d / 2).max(1),
    }
}

/// Fits the principal basis (top-`dim` eigenvectors of the training second
/// moment matrix) and calibrates `alpha` so the mean training max-logit and
/// the mean scaled residual match.
pub fn fit_vim(
    train: &FeatureMatrix,
    head: &ClassifierHead,
    dim: usize,
    center: VimCenter,
) -> Result<VimModel> {
    let (n, d) = (train.rows(), train.dim());
    if n == 0 {
        return Err(OodError::EmptyInput("ViM needs training features"));
    }
    if dim == 0 || dim > d {
        return Err(OodError::DOutOfRange { dim, features: d });
    }
    if n < d {
        log::warn!("ViM fit on {n} samples for {d} features; second moments are rank-deficient");
    }
    let offset = match center {
        VimCenter::None => vec![0.0; d],
        VimCenter::Mean => train
            .matrix()
            .tr_matvec(&vec![1.0; n])?
            .into_iter()
            .map(|s| s / n as f64)
            .collect(),
    };
    let mut centered = Vec::with_capacity(n * d);
    for row in train.matrix().row_iter() {
        centered.extend(row.iter().zip(&offset).map(|(x, o)| x - o));
    }
    let x = DenseMatrix::from_vec(n, d, centered)?;
    let gram = linalg::matmul(&x.transpose(), &x)?;
    let moment =
        DenseMatrix::from_vec(d, d, gram.as_slice().iter().map(|v| v / n as f64).collect())?;
    let eig = linalg::sym_eig(&moment)?;
    let degenerate_spectrum = dim < d && {
        let gap = eig.eigenvalues[dim - 1] - eig.eigenvalues[dim];
        gap.abs() <= 1e-12 * eig.eigenvalues[0].abs().max(1.0)
    };
    if degenerate_spectrum {
        log::warn!(
            "ViM eigenvalues {} and {} coincide; principal basis is ambiguous",
            dim,
            dim + 1
        );
    }
    let mut model = VimModel {
        basis: eig.eigenvectors.leading_columns(dim),
        alpha: 1.0,
        center,
        offset,
        degenerate_spectrum,
        alpha_fallback: false,
    };

    let logits = logit::compute_logits(train, head)?;
    let logit_total: f64 = logits.row_iter().map(logit::maxlogit).sum();
    let residual_total: f64 = train
        .matrix()
        .row_iter()
        .map(|row| model.residual(row))
        .sum::<Result<f64>>()?;
    let alpha = logit_total / residual_total;
    if residual_total > 1e-12 * n as f64 && alpha.is_finite() && alpha > 0.0 {
        model.alpha = alpha;
    } else {
        log::warn!(
            "ViM alpha undefined (max-logit sum {logit_total}, residual sum {residual_total}); using 1"
        );
        model.alpha_fallback = true;
    }
    Ok(model)
}

/// `-alpha · residual + inner(W · feature + B)`.
pub fn vim_score(
    feature: &[f64],
    model: &VimModel,
    head: &ClassifierHead,
    inner: &LogitScore,
) -> Result<f64> {
    let residual = model.residual(feature)?;
    Ok(-model.alpha * residual + inner.score(&logit::logits_for(feature, head)?)?)
}

/// Residual-only variant: `-residual`.
pub fn residual_score(feature: &[f64], model: &VimModel) -> Result<f64> {
    Ok(-model.residual(feature)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(c: usize, d: usize) -> ClassifierHead {
        let data = (0..c * d)
            .map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0)
            .collect();
        ClassifierHead::new(DenseMatrix::from_vec(c, d, data).unwrap(), vec![0.0; c]).unwrap()
    }

    #[test]
    fn plane_data_has_zero_residual() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let (a, b) = (i as f64 * 0.3 + 1.0, (i % 5) as f64 - 2.0);
                vec![a, b, a + b, 2.0 * a - b]
            })
            .collect();
        let train = FeatureMatrix::from_rows(&rows).unwrap();
        let model = fit_vim(&train, &head(3, 4), 2, VimCenter::None).unwrap();
        for row in &rows {
            assert!(model.residual(row).unwrap() <= 1e-8);
        }
        assert!(model.alpha_fallback);
    }

    #[test]
    fn axis_aligned_basis() {
        let rows: Vec<Vec<f64>> = (1..6).map(|i| vec![i as f64, 0.0]).collect();
        let train = FeatureMatrix::from_rows(&rows).unwrap();
        let model = fit_vim(&train, &head(2, 2), 1, VimCenter::None).unwrap();
        assert!((model.basis.get(0, 0).abs() - 1.0).abs() < 1e-12);
        assert!(model.basis.get(1, 0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_dimension() {
        let train = FeatureMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(
            fit_vim(&train, &head(2, 2), 3, VimCenter::None),
            Err(OodError::DOutOfRange {
                dim: 3,
                features: 2
            })
        ));
        assert!(matches!(
            fit_vim(&train, &head(2, 2), 0, VimCenter::None),
            Err(OodError::DOutOfRange { .. })
        ));
    }

    #[test]
    fn in_span_score_equals_inner_and_orthogonal_is_pure_residual() {
        let rows: Vec<Vec<f64>> = (1..8)
            .map(|i| vec![i as f64, 0.5 * i as f64, 0.0])
            .collect();
        let train = FeatureMatrix::from_rows(&rows).unwrap();
        let h = head(2, 3);
        let model = fit_vim(&train, &h, 1, VimCenter::None).unwrap();
        let inside = [2.0, 1.0, 0.0];
        let inner = LogitScore::default();
        let expected = inner
            .score(&logit::logits_for(&inside, &h).unwrap())
            .unwrap();
        assert!((vim_score(&inside, &model, &h, &inner).unwrap() - expected).abs() < 1e-12);

        let zero_head = ClassifierHead::new(DenseMatrix::zeros(2, 3), vec![0.0, 0.0]).unwrap();
        let outside = [0.0, 0.0, 3.0];
        let s = vim_score(&outside, &model, &zero_head, &LogitScore::MaxLogit).unwrap();
        assert!((s + model.alpha * 3.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_fit_flags_degenerate_spectrum() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let (a, b) = (i as f64 + 1.0, (i % 3) as f64);
                vec![a, b, a - b, 0.0, 0.0]
            })
            .collect();
        let train = FeatureMatrix::from_rows(&rows).unwrap();
        let model = fit_vim(&train, &head(2, 5), 3, VimCenter::None).unwrap();
        assert!(model.degenerate_spectrum);
    }

    #[test]
    fn mean_centering_uses_training_mean() {
        let rows = vec![vec![1.0, 3.0], vec![3.0, 5.0]];
        let train = FeatureMatrix::from_rows(&rows).unwrap();
        let model = fit_vim(&train, &head(2, 2), 1, VimCenter::Mean).unwrap();
        assert_eq!(model.offset, vec![2.0, 4.0]);
        assert!(model.residual(&[2.0, 4.0]).unwrap() < 1e-12);
    }

    #[test]
    fn default_dims() {
        assert_eq!(default_subspace_dim(2048), 1000);
        assert_eq!(default_subspace_dim(768), 512);
        assert_eq!(default_subspace_dim(512), 256);
        assert_eq!(default_subspace_dim(64), 32);
        assert_eq!(default_subspace_dim(1), 1);
    }
}
