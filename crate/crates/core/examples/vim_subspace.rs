// SPDX-License-Identifier: Apache-2.0

//! Fits a ViM principal subspace on synthetic features and shows how the
//! residual grows for samples that leave it.
//!
//! cargo run --example vim_subspace

use oodscore::linalg;
use oodscore::logit::LogitScore;
use oodscore::synth::{generate, SynthParams};
use oodscore::vim::{self, VimCenter};

fn main() -> oodscore::error::Result<()> {
    let data = generate(&SynthParams {
        classes: 5,
        dim: 32,
        ..SynthParams::default()
    })?;
    let train = &data.split("train")?.features;
    let dim = vim::default_subspace_dim(train.dim());
    for center in [VimCenter::None, VimCenter::Mean] {
        let model = vim::fit_vim(train, &data.head, dim, center)?;
        println!(
            "{center:?}: D={} alpha={:.4} orthonormality error={:.1e}",
            model.subspace_dim(),
            model.alpha,
            linalg::orthonormality_error(&model.basis)
        );
        for split in ["test", "ood"] {
            let feats = &data.split(split)?.features;
            let mean_residual: f64 = (0..feats.rows())
                .map(|i| model.residual(feats.row(i)))
                .sum::<oodscore::error::Result<f64>>()?
                / feats.rows() as f64;
            let first = vim::vim_score(feats.row(0), &model, &data.head, &LogitScore::default())?;
            println!(
                "  {split:<5} mean residual {mean_residual:.4}, first-row ViM score {first:.4}"
            );
        }
    }
    Ok(())
}
