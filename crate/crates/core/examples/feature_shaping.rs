// SPDX-License-Identifier: Apache-2.0

//! ReAct clipping, the three ASH variants and a DICE weight mask on one
//! hand-written feature vector.
//!
//! cargo run --example feature_shaping

use oodscore::interchange::{ClassifierHead, FeatureMatrix};
use oodscore::linalg::DenseMatrix;
use oodscore::logit::LogitScore;
use oodscore::shaping::{self, AshVariant};

fn main() -> oodscore::error::Result<()> {
    let feature = [4.0, 3.0, 2.0, 1.0, 0.5, 0.0];

    let train = FeatureMatrix::from_rows(&[
        vec![1.0, 0.5, 0.2, 0.8, 0.1, 0.0],
        vec![0.9, 0.4, 1.5, 0.7, 0.3, 0.2],
        vec![1.2, 0.6, 0.1, 0.9, 0.0, 0.4],
    ])?;
    let threshold = shaping::fit_react_threshold(&train, 90.0)?;
    println!("ReAct threshold (90th percentile of training activations): {threshold:.3}");
    println!("  clipped: {:?}", shaping::react_shape(&feature, threshold));

    for variant in [AshVariant::P, AshVariant::B, AshVariant::S] {
        let shaped = shaping::ash_shape(&feature, variant, 50.0)?;
        println!("{:<6} prune 50%: {:?}", variant.name(), round(&shaped));
    }

    let head = ClassifierHead::new(
        DenseMatrix::from_rows(&[
            vec![1.0, -0.5, 0.2, 0.3, 0.0, 0.1],
            vec![-0.2, 0.8, 0.4, -0.1, 0.6, 0.0],
        ])?,
        vec![0.0, 0.0],
    )?;
    let mask = shaping::fit_dice_mask(&train, &head, 0.5)?;
    for k in 0..head.num_classes() {
        let kept: Vec<u8> = mask.row(k).iter().map(|&b| b as u8).collect();
        println!("DICE class {k} keeps {kept:?}");
    }
    let energy = LogitScore::Energy { temperature: 1.0 };
    println!(
        "DICE energy score: {:.4}",
        shaping::dice_score(&feature, &mask, &head, &energy)?
    );
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
