// SPDX-License-Identifier: Apache-2.0

//! Class-aware relative error and its decoupled, scaled refinement on a few
//! hand-checked vectors.
//!
//! cargo run --example caref_cadref

use oodscore::cadref::{self, CadrefConfig, DecoupleAggregation, DecoupleMode};
use oodscore::caref;
use oodscore::interchange::{ClassifierHead, FeatureMatrix};
use oodscore::linalg::DenseMatrix;

fn main() -> oodscore::error::Result<()> {
    let head = ClassifierHead::new(
        DenseMatrix::from_rows(&[vec![1.0, 0.5, -0.2], vec![-0.3, 0.2, 1.0]])?,
        vec![0.0, 0.0],
    )?;
    let train = FeatureMatrix::from_rows(&[
        vec![3.0, 1.0, 0.5],
        vec![2.6, 1.4, 0.3],
        vec![0.4, 0.9, 2.8],
        vec![0.2, 1.1, 3.2],
    ])?;
    let config = CadrefConfig::default();
    let profile = cadref::fit_cadref(&train, &head, &config)?;
    for k in 0..profile.num_classes() {
        println!(
            "class {k} mean {:?} ({} samples)",
            profile.class_mean(k)?,
            profile.class_counts[k]
        );
    }
    println!(
        "training mean energy: {:.4}",
        profile.mean_logit_score.unwrap_or(f64::NAN)
    );

    let probes = [
        ("near class 0", vec![2.9, 1.2, 0.4]),
        ("over-activated", vec![6.0, 1.2, 0.4]),
        ("under-activated", vec![1.0, 1.2, 0.4]),
    ];
    for (label, f) in &probes {
        let caref_s = caref::caref_score(f, &profile, &head)?;
        let cadref_s = cadref::cadref_score(f, &profile, &head, &config)?;
        println!("{label:<16} CARef {caref_s:>8.4}  CADRef {cadref_s:>8.4}");
        for mode in [
            DecoupleMode::RelativeFeatureSign,
            DecoupleMode::RawFeatureSign,
        ] {
            for agg in [DecoupleAggregation::AbsSum, DecoupleAggregation::SumAbs] {
                let e = cadref::decouple_errors(f, &profile, &head, mode, agg)?;
                println!("    {mode}/{agg}: E_p {:.4} E_n {:.4}", e.pos, e.neg);
            }
        }
    }
    Ok(())
}
