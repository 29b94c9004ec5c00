// SPDX-License-Identifier: Apache-2.0

//! Five-row CADRef component ablation on the default synthetic benchmark,
//! under both decoupling rules.
//!
//! cargo run --release --example ablation

use oodscore::cadref::DecoupleMode;
use oodscore::cli::{cmd_ablate, cmd_synth, RunConfig};
use oodscore::registry::Hyperparams;
use oodscore::synth::SynthParams;

fn main() -> oodscore::error::Result<()> {
    let tmp = std::env::temp_dir().join("oodscore-ablation");
    let manifest = cmd_synth(&SynthParams::default(), &tmp.join("data"))?;
    for mode in [
        DecoupleMode::RelativeFeatureSign,
        DecoupleMode::RawFeatureSign,
    ] {
        let rows = cmd_ablate(&RunConfig {
            manifest: manifest.clone(),
            out: tmp.join(format!("out-{mode}")),
            hyper: Hyperparams {
                decouple_mode: mode,
                ..Hyperparams::default()
            },
            ..RunConfig::default()
        })?;
        println!("decouple mode {mode}");
        for r in rows {
            println!(
                "  {:<18} AUROC {:6.2}  FPR95 {:6.2}",
                r.method,
                100.0 * r.auroc,
                100.0 * r.fpr95
            );
        }
    }
    Ok(())
}
