// SPDX-License-Identifier: Apache-2.0

//! Generates a synthetic benchmark, scores it with every registered method
//! and prints the AUROC / FPR95 grid.
//!
//! cargo run --release --example evaluate_benchmark [OUT_DIR]

use std::path::PathBuf;

use oodscore::cli::{cmd_eval, cmd_synth, RunConfig};
use oodscore::metrics::reports_to_markdown;
use oodscore::synth::SynthParams;

fn main() -> oodscore::error::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("oodscore-benchmark"));
    let manifest = cmd_synth(&SynthParams::default(), &out.join("data"))?;
    let methods = [
        "msp", "maxlogit", "energy", "gen", "react", "ash_s", "ash_p", "ash_b", "dice", "vim",
        "residual", "caref", "cadref",
    ];
    let reports = cmd_eval(&RunConfig {
        manifest,
        methods: methods.iter().map(|m| m.to_string()).collect(),
        out: out.join("report"),
        ..RunConfig::default()
    })?;
    print!("{}", reports_to_markdown(&reports));
    println!("reports and histograms in {}", out.join("report").display());
    Ok(())
}
