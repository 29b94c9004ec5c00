// SPDX-License-Identifier: Apache-2.0

//! The four logit scores on a confident, an ambiguous and a flat logit vector.
//!
//! cargo run --example logit_scores

use oodscore::logit::{self, LogitScore};

fn main() -> oodscore::error::Result<()> {
    let cases = [
        ("confident", vec![9.0, 1.0, 0.5, 0.0]),
        ("ambiguous", vec![3.0, 2.8, 0.5, 0.0]),
        ("flat", vec![0.0, 0.0, 0.0, 0.0]),
    ];
    let scores = [
        LogitScore::Msp,
        LogitScore::MaxLogit,
        LogitScore::Energy { temperature: 1.0 },
        LogitScore::gen_default(),
    ];

    print!("{:<10}", "logits");
    for s in &scores {
        print!("{:>12}", s.name());
    }
    println!();
    for (label, logits) in &cases {
        print!("{label:<10}");
        for s in &scores {
            print!("{:>12.5}", s.score(logits)?);
        }
        println!("   predicted class {}", logit::predict(logits));
    }

    // higher temperature flattens the energy toward max-logit + T ln c
    for t in [0.5, 1.0, 4.0] {
        println!(
            "energy(T={t}) of ambiguous = {:.5}",
            logit::energy(&cases[1].1, t)
        );
    }
    Ok(())
}
