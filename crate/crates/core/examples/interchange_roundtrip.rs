// SPDX-License-Identifier: Apache-2.0

//! Writes a dataset as manifest plus tensor files, reads it back and prints
//! the header of one tensor.
//!
//! cargo run --example interchange_roundtrip

use std::fs;

use oodscore::interchange::{load_dataset, read_tensor, write_dataset, TENSOR_MAGIC};
use oodscore::synth::{generate, SynthParams};

fn main() -> oodscore::error::Result<()> {
    let dir = std::env::temp_dir().join("oodscore-interchange");
    let data = generate(&SynthParams {
        classes: 3,
        dim: 4,
        train_per_class: 2,
        n_id: 3,
        n_ood: 3,
        ..SynthParams::default()
    })?;
    let manifest = write_dataset(&dir, &data)?;
    println!(
        "{}",
        fs::read_to_string(&manifest).expect("manifest was just written")
    );

    let weights = read_tensor(dir.join("head_weights.bin"))?;
    let bytes = fs::read(dir.join("head_weights.bin")).expect("tensor was just written");
    println!(
        "head_weights.bin: magic {:?}, dtype {:?}, shape {:?}, {} bytes",
        std::str::from_utf8(&bytes[..TENSOR_MAGIC.len()]).unwrap_or("?"),
        weights.dtype(),
        weights.shape,
        bytes.len()
    );

    let back = load_dataset(&manifest)?;
    println!("round trip identical: {}", back == data);
    Ok(())
}
