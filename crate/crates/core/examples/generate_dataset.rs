//! Renders the synthetic multi-view dataset.
//!
//! cargo run --release --example generate_dataset -- [out_dir] [resolution]

use std::path::PathBuf;

use uva::synth_data::{generate_dataset, split_counts, SceneSpec};

fn main() -> uva::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "uva-out/dataset".into()));
    let resolution = args.next().map_or(128, |r| r.parse().expect("resolution"));
    let spec = SceneSpec {
        resolution,
        ..SceneSpec::default()
    };
    let manifest = generate_dataset(&spec, &out)?;
    for (split, n) in split_counts(&manifest) {
        println!("{split}: {n} frames");
    }
    println!("wrote {}", out.display());
    Ok(())
}
