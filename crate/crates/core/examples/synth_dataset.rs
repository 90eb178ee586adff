//! Writes a small synthetic dataset (PPM images, PGM masks, manifest.csv)
//! and prints the per-split class counts.
//!
//! cargo run --example synth_dataset -- /tmp/bss-data

use std::collections::BTreeMap;

use bss_vision::data::{generate_dataset, ClassMix, DatasetConfig};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "bss-data".into());
    let cfg = DatasetConfig {
        n: 60,
        mix: ClassMix::uniform_levels(7),
        negatives: 10,
        seed: 7,
        ..Default::default()
    };
    let manifest = generate_dataset(&cfg, &out)?;
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in &manifest.records {
        let class = r.class.map_or("negative".to_string(), |c| c.name().to_string());
        *counts.entry((r.split.to_string(), class)).or_default() += 1;
    }
    for ((split, class), n) in counts {
        println!("{split:5} {class:12} {n}");
    }
    println!("manifest: {out}/manifest.csv ({} rows)", manifest.records.len());
    Ok(())
}
