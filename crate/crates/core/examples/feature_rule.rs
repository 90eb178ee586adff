//! Classifies generated masks by shape alone (component count and
//! compactness) and compares with the generator's labels.
//!
//! cargo run --example feature_rule

use bss_vision::data::morphology::{components, feature_rule, mask_compactness};
use bss_vision::data::{generate_samples, ClassMix, DatasetConfig};

fn main() -> anyhow::Result<()> {
    let samples = generate_samples(&DatasetConfig {
        n: 70,
        mix: ClassMix::uniform_levels(7),
        ..Default::default()
    })?;
    let mut hits = 0;
    for s in &samples {
        let m = s.mask.as_ref().unwrap();
        let guess = feature_rule(m);
        hits += (guess == s.class) as usize;
        if s.bss.is_some_and(|b| b % 3 == 1) {
            println!(
                "level {} components {} compactness {:.3} -> {:?} (true {:?})",
                s.bss.unwrap(),
                components(m).len(),
                mask_compactness(m),
                guess,
                s.class
            );
        }
    }
    println!("rule agrees with the label on {hits}/{}", samples.len());
    Ok(())
}
