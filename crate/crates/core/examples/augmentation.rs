//! Applies the default augmentation suite to one specimen a few times and
//! writes each image/mask pair next to the original.
//!
//! cargo run --example augmentation -- /tmp/bss-aug

use bss_vision::data::netpbm::{write_mask, write_ppm};
use bss_vision::data::{augment, AugmentParams, AugmentationSpec};
use bss_vision::data::dataset::generate_indexed;

fn main() -> anyhow::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "bss-aug".into()));
    std::fs::create_dir_all(&out)?;
    let (img, mask) = generate_indexed(4, 21, (64, 64))?;
    write_ppm(out.join("original.ppm"), &img)?;
    write_mask(out.join("original_mask.pgm"), &mask)?;

    let spec = AugmentationSpec::default();
    for seed in 0..4 {
        let p = AugmentParams::sample(&spec, img.width, img.height, seed);
        let (a, m) = augment(&img, Some(&mask), &spec, seed)?;
        let m = m.unwrap();
        println!(
            "seed {seed}: flip {} rotate {:+.1} shear {:+.1} zoom {:.2} erased {} -> coverage {:.3} (was {:.3})",
            p.hflip,
            p.rotation,
            p.shear,
            p.zoom,
            p.erase.len(),
            m.coverage(),
            mask.coverage()
        );
        write_ppm(out.join(format!("aug{seed}.ppm")), &a)?;
        write_mask(out.join(format!("aug{seed}_mask.pgm")), &m)?;
    }
    Ok(())
}
