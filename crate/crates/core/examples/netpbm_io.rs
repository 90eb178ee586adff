//! Writes a generated specimen as PPM plus PGM mask, reads both back and
//! checks the round trip.
//!
//! cargo run --example netpbm_io

use bss_vision::data::dataset::generate_indexed;
use bss_vision::data::netpbm::{read_mask, read_ppm, write_mask, write_ppm};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let (img, mask) = generate_indexed(1, 5, (48, 64))?;
    let (ip, mp) = (dir.path().join("s.ppm"), dir.path().join("s.pgm"));
    write_ppm(&ip, &img)?;
    write_mask(&mp, &mask)?;
    let back = read_ppm(&ip)?;
    let mback = read_mask(&mp)?;
    println!(
        "{}x{} image, {} bytes on disk, identical after reading: {}",
        back.width,
        back.height,
        std::fs::metadata(&ip)?.len(),
        back == img
    );
    println!("mask coverage {:.3}, identical after reading: {}", mback.coverage(), mback == mask);
    Ok(())
}
