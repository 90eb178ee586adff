//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::fs;
use std::path::Path;

use super::{Image, Mask};
use crate::error::{Error, Result};

const KIND: &str = "netpbm";

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: KIND,
        msg: msg.into(),
    }
}

fn encode(magic: &str, width: usize, height: usize, body: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(body);
    out
}

/// Parses the header and returns (width, height, body).
fn decode<'a>(bytes: &'a [u8], magic: &[u8; 2]) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad(format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and comments before each header number.
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a number in header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| bad("header number out of range"))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    if maxval != 255 {
        return Err(bad(format!("unsupported maxval {maxval}")));
    }
    Ok((width, height, &bytes[pos..]))
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    encode("P6", img.width, img.height, &img.data)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let (w, h, body) = decode(bytes, b"P6")?;
    if body.len() < w * h * 3 {
        return Err(bad(format!("raster truncated: {} of {} bytes", body.len(), w * h * 3)));
    }
    Image::new(w, h, body[..w * h * 3].to_vec())
}

/// Grayscale bytes as a P5 file.
pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    encode("P5", width, height, gray)
}

/// Returns (width, height, gray bytes).
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let (w, h, body) = decode(bytes, b"P5")?;
    if body.len() < w * h {
        return Err(bad(format!("raster truncated: {} of {} bytes", body.len(), w * h)));
    }
    Ok((w, h, body[..w * h].to_vec()))
}

/// Foreground is stored as 255.
pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let gray: Vec<u8> = mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    encode_pgm(mask.width, mask.height, &gray)
}

/// Values of 128 and above load as foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let (w, h, gray) = decode_pgm(bytes)?;
    Mask::new(w, h, gray.into_iter().map(|v| u8::from(v >= 128)).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&read(path.as_ref())?)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    write(path.as_ref(), &encode_ppm(img))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    decode_mask(&read(path.as_ref())?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    write(path.as_ref(), &encode_mask(mask))
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    write(path.as_ref(), &encode_pgm(width, height, gray))
}
