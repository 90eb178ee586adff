//! Paired geometric and erasing augmentation for images and masks.
//!
//! One affine map (rotation, shear and zoom about the image center) is
//! sampled per call and applied to both image and mask by inverse mapping:
//! bilinear with edge clamping for the image, nearest neighbor with zero
//! outside the frame for the mask. Exact quarter turns and flips are pixel
//! permutations, so they invert bit-exactly.

use rand::Rng;

use super::{Image, Mask};
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EraseSpec {
    pub count: usize,
    /// Rectangle side as a fraction of the image side, sampled per axis.
    pub size: (f64, f64),
}

/// Ranges to sample from; `None` disables a transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationSpec {
    pub hflip_prob: f64,
    /// Counter-clockwise degrees.
    pub rotation_degrees: Option<(f64, f64)>,
    /// Horizontal shear angle in degrees.
    pub shear_degrees: Option<(f64, f64)>,
    pub erase: Option<EraseSpec>,
    /// Scale factor; above 1 zooms in.
    pub crop_zoom: Option<(f64, f64)>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            hflip_prob: 0.5,
            rotation_degrees: Some((-20.0, 20.0)),
            shear_degrees: Some((-10.0, 10.0)),
            erase: Some(EraseSpec {
                count: 1,
                size: (0.05, 0.2),
            }),
            crop_zoom: Some((0.9, 1.1)),
        }
    }
}

impl AugmentationSpec {
    pub fn none() -> Self {
        AugmentationSpec {
            hflip_prob: 0.0,
            rotation_degrees: None,
            shear_degrees: None,
            erase: None,
            crop_zoom: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("augmentation: {m}")));
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return bad("hflip_prob must lie in [0, 1]");
        }
        let ordered = |r: Option<(f64, f64)>| r.is_none_or(|(a, b)| a.is_finite() && b.is_finite() && a <= b);
        if !ordered(self.rotation_degrees) || !ordered(self.shear_degrees) || !ordered(self.crop_zoom) {
            return bad("ranges need finite lo <= hi");
        }
        if let Some((lo, _)) = self.crop_zoom {
            if lo <= 0.0 {
                return bad("zoom must be positive");
            }
        }
        if let Some((lo, hi)) = self.shear_degrees {
            if lo.abs() >= 80.0 || hi.abs() >= 80.0 {
                return bad("shear must stay within +-80 degrees");
            }
        }
        if let Some(e) = self.erase {
            if !(0.0 < e.size.0 && e.size.0 <= e.size.1 && e.size.1 <= 1.0) {
                return bad("erase size must satisfy 0 < lo <= hi <= 1");
            }
        }
        Ok(())
    }
}

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// One concrete draw from an [`AugmentationSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub rotation: f64,
    pub shear: f64,
    pub zoom: f64,
    pub erase: Vec<Rect>,
}

fn draw<R: Rng + ?Sized>(rng: &mut R, range: Option<(f64, f64)>, off: f64) -> f64 {
    match range {
        Some((lo, hi)) if lo < hi => rng.random_range(lo..=hi),
        Some((lo, _)) => lo,
        None => off,
    }
}

impl AugmentParams {
    /// Samples every transform in a fixed order so the draw depends only on
    /// the seed and spec.
    pub fn sample(spec: &AugmentationSpec, width: usize, height: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let hflip = rng.random_bool(spec.hflip_prob.clamp(0.0, 1.0));
        let rotation = draw(&mut rng, spec.rotation_degrees, 0.0);
        let shear = draw(&mut rng, spec.shear_degrees, 0.0);
        let zoom = draw(&mut rng, spec.crop_zoom, 1.0);
        let mut erase = Vec::new();
        if let Some(e) = spec.erase {
            for _ in 0..e.count {
                let rw = ((draw(&mut rng, Some(e.size), 0.0) * width as f64).round() as usize).clamp(1, width);
                let rh = ((draw(&mut rng, Some(e.size), 0.0) * height as f64).round() as usize).clamp(1, height);
                let x0 = rng.random_range(0..=width - rw);
                let y0 = rng.random_range(0..=height - rh);
                erase.push(Rect {
                    x0,
                    y0,
                    x1: x0 + rw,
                    y1: y0 + rh,
                });
            }
        }
        AugmentParams {
            hflip,
            rotation,
            shear,
            zoom,
            erase,
        }
    }

    fn is_identity_geometry(&self) -> bool {
        self.rotation == 0.0 && self.shear == 0.0 && self.zoom == 1.0
    }
}

/// Applies a sampled transform to an image and optional mask.
pub fn augment(image: &Image, mask: Option<&Mask>, spec: &AugmentationSpec, seed: u64) -> Result<(Image, Option<Mask>)> {
    spec.validate()?;
    let params = AugmentParams::sample(spec, image.width, image.height, seed);
    apply(image, mask, &params)
}

pub fn apply(image: &Image, mask: Option<&Mask>, params: &AugmentParams) -> Result<(Image, Option<Mask>)> {
    if let Some(m) = mask {
        if (m.width, m.height) != (image.width, image.height) {
            return Err(Error::contract(
                "augment",
                format!("mask {}x{} vs image {}x{}", m.width, m.height, image.width, image.height),
            ));
        }
    }
    let (mut img, mut msk) = if params.hflip {
        (image.hflip(), mask.map(Mask::hflip))
    } else {
        (image.clone(), mask.cloned())
    };

    if !params.is_identity_geometry() {
        let quarter = params.rotation / 90.0;
        let exact_turn = params.shear == 0.0
            && params.zoom == 1.0
            && quarter == quarter.round()
            && (img.width == img.height || quarter.round() as i64 % 2 == 0);
        if exact_turn {
            for _ in 0..(quarter.round() as i64).rem_euclid(4) {
                img = img.rot90();
                msk = msk.map(|m| m.rot90());
            }
        } else {
            let map = InverseMap::new(params, img.width, img.height);
            img = warp_image(&img, &map);
            msk = msk.map(|m| warp_mask(&m, &map));
        }
    }

    if !params.erase.is_empty() {
        let fill = img.border_mean();
        for r in &params.erase {
            for y in r.y0..r.y1.min(img.height) {
                for x in r.x0..r.x1.min(img.width) {
                    img.set_pixel(x, y, fill);
                    if let Some(m) = msk.as_mut() {
                        m.set(x, y, 0);
                    }
                }
            }
        }
    }
    Ok((img, msk))
}

/// Output pixel center to source coordinates.
struct InverseMap {
    m: [[f64; 2]; 2],
    cx: f64,
    cy: f64,
}

impl InverseMap {
    fn new(p: &AugmentParams, w: usize, h: usize) -> Self {
        let (s, c) = p.rotation.to_radians().sin_cos();
        let t = p.shear.to_radians().tan();
        // Forward: zoom * R * Sh with R = [[c, s], [-s, c]] (counter-clockwise
        // on screen, y pointing down) and Sh = [[1, t], [0, 1]].
        let f = [[p.zoom * c, p.zoom * (c * t + s)], [-p.zoom * s, p.zoom * (-s * t + c)]];
        let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
        let m = [[f[1][1] / det, -f[0][1] / det], [-f[1][0] / det, f[0][0] / det]];
        InverseMap {
            m,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
        }
    }

    fn source(&self, x: usize, y: usize) -> (f64, f64) {
        let (dx, dy) = (x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy);
        (
            self.cx + self.m[0][0] * dx + self.m[0][1] * dy,
            self.cy + self.m[1][0] * dx + self.m[1][1] * dy,
        )
    }
}

fn warp_image(img: &Image, map: &InverseMap) -> Image {
    let (w, h) = (img.width, img.height);
    let mut out = Image::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map.source(x, y);
            // Pixel centers sit at +0.5; clamping replicates the edge.
            let fx = (sx - 0.5).clamp(0.0, (w - 1) as f64);
            let fy = (sy - 0.5).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            let (p00, p10, p01, p11) = (img.pixel(x0, y0), img.pixel(x1, y0), img.pixel(x0, y1), img.pixel(x1, y1));
            let rgb = [0, 1, 2].map(|c| {
                let top = p00[c] as f64 * (1.0 - ax) + p10[c] as f64 * ax;
                let bottom = p01[c] as f64 * (1.0 - ax) + p11[c] as f64 * ax;
                (top * (1.0 - ay) + bottom * ay).round().clamp(0.0, 255.0) as u8
            });
            out.set_pixel(x, y, rgb);
        }
    }
    out
}

/// Bilinear weight of the foreground at the source point, kept where it
/// reaches one half. Samples outside the frame count as background.
fn warp_mask(mask: &Mask, map: &InverseMap) -> Mask {
    let (w, h) = (mask.width, mask.height);
    let at = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            mask.get(x as usize, y as usize) as f64
        }
    };
    let mut out = Mask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map.source(x, y);
            let (fx, fy) = (sx - 0.5, sy - 0.5);
            let (x0, y0) = (fx.floor(), fy.floor());
            let (ax, ay) = (fx - x0, fy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let top = at(x0, y0) * (1.0 - ax) + at(x0 + 1, y0) * ax;
            let bottom = at(x0, y0 + 1) * (1.0 - ax) + at(x0 + 1, y0 + 1) * ax;
            if top * (1.0 - ay) + bottom * ay >= 0.5 {
                out.set(x, y, 1);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> Image {
        let data = (0..w * h).flat_map(|i| [(i % 251) as u8, (i * 7 % 253) as u8, (i / w * 3) as u8]).collect();
        Image::new(w, h, data).unwrap()
    }

    #[test]
    fn identity_spec_copies() {
        let img = gradient_image(9, 7);
        let mask = Mask::new(9, 7, (0..63).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        let (a, m) = augment(&img, Some(&mask), &AugmentationSpec::none(), 4).unwrap();
        assert_eq!(a, img);
        assert_eq!(m.unwrap(), mask);
    }

    #[test]
    fn sampled_values_stay_in_range() {
        let spec = AugmentationSpec::default();
        for seed in 0..200 {
            let p = AugmentParams::sample(&spec, 64, 48, seed);
            assert!((-20.0..=20.0).contains(&p.rotation));
            assert!((-10.0..=10.0).contains(&p.shear));
            assert!((0.9..=1.1).contains(&p.zoom));
            for r in &p.erase {
                assert!(r.x1 <= 64 && r.y1 <= 48 && r.x0 < r.x1 && r.y0 < r.y1);
                let (rw, rh) = ((r.x1 - r.x0) as f64, (r.y1 - r.y0) as f64);
                assert!(rw >= (0.05 * 64.0f64).round() && rw <= (0.2 * 64.0f64).round());
                assert!(rh >= (0.05 * 48.0f64).round() && rh <= (0.2 * 48.0f64).round());
            }
        }
    }

    #[test]
    fn erase_zeroes_mask_and_fills_image() {
        let img = gradient_image(8, 8);
        let mask = Mask::new(8, 8, vec![1; 64]).unwrap();
        let params = AugmentParams {
            hflip: false,
            rotation: 0.0,
            shear: 0.0,
            zoom: 1.0,
            erase: vec![Rect { x0: 2, y0: 3, x1: 5, y1: 4 }],
        };
        let fill = img.border_mean();
        let (a, m) = apply(&img, Some(&mask), &params).unwrap();
        let m = m.unwrap();
        assert_eq!(m.count(), 61);
        assert_eq!(m.get(2, 3), 0);
        assert_eq!(a.pixel(4, 3), fill);
        assert_eq!(a.pixel(5, 3), img.pixel(5, 3));
    }

    #[test]
    fn zoom_in_keeps_center_pixel_and_clamps_edges() {
        let img = gradient_image(5, 5);
        let params = AugmentParams {
            hflip: false,
            rotation: 0.0,
            shear: 0.0,
            zoom: 0.5,
            erase: vec![],
        };
        let (a, _) = apply(&img, None, &params).unwrap();
        assert_eq!(a.pixel(2, 2), img.pixel(2, 2));
        // Zooming out samples beyond the frame, which repeats the corner.
        assert_eq!(a.pixel(0, 0), img.pixel(0, 0));
    }

    #[test]
    fn mask_size_mismatch_rejected() {
        let img = gradient_image(4, 4);
        let mask = Mask::zeros(3, 4);
        assert!(augment(&img, Some(&mask), &AugmentationSpec::default(), 0).is_err());
    }
}
