//! Procedural specimen scenes with exact masks.
//!
//! A specimen is a union of noisy discs grouped into fragments. Each form
//! level has its own recipe (fragment count, disc layout along a path,
//! outline harmonics), and a global scale is searched so the mask hits the
//! requested coverage. Paper-strip occluders are then laid over it and
//! removed from the mask; glare spots only change the image.
//!
//! | level | mask | components | compactness `P²/4πA` at 64x64 |
//! |---|---|---|---|
//! | 1 | round lumps | 4-7 | about 1.0 |
//! | 2 | lumpy sausage | 1 | 1.6 to 2.7 |
//! | 3, 4 | smooth sausage or snake | 1 | 1.1 to 1.55 |
//! | 5 | soft blobs | 2-3 | 1.0 to 1.3 |
//! | 6 | ragged fluffy pieces | 4-6 | 1.2 to 2.0 |
//! | 7 | frayed splash | 1 | above 2.5, the highest of all |
//!
//! [`feature_rule`](super::morphology::feature_rule) turns these gaps into
//! fixed thresholds on component count and compactness.

use std::f64::consts::PI;

use rand::Rng;

use super::morphology::{components, largest_component, mask_compactness};
use super::{Image, Mask};
use crate::error::{Error, Result};
use crate::rng::{seeded, Prng};

/// Shape parameters of one specimen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecimenSpec {
    pub bss_level: u8,
    /// Target foreground fraction of the image.
    pub coverage_ratio: f64,
    pub fragment_count: usize,
    /// Length over width of each elongated piece.
    pub elongation: f64,
    pub boundary_roughness: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    /// A porcelain bowl with a water pool on gray tiles.
    CeramicEllipse,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    /// (height, width)
    pub image_size: (usize, usize),
    pub background_style: Background,
    /// Peak relative brightness change of a linear lighting ramp.
    pub lighting_gradient: f64,
    pub occluder_count: usize,
    pub reflection_count: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            image_size: (64, 64),
            background_style: Background::CeramicEllipse,
            lighting_gradient: 0.15,
            occluder_count: 0,
            reflection_count: 0,
        }
    }
}

impl SceneParams {
    /// Draws a scene: mostly bowls, some flat backdrops; a paper strip in
    /// about a fifth of scenes and glare in under a third.
    pub fn sample<R: Rng + ?Sized>(image_size: (usize, usize), rng: &mut R) -> Self {
        SceneParams {
            image_size,
            background_style: if rng.random_bool(0.8) {
                Background::CeramicEllipse
            } else {
                Background::Flat
            },
            lighting_gradient: rng.random_range(0.0..0.3),
            occluder_count: usize::from(rng.random_bool(0.22)),
            reflection_count: if rng.random_bool(0.29) { rng.random_range(1..=2) } else { 0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h < 16 || w < 16 {
            return Err(Error::Config(format!("image size {h}x{w} is below 16x16")));
        }
        if !(0.0..=1.0).contains(&self.lighting_gradient) {
            return Err(Error::Config("lighting_gradient must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

impl SpecimenSpec {
    /// Typical parameters for a form level, drawn from `seed`.
    pub fn for_level(level: u8, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let r = &mut rng;
        let (fragments, elongation, roughness) = match level {
            1 => (r.random_range(4..=7), r.random_range(1.0..1.15), r.random_range(0.0..0.2)),
            2 => (1, r.random_range(2.6..3.6), r.random_range(0.5..0.9)),
            3 => (1, r.random_range(1.8..2.6), r.random_range(0.1..0.3)),
            4 => (1, r.random_range(1.8..2.6), r.random_range(0.0..0.15)),
            5 => (r.random_range(2..=3), r.random_range(1.1..1.8), r.random_range(0.05..0.25)),
            6 => (r.random_range(4..=6), r.random_range(1.4..2.2), r.random_range(0.7..1.0)),
            7 => (1, r.random_range(1.0..1.6), r.random_range(0.85..1.0)),
            _ => return Err(Error::Config(format!("form level {level} outside 1..=7"))),
        };
        let spec = SpecimenSpec {
            bss_level: level,
            coverage_ratio: r.random_range(0.10..0.20),
            fragment_count: fragments,
            elongation,
            boundary_roughness: roughness,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Range checks plus the per-level morphology contract.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Generation(msg));
        if !(1..=7).contains(&self.bss_level) {
            return fail(format!("form level {} outside 1..=7", self.bss_level));
        }
        if !(self.coverage_ratio > 0.0 && self.coverage_ratio <= 0.6) {
            return fail(format!("coverage {} outside (0, 0.6]", self.coverage_ratio));
        }
        if self.fragment_count == 0 || !(self.elongation >= 1.0) || !(0.0..=1.0).contains(&self.boundary_roughness) {
            return fail("fragment_count >= 1, elongation >= 1 and roughness in [0, 1] required".into());
        }
        let (k, e, rough) = (self.fragment_count, self.elongation, self.boundary_roughness);
        let ok = match self.bss_level {
            1 | 6 => k >= 4,
            2 => k == 1 && e >= 2.0 && rough >= 0.5,
            3 | 4 => k == 1 && rough <= 0.3,
            5 => (2..=3).contains(&k),
            _ => k == 1,
        };
        if !ok {
            return fail(format!(
                "level {} cannot have {k} fragments, elongation {e:.2}, roughness {rough:.2}",
                self.bss_level
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Disc {
    x: f64,
    y: f64,
    r: f64,
    /// (frequency, relative amplitude, phase) of the outline.
    harmonics: Vec<(f64, f64, f64)>,
}

impl Disc {
    fn plain(x: f64, y: f64, r: f64) -> Self {
        Disc {
            x,
            y,
            r,
            harmonics: Vec::new(),
        }
    }

    fn reach(&self) -> f64 {
        self.r * (1.0 + self.harmonics.iter().map(|h| h.1.abs()).sum::<f64>())
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        let (dx, dy) = (u - self.x, v - self.y);
        let d2 = dx * dx + dy * dy;
        let reach = self.reach();
        if d2 > reach * reach {
            return false;
        }
        if self.harmonics.is_empty() {
            return d2 <= self.r * self.r;
        }
        let theta = dy.atan2(dx);
        let rr = self.r * (1.0 + self.harmonics.iter().map(|&(k, a, p)| a * (k * theta + p).cos()).sum::<f64>());
        d2 <= rr * rr
    }
}

fn harmonics<R: Rng + ?Sized>(rng: &mut R, freqs: std::ops::RangeInclusive<u32>, terms: usize, amp: f64) -> Vec<(f64, f64, f64)> {
    (0..terms)
        .map(|_| {
            (
                rng.random_range(freqs.clone()) as f64,
                amp * rng.random_range(0.6..1.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect()
}

/// Discs along a bent path whose overall length is `elongation` times the
/// width `2r`.
fn chain<R: Rng + ?Sized>(rng: &mut R, elongation: f64, spacing: f64, bend: f64, wiggle: bool) -> Vec<(f64, f64)> {
    let straight = 2.0 * (elongation - 1.0);
    let n = (straight / spacing).ceil() as usize + 1;
    let phase = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            let x = (t - 0.5) * straight;
            let y = if wiggle {
                bend * (2.0 * PI * t + phase).sin()
            } else {
                bend * (x * x - straight * straight / 4.0) / straight.max(1.0)
            };
            (x, y)
        })
        .collect()
}

/// Spacing radius of a fragment. Outline bumps rarely line up with the
/// neighbor's, so only part of their amplitude is counted; merged layouts
/// are caught by the component check after rasterizing.
fn fragment_extent(f: &[Disc]) -> f64 {
    f.iter()
        .map(|d| (d.x * d.x + d.y * d.y).sqrt() + 0.5 * (d.r + d.reach()))
        .fold(0.0, f64::max)
}

/// Scatters fragments (each centered at its own origin) so that their
/// reaches stay `gap` apart.
fn layout<R: Rng + ?Sized>(rng: &mut R, ext: &[f64], gap: f64) -> Vec<(f64, f64, f64)> {
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    let mut radius = 0.5 * ext.iter().cloned().fold(0.0, f64::max);
    for &e in ext {
        let mut tries = 0;
        let pos = loop {
            let a = rng.random_range(0.0..2.0 * PI);
            let d = radius * rng.random_range(0.0f64..1.0).sqrt();
            let (x, y) = (d * a.cos(), d * a.sin());
            if placed.iter().all(|&(px, py, pe)| ((x - px).powi(2) + (y - py).powi(2)).sqrt() >= e + pe + gap) {
                break (x, y);
            }
            tries += 1;
            if tries % 10 == 0 {
                radius *= 1.08;
            }
        };
        placed.push((pos.0, pos.1, e));
    }
    placed
}

/// Places fragments at random without overlap. With `layouts > 1` several
/// arrangements are drawn and the one with the smallest enclosing radius
/// is kept, which lets dense specimens fit the frame.
fn scatter<R: Rng + ?Sized>(rng: &mut R, fragments: Vec<Vec<Disc>>, gap: f64, layouts: usize) -> Vec<Disc> {
    let ext: Vec<f64> = fragments.iter().map(|f| fragment_extent(f)).collect();
    let mut best: Option<(f64, Vec<(f64, f64, f64)>)> = None;
    for _ in 0..layouts.max(1) {
        let placed = layout(rng, &ext, gap);
        let reach = placed.iter().map(|&(x, y, e)| x.hypot(y) + e).fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(r, _)| reach < *r) {
            best = Some((reach, placed));
        }
    }
    let placed = best.unwrap().1;
    let mut discs = Vec::new();
    for (f, &(px, py, _)) in fragments.into_iter().zip(&placed) {
        let rot = rng.random_range(0.0..2.0 * PI);
        let (s, c) = rot.sin_cos();
        for mut d in f {
            let (x, y) = (d.x * c - d.y * s, d.x * s + d.y * c);
            d.x = x + px;
            d.y = y + py;
            discs.push(d);
        }
    }
    discs
}

fn build_shape<R: Rng + ?Sized>(spec: &SpecimenSpec, rng: &mut R, layouts: usize) -> Vec<Disc> {
    let rough = spec.boundary_roughness;
    let e = spec.elongation;
    match spec.bss_level {
        // Separate hard round lumps.
        1 => {
            let frags = (0..spec.fragment_count)
                .map(|_| {
                    let r = rng.random_range(0.8..1.2);
                    let mut d = Disc::plain(0.0, 0.0, r);
                    d.harmonics = harmonics(rng, 2..=3, 2, 0.06 * rough + 0.02);
                    let mut f = vec![d];
                    if e > 1.0 {
                        f.push(Disc::plain(2.0 * (e - 1.0) * r, 0.0, r));
                    }
                    f
                })
                .collect();
            scatter(rng, frags, 0.9, layouts)
        }
        // One sausage of big lumps joined by narrow waists.
        2 => {
            let bend = rng.random_range(0.0..0.5);
            chain(rng, e, 1.3, bend, false)
                .into_iter()
                .enumerate()
                .map(|(i, (x, y))| {
                    let r = if i % 2 == 0 { rng.random_range(0.95..1.15) } else { rng.random_range(0.5..0.65) };
                    let mut d = Disc::plain(x, y, r);
                    d.harmonics = harmonics(rng, 3..=5, 2, 0.08 * rough);
                    d
                })
                .collect()
        }
        // Smooth sausage; the surface cracks are painted later.
        3 => {
            let bend = rng.random_range(0.0..0.4);
            chain(rng, e, 0.25, bend, false).into_iter().map(|(x, y)| Disc::plain(x, y, 1.0)).collect()
        }
        // Smooth snake.
        4 => {
            let bend = rng.random_range(0.2..0.45);
            chain(rng, e, 0.25, bend, true).into_iter().map(|(x, y)| Disc::plain(x, y, 1.0)).collect()
        }
        // A few soft blobs.
        5 => {
            let frags = (0..spec.fragment_count)
                .map(|_| {
                    let r = rng.random_range(0.9..1.1);
                    chain(rng, e, 0.4, 0.0, false)
                        .into_iter()
                        .map(|(x, y)| {
                            let mut d = Disc::plain(x * r, y, r);
                            d.harmonics = harmonics(rng, 2..=3, 1, 0.05 * rough);
                            d
                        })
                        .collect()
                })
                .collect();
            scatter(rng, frags, 1.0, layouts)
        }
        // Fluffy ragged pieces.
        6 => {
            let frags = (0..spec.fragment_count)
                .map(|_| {
                    let r = rng.random_range(0.75..1.0);
                    let stretch = rng.random_range(1.0..e);
                    chain(rng, stretch, 0.8, 0.2, false)
                        .into_iter()
                        .map(|(x, y)| {
                            let mut d = Disc::plain(x * r, y * r, r * rng.random_range(0.85..1.0));
                            d.harmonics = harmonics(rng, 3..=6, 2, 0.35 * rough);
                            d
                        })
                        .collect()
                })
                .collect();
            scatter(rng, frags, 0.5, layouts)
        }
        // A watery splash: a frayed core with thin runs spreading out.
        _ => {
            let mut discs: Vec<Disc> = (0..rng.random_range(3..=5))
                .map(|_| {
                    let a = rng.random_range(0.0..2.0 * PI);
                    let d = 0.8 * rng.random_range(0.0f64..1.0).sqrt();
                    let mut disc = Disc::plain(d * a.cos(), d * a.sin(), rng.random_range(0.8..1.2));
                    disc.harmonics = harmonics(rng, 4..=7, 2, 0.15 * rough);
                    disc
                })
                .collect();
            let runs = rng.random_range(6..=10);
            for k in 0..runs {
                let a = 2.0 * PI * (k as f64 + rng.random_range(0.0..0.7)) / runs as f64;
                let len = rng.random_range(1.5..2.4) * e;
                let width = rng.random_range(0.25..0.45);
                let curl = rng.random_range(-0.3..0.3);
                let mut t = 0.6;
                while t < 0.6 + len {
                    let ang = a + curl * (t - 0.6);
                    discs.push(Disc::plain(t * ang.cos(), t * ang.sin(), width));
                    t += 0.4 * width;
                }
                // A droplet at the tip.
                let ang = a + curl * len;
                discs.push(Disc::plain(t * ang.cos(), t * ang.sin(), 1.3 * width));
            }
            discs
        }
    }
}

/// Where and how large the unit-scale shape lands in the image.
#[derive(Clone, Copy)]
struct Placement {
    cx: f64,
    cy: f64,
    angle: f64,
    scale: f64,
}

fn rasterize(discs: &[Disc], p: Placement, w: usize, h: usize) -> Mask {
    let (s, c) = p.angle.sin_cos();
    let mut mask = Mask::zeros(w, h);
    // Bounding box in pixels.
    let reach = discs
        .iter()
        .map(|d| (d.x * d.x + d.y * d.y).sqrt() + d.reach())
        .fold(0.0, f64::max)
        * p.scale;
    let x0 = (p.cx - reach).floor().max(0.0) as usize;
    let x1 = ((p.cx + reach).ceil() as usize).min(w);
    let y0 = (p.cy - reach).floor().max(0.0) as usize;
    let y1 = ((p.cy + reach).ceil() as usize).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            let (dx, dy) = ((x as f64 + 0.5 - p.cx) / p.scale, (y as f64 + 0.5 - p.cy) / p.scale);
            let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
            if discs.iter().any(|d| d.contains(u, v)) {
                mask.set(x, y, 1);
            }
        }
    }
    mask
}

/// Area of the shape at unit scale, sampled on a 200x200 grid over its box.
fn unit_area(discs: &[Disc], largest_only: bool) -> f64 {
    let (x0, x1, y0, y1) = rotated_bounds(discs, 0.0);
    let n = 200;
    let (sx, sy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let mut grid = Mask::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let (u, v) = (x0 + (i as f64 + 0.5) * sx, y0 + (j as f64 + 0.5) * sy);
            if discs.iter().any(|d| d.contains(u, v)) {
                grid.set(i, j, 1);
            }
        }
    }
    if largest_only {
        grid = largest_component(&grid);
    }
    grid.count() as f64 * sx * sy
}

/// Bounding box of the rotated shape at unit scale: (min_x, max_x, min_y, max_y).
fn rotated_bounds(discs: &[Disc], angle: f64) -> (f64, f64, f64, f64) {
    let (s, c) = angle.sin_cos();
    let mut b = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for d in discs {
        let (x, y) = (d.x * c - d.y * s, d.x * s + d.y * c);
        let r = d.reach();
        b = (b.0.min(x - r), b.1.max(x + r), b.2.min(y - r), b.3.max(y + r));
    }
    b
}

fn touches_frame(mask: &Mask) -> bool {
    let (w, h) = (mask.width, mask.height);
    (0..w).any(|x| mask.get(x, 0) != 0 || mask.get(x, h - 1) != 0)
        || (0..h).any(|y| mask.get(0, y) != 0 || mask.get(w - 1, y) != 0)
}

/// Geometry of the painted backdrop used to place things.
struct Backdrop {
    image: Image,
    /// Center and semi-axes of the region specimens should sit in.
    pool: (f64, f64, f64, f64),
    water: [f64; 3],
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, base: f64, spread: f64) -> f64 {
    base + rng.random_range(-spread..=spread)
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn paint_backdrop<R: Rng + ?Sized>(scene: &SceneParams, rng: &mut R) -> Backdrop {
    let (h, w) = scene.image_size;
    let (wf, hf) = (w as f64, h as f64);
    match scene.background_style {
        Background::Flat => {
            let g = rng.random_range(150.0..230.0);
            let tint = [jitter(rng, 0.0, 15.0), jitter(rng, 0.0, 15.0), jitter(rng, 0.0, 15.0)];
            let rgb = [g + tint[0], g + tint[1], g + tint[2]];
            Backdrop {
                image: Image::filled(w, h, rgb.map(clamp_u8)),
                pool: (wf / 2.0, hf / 2.0, 0.38 * wf, 0.38 * hf),
                water: rgb,
            }
        }
        Background::CeramicEllipse => {
            let tile = rng.random_range(120.0..180.0);
            let tile_rgb = [tile + jitter(rng, 0.0, 8.0), tile + jitter(rng, 0.0, 8.0), tile + jitter(rng, 0.0, 8.0)];
            let pitch = (wf * rng.random_range(0.18..0.3)).max(4.0);
            let (gx, gy) = (rng.random_range(0.0..pitch), rng.random_range(0.0..pitch));
            let cx = wf / 2.0 + jitter(rng, 0.0, 0.03 * wf);
            let cy = hf / 2.0 + jitter(rng, 0.0, 0.03 * hf);
            let (ax, ay) = (rng.random_range(0.42..0.49) * wf, rng.random_range(0.40..0.47) * hf);
            let porcelain = rng.random_range(215.0..240.0);
            let water = [porcelain - rng.random_range(10.0..25.0), porcelain - rng.random_range(5.0..15.0), porcelain - rng.random_range(0.0..6.0)];
            let inner = 0.72;
            let mut img = Image::filled(w, h, [0, 0, 0]);
            for y in 0..h {
                for x in 0..w {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let q = ((px - cx) / ax).powi(2) + ((py - cy) / ay).powi(2);
                    let rgb = if q <= inner * inner {
                        // Water pool, slightly darker toward its rim.
                        let f = 1.0 - 0.06 * q / (inner * inner);
                        water.map(|v| v * f)
                    } else if q <= 1.0 {
                        // Porcelain, shaded toward the outer rim.
                        let t = (q.sqrt() - inner) / (1.0 - inner);
                        [porcelain * (1.0 - 0.15 * t); 3]
                    } else {
                        let grout = ((px + gx) % pitch) < 1.0 || ((py + gy) % pitch) < 1.0;
                        let f = if grout { 0.8 } else { 1.0 };
                        tile_rgb.map(|v| v * f)
                    };
                    img.set_pixel(x, y, rgb.map(clamp_u8));
                }
            }
            Backdrop {
                image: img,
                pool: (cx, cy, inner * ax, inner * ay),
                water,
            }
        }
    }
}

/// City-block distance to the nearest background pixel, capped.
fn inner_distance(mask: &Mask, cap: u32) -> Vec<u32> {
    let (w, h) = (mask.width, mask.height);
    let mut dist: Vec<u32> = mask.data.iter().map(|&v| if v != 0 { cap } else { 0 }).collect();
    for _ in 0..cap {
        let prev = dist.clone();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if prev[i] == 0 {
                    continue;
                }
                let mut m = prev[i];
                for (dx, dy) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    let n = if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        0
                    } else {
                        prev[ny as usize * w + nx as usize]
                    };
                    m = m.min(n + 1);
                }
                dist[i] = m;
            }
        }
    }
    dist
}

fn blend(a: [u8; 3], b: [f64; 3], alpha: f64) -> [u8; 3] {
    [0, 1, 2].map(|c| clamp_u8(a[c] as f64 * (1.0 - alpha) + b[c] * alpha))
}

fn paint_specimen<R: Rng + ?Sized>(img: &mut Image, mask: &Mask, level: u8, water: [f64; 3], rng: &mut R) {
    let r = match level {
        1 | 2 => rng.random_range(85.0..135.0),
        6 | 7 => rng.random_range(120.0..170.0),
        _ => rng.random_range(100.0..155.0),
    };
    let base = [r, r * rng.random_range(0.55..0.7), r * rng.random_range(0.25..0.4)];
    let dist = inner_distance(mask, 4);
    let (grain, alpha_all) = match level {
        6 => (18.0, 1.0),
        7 => (14.0, 0.7),
        _ => (8.0, 1.0),
    };
    for y in 0..mask.height {
        for x in 0..mask.width {
            let i = y * mask.width + x;
            if mask.data[i] == 0 {
                continue;
            }
            let d = dist[i] as f64;
            let shade = match level {
                1..=4 => 0.72 + 0.28 * (d / 3.0).min(1.0),
                _ => 0.9 + 0.1 * (d / 3.0).min(1.0),
            };
            let noise = rng.random_range(-grain..=grain);
            let rgb = base.map(|v| v * shade + noise);
            let alpha = match level {
                5 if d <= 1.0 => 0.6 * alpha_all,
                _ => alpha_all,
            };
            let under = if alpha < 1.0 { water } else { [0.0; 3] };
            let mixed = [0, 1, 2].map(|c| rgb[c] * alpha + under[c] * (1.0 - alpha));
            img.set_pixel(x, y, mixed.map(clamp_u8));
        }
    }
    if level == 3 {
        // Dark cracks across the surface.
        let (xs, ys): (Vec<usize>, Vec<usize>) = (0..mask.data.len())
            .filter(|&i| dist[i] >= 2)
            .map(|i| (i % mask.width, i / mask.width))
            .unzip();
        if xs.is_empty() {
            return;
        }
        for _ in 0..rng.random_range(3..=6) {
            let k = rng.random_range(0..xs.len());
            let (mut x, mut y) = (xs[k] as f64, ys[k] as f64);
            let a = rng.random_range(0.0..PI);
            let len = rng.random_range(2.0..5.0) * mask.width as f64 / 64.0;
            for _ in 0..len.ceil() as usize {
                let (xi, yi) = (x.round() as isize, y.round() as isize);
                if xi >= 0 && yi >= 0 && (xi as usize) < mask.width && (yi as usize) < mask.height && mask.get(xi as usize, yi as usize) != 0 {
                    let p = img.pixel(xi as usize, yi as usize);
                    img.set_pixel(xi as usize, yi as usize, p.map(|v| (v as f64 * 0.55) as u8));
                }
                x += a.cos();
                y += a.sin();
            }
        }
    }
}

/// Pixels under a rotated rectangle.
fn strip_pixels(w: usize, h: usize, cx: f64, cy: f64, len: f64, width: f64, angle: f64) -> Vec<usize> {
    let (s, c) = angle.sin_cos();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
            if u.abs() <= len / 2.0 && v.abs() <= width / 2.0 {
                out.push(y * w + x);
            }
        }
    }
    out
}

fn paint_strip<R: Rng + ?Sized>(img: &mut Image, pixels: &[usize], rng: &mut R) {
    let white = rng.random_range(228.0..250.0);
    for &i in pixels {
        let (x, y) = (i % img.width, i / img.width);
        let v = white + rng.random_range(-5.0..=5.0);
        img.set_pixel(x, y, [v, v, v - 4.0].map(clamp_u8));
    }
}

/// 3x3 erosion; pixels on the frame edge see background beyond it.
fn erode(mask: &Mask) -> Mask {
    let (w, h) = (mask.width, mask.height);
    let mut out = Mask::zeros(w, h);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let all = (0..9).all(|k| mask.get(x + k % 3 - 1, y + k / 3 - 1) != 0);
            out.set(x, y, u8::from(all));
        }
    }
    out
}

/// Lays paper strips over the specimen. A placement is kept only if it
/// hides at most a quarter of the specimen (and at most 4% of the image)
/// without splitting or deleting a piece, pinching it to a neck that a
/// one-pixel erosion would cut, or raising the outline compactness by more
/// than 15% (paper lies over an edge rather than carving a slot); otherwise the strip goes to the
/// backdrop away from the specimen.
fn occlude<R: Rng + ?Sized>(img: &mut Image, mask: &mut Mask, count: usize, rng: &mut R) {
    let (w, h) = (mask.width, mask.height);
    let scale = w.min(h) as f64;
    for _ in 0..count {
        let total = mask.count();
        let pieces = components(mask).len();
        let before = mask_compactness(mask);
        let fg: Vec<usize> = (0..mask.data.len()).filter(|&i| mask.data[i] != 0).collect();
        let len = rng.random_range(0.3..0.55) * scale;
        let width = rng.random_range(0.08..0.16) * scale;
        let mut chosen = None;
        for attempt in 0..40 {
            let near = attempt < 30 && !fg.is_empty();
            let (cx, cy) = if near {
                // Centered just off the specimen so the paper overlaps its edge.
                let i = fg[rng.random_range(0..fg.len())];
                let off = rng.random_range(0.5..1.0) * width;
                let a = rng.random_range(0.0..2.0 * PI);
                let (cx, cy) = ((i % w) as f64 + 0.5 + off * a.cos(), (i / w) as f64 + 0.5 + off * a.sin());
                let (px, py) = (cx.floor(), cy.floor());
                if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 || mask.get(px as usize, py as usize) != 0 {
                    continue;
                }
                (cx, cy)
            } else {
                (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64))
            };
            let angle = rng.random_range(0.0..PI);
            let px = strip_pixels(w, h, cx, cy, len, width, angle);
            let hidden = px.iter().filter(|&&i| mask.data[i] != 0).count();
            let limit = (total / 4).min(w * h * 4 / 100);
            if near {
                if hidden == 0 || hidden > limit {
                    continue;
                }
                let mut trial = mask.clone();
                for &i in &px {
                    trial.data[i] = 0;
                }
                if components(&trial).len() != pieces
                    || components(&erode(&trial)).len() != pieces
                    || mask_compactness(&trial) > 1.15 * before
                {
                    continue;
                }
            } else if hidden > 0 {
                continue;
            }
            chosen = Some(px);
            break;
        }
        if let Some(px) = chosen {
            for &i in &px {
                mask.data[i] = 0;
            }
            paint_strip(img, &px, rng);
        }
    }
}

fn glare<R: Rng + ?Sized>(img: &mut Image, pool: (f64, f64, f64, f64), count: usize, rng: &mut R) {
    let (w, h) = (img.width, img.height);
    for _ in 0..count {
        let a = rng.random_range(0.0..2.0 * PI);
        let d = rng.random_range(0.0f64..1.0).sqrt();
        let (cx, cy) = (pool.0 + d * pool.2 * a.cos(), pool.1 + d * pool.3 * a.sin());
        let (rx, ry) = (rng.random_range(0.03..0.08) * w as f64, rng.random_range(0.02..0.05) * h as f64);
        let strength = rng.random_range(0.5..0.9);
        for y in 0..h {
            for x in 0..w {
                let q = ((x as f64 + 0.5 - cx) / rx).powi(2) + ((y as f64 + 0.5 - cy) / ry).powi(2);
                if q < 1.0 {
                    let alpha = strength * (1.0 - q);
                    let p = img.pixel(x, y);
                    img.set_pixel(x, y, blend(p, [255.0; 3], alpha));
                }
            }
        }
    }
}

fn finish<R: Rng + ?Sized>(img: &mut Image, gradient: f64, rng: &mut R) {
    let (w, h) = (img.width as f64, img.height as f64);
    let a = rng.random_range(0.0..2.0 * PI);
    let (dx, dy) = (a.cos(), a.sin());
    let half = 0.5 * (w * dx.abs() + h * dy.abs());
    for y in 0..img.height {
        for x in 0..img.width {
            let t = ((x as f64 + 0.5 - w / 2.0) * dx + (y as f64 + 0.5 - h / 2.0) * dy) / half.max(1.0);
            let f = 1.0 + gradient * t;
            let noise = rng.random_range(-3.0..=3.0);
            let p = img.pixel(x, y);
            img.set_pixel(x, y, p.map(|v| clamp_u8(v as f64 * f + noise)));
        }
    }
}

/// Renders one specimen scene. The mask marks exactly the visible
/// specimen pixels; the same spec and scene always give the same output.
pub fn generate_specimen(spec: &SpecimenSpec, scene: &SceneParams) -> Result<(Image, Mask)> {
    spec.validate()?;
    scene.validate()?;
    let (h, w) = scene.image_size;
    let mut rng = seeded(spec.seed);
    let backdrop = paint_backdrop(scene, &mut rng);
    let target = spec.coverage_ratio * (w * h) as f64;
    let expected_pieces = spec.fragment_count;

    let mut found = None;
    for attempt in 0..40 {
        // Later attempts pack multi-piece specimens more tightly.
        let layouts = if attempt < 10 { 1 } else { 8 };
        let mut discs = build_shape(spec, &mut rng, layouts);
        let (bx0, bx1, by0, by1) = rotated_bounds(&discs, 0.0);
        for d in &mut discs {
            d.x -= 0.5 * (bx0 + bx1);
            d.y -= 0.5 * (by0 + by1);
        }
        let angle = rng.random_range(0.0..2.0 * PI);
        let (pcx, pcy, prx, pry) = backdrop.pool;
        let off_a = rng.random_range(0.0..2.0 * PI);
        let off_d = rng.random_range(0.0..0.35);
        let mut place = Placement {
            cx: pcx + off_d * prx * off_a.cos(),
            cy: pcy + off_d * pry * off_a.sin(),
            angle,
            scale: 1.0,
        };
        let area_at = |scale: f64, place: Placement| {
            let m = rasterize(&discs, Placement { scale, ..place }, w, h);
            if spec.bss_level == 7 { largest_component(&m) } else { m }
        };
        // Start from the unclipped area, which grows with scale², then
        // refine on the pixel grid with the shape centered in the frame.
        let unit = unit_area(&discs, spec.bss_level == 7);
        let guess = (target / unit).sqrt();
        let centered = Placement { cx: w as f64 / 2.0, cy: h as f64 / 2.0, ..place };
        let (mut lo, mut hi) = (0.8 * guess, 1.25 * guess);
        for _ in 0..12 {
            let mid = 0.5 * (lo + hi);
            if (area_at(mid, centered).count() as f64) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        place.scale = hi;
        // Re-center the shape's box on the chosen point and keep it framed.
        let (bx0, bx1, by0, by1) = rotated_bounds(&discs, angle);
        let (half_w, half_h) = (0.5 * (bx1 - bx0) * place.scale, 0.5 * (by1 - by0) * place.scale);
        // The box is conservative; when it cannot fit, center it and let
        // the frame test below decide.
        let fit = |c: f64, half: f64, n: f64| if 2.0 * half + 2.0 < n { c.clamp(half + 1.0, n - half - 1.0) } else { n / 2.0 };
        let want_x = fit(place.cx, half_w, w as f64);
        let want_y = fit(place.cy, half_h, h as f64);
        place.cx = want_x - 0.5 * (bx0 + bx1) * place.scale;
        place.cy = want_y - 0.5 * (by0 + by1) * place.scale;
        let mask = area_at(place.scale, place);
        if touches_frame(&mask) {
            continue;
        }
        if (mask.count() as f64 - target).abs() > 0.01 * (w * h) as f64 {
            continue;
        }
        if components(&mask).len() != expected_pieces {
            continue;
        }
        found = Some(mask);
        break;
    }
    let Some(mut mask) = found else {
        return Err(Error::Generation(format!(
            "could not place a level {} specimen at coverage {:.3} in {w}x{h}",
            spec.bss_level, spec.coverage_ratio
        )));
    };

    let mut img = backdrop.image;
    paint_specimen(&mut img, &mask, spec.bss_level, backdrop.water, &mut rng);
    occlude(&mut img, &mut mask, scene.occluder_count, &mut rng);
    glare(&mut img, backdrop.pool, scene.reflection_count, &mut rng);
    finish(&mut img, scene.lighting_gradient, &mut rng);
    Ok((img, mask))
}

fn distractor<R: Rng + ?Sized>(img: &mut Image, rng: &mut R) {
    let (w, h) = (img.width as f64, img.height as f64);
    // Saturated hues away from browns.
    let palette = [[40.0, 90.0, 200.0], [40.0, 160.0, 70.0], [150.0, 60.0, 170.0], [220.0, 200.0, 40.0], [60.0, 180.0, 190.0]];
    let rgb = palette[rng.random_range(0..palette.len())].map(|v: f64| v + rng.random_range(-20.0..=20.0));
    let (cx, cy) = (rng.random_range(0.2..0.8) * w, rng.random_range(0.2..0.8) * h);
    let (rx, ry) = (rng.random_range(0.05..0.15) * w, rng.random_range(0.05..0.15) * h);
    let angle: f64 = rng.random_range(0.0..PI);
    let (s, c) = angle.sin_cos();
    for y in 0..img.height {
        for x in 0..img.width {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
            if (u / rx).powi(2) + (v / ry).powi(2) <= 1.0 {
                img.set_pixel(x, y, rgb.map(|v| clamp_u8(v + rng.random_range(-6.0..=6.0))));
            }
        }
    }
}

/// A scene with no specimen: backdrop, paper, glare and a few colored
/// objects. The mask is all zero.
pub fn generate_negative(scene: &SceneParams, seed: u64) -> Result<(Image, Mask)> {
    scene.validate()?;
    let (h, w) = scene.image_size;
    let mut rng: Prng = seeded(seed);
    let backdrop = paint_backdrop(scene, &mut rng);
    let mut img = backdrop.image;
    let mut mask = Mask::zeros(w, h);
    for _ in 0..rng.random_range(0..=3) {
        distractor(&mut img, &mut rng);
    }
    occlude(&mut img, &mut mask, scene.occluder_count, &mut rng);
    glare(&mut img, backdrop.pool, scene.reflection_count, &mut rng);
    finish(&mut img, scene.lighting_gradient, &mut rng);
    Ok((img, mask))
}
