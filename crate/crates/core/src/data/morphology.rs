//! Shape measurements on binary masks and the training-free class rule.

use super::Mask;
use crate::metrics::Consolidated;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub area: usize,
    /// Smoothed contour length, see `contour_length`.
    pub perimeter: f64,
}

impl Component {
    /// `P²/(4πA)`: about 1 for a disc, larger for elongated or ragged
    /// outlines.
    pub fn compactness(&self) -> f64 {
        self.perimeter * self.perimeter / (4.0 * std::f64::consts::PI * self.area as f64)
    }
}

/// Length of the 0.5 iso-line of the component smoothed with a separable
/// `[1 2 1]/4` kernel, with crossings interpolated along cell edges. The
/// smoothing removes the pixel staircase, so straight edges measure their
/// true length at any angle; specks of a pixel or two fall under the level
/// and measure near zero.
fn contour_length(labels: &[u32], id: u32, w: usize, h: usize) -> f64 {
    let (gw, gh) = (w + 2, h + 2);
    // Grid point (gx, gy) sits on pixel (gx - 1, gy - 1).
    let inside = |x: isize, y: isize| -> f32 {
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h || labels[y as usize * w + x as usize] != id {
            0.0
        } else {
            1.0
        }
    };
    let k = [0.25f32, 0.5, 0.25];
    let mut rows = vec![0f32; gw * gh];
    for gy in 0..gh {
        for gx in 0..gw {
            let (x, y) = (gx as isize - 1, gy as isize - 1);
            rows[gy * gw + gx] = (0..3).map(|i| k[i] * inside(x + i as isize - 1, y)).sum();
        }
    }
    let row = |gx: isize, gy: isize| -> f32 {
        if gy < 0 || gy as usize >= gh {
            0.0
        } else {
            rows[gy as usize * gw + gx as usize]
        }
    };
    let field: Vec<f32> = (0..gw * gh)
        .map(|i| {
            let (gx, gy) = ((i % gw) as isize, (i / gw) as isize);
            (0..3).map(|j| k[j] * row(gx, gy + j as isize - 1)).sum()
        })
        .collect();

    let mut length = 0.0;
    for gy in 0..gh - 1 {
        for gx in 0..gw - 1 {
            // Corners clockwise from top-left, with their positions.
            let pos = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
            let v = [
                field[gy * gw + gx],
                field[gy * gw + gx + 1],
                field[(gy + 1) * gw + gx + 1],
                field[(gy + 1) * gw + gx],
            ];
            let on: Vec<bool> = v.iter().map(|&x| x >= 0.5).collect();
            if on.iter().all(|&b| b) || on.iter().all(|&b| !b) {
                continue;
            }
            // Crossing on edge e, which joins corner e and corner e+1.
            let cross = |e: usize| -> (f64, f64) {
                let (a, b) = (e, (e + 1) % 4);
                let t = ((0.5 - v[a]) / (v[b] - v[a])) as f64;
                (pos[a].0 + t * (pos[b].0 - pos[a].0), pos[a].1 + t * (pos[b].1 - pos[a].1))
            };
            let seg = |e1: usize, e2: usize| -> f64 {
                let (p, q) = (cross(e1), cross(e2));
                ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
            };
            let edges: Vec<usize> = (0..4).filter(|&e| on[e] != on[(e + 1) % 4]).collect();
            if edges.len() == 2 {
                length += seg(edges[0], edges[1]);
            } else {
                // Saddle: cut off the corners that disagree with the center.
                let center = v.iter().sum::<f32>() / 4.0 >= 0.5;
                for c in (0..4).filter(|&c| on[c] != center) {
                    length += seg((c + 3) % 4, c);
                }
            }
        }
    }
    length
}

/// Per-pixel component labels (0 = background, 1.. = component id) under
/// 8-connectivity, and the components in label order.
pub fn label_components(mask: &Mask) -> (Vec<u32>, Vec<Component>) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        let id = comps.len() as u32 + 1;
        let mut comp = Component { area: 0, perimeter: 0.0 };
        labels[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            comp.area += 1;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.data[j] != 0 && labels[j] == 0 {
                        labels[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        comps.push(comp);
    }
    for (i, comp) in comps.iter_mut().enumerate() {
        comp.perimeter = contour_length(&labels, i as u32 + 1, w, h);
    }
    (labels, comps)
}

pub fn components(mask: &Mask) -> Vec<Component> {
    label_components(mask).1
}

/// Area-weighted mean compactness over components; 0 for an empty mask.
pub fn mask_compactness(mask: &Mask) -> f64 {
    let comps = components(mask);
    let area: usize = comps.iter().map(|c| c.area).sum();
    if area == 0 {
        return 0.0;
    }
    comps.iter().map(|c| c.compactness() * c.area as f64).sum::<f64>() / area as f64
}

/// Keeps only the largest component.
pub fn largest_component(mask: &Mask) -> Mask {
    let (labels, comps) = label_components(mask);
    let Some(best) = (0..comps.len()).max_by_key(|&i| (comps[i].area, std::cmp::Reverse(i))) else {
        return mask.clone();
    };
    let id = best as u32 + 1;
    Mask {
        width: mask.width,
        height: mask.height,
        data: labels.iter().map(|&l| u8::from(l == id)).collect(),
    }
}

/// Components smaller than this many pixels are ignored by [`feature_rule`].
pub const SPECK_AREA: usize = 4;
/// Separates round hard lumps from ragged fluffy pieces when there are
/// many fragments.
pub const FRAGMENT_SPLIT: f64 = 1.18;
/// Single regions below this are smooth sausages.
pub const SMOOTH_MAX: f64 = 1.58;
/// Single regions at or above this are diffuse puddles.
pub const DIFFUSE_MIN: f64 = 2.80;

/// Classifies a specimen mask from its component count `K` and compactness
/// `C`, without training:
///
/// * `K ≥ 4`: constipation if `C < FRAGMENT_SPLIT`, else loose;
/// * `K ∈ {2, 3}`: normal;
/// * `K = 1`: normal if `C < SMOOTH_MAX`, loose if `C ≥ DIFFUSE_MIN`,
///   constipation in between (one lumpy sausage).
///
/// Compactness is the area-weighted mean over components. The thresholds
/// sit in the gaps between the generator's levels at 64x64 and above; on
/// smaller frames the ragged outlines fall below pixel scale. Returns
/// `None` for an empty mask.
pub fn feature_rule(mask: &Mask) -> Option<Consolidated> {
    let comps: Vec<Component> = components(mask).into_iter().filter(|c| c.area >= SPECK_AREA).collect();
    let area: usize = comps.iter().map(|c| c.area).sum();
    if comps.is_empty() {
        return None;
    }
    let c = comps.iter().map(|c| c.compactness() * c.area as f64).sum::<f64>() / area as f64;
    Some(match comps.len() {
        k if k >= 4 => {
            if c < FRAGMENT_SPLIT {
                Consolidated::Constipation
            } else {
                Consolidated::Loose
            }
        }
        2 | 3 => Consolidated::Normal,
        _ if c < SMOOTH_MAX => Consolidated::Normal,
        _ if c >= DIFFUSE_MIN => Consolidated::Loose,
        _ => Consolidated::Constipation,
    })
}
