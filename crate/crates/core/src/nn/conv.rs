use rand::Rng;

use super::gemm::{gemm, Mat};
use super::{he_uniform, Param};
use crate::autograd::{BackwardRule, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_image(&self) -> usize {
        self.in_ch * self.h * self.w
    }

    /// 1×1, stride 1, no padding: the input image already is its column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `ox` whose input column `ox * stride + kx - pad` lies
/// inside the image.
fn valid_cols(g: &Geometry, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride).min(g.ow);
    let hi = if g.w + g.pad > kx {
        ((g.w + g.pad - kx - 1) / g.stride + 1).min(g.ow)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds one image `[C,H,W]` into `[C·k·k, OH·OW]`.
fn im2col(x: &[f32], g: &Geometry, cols: &mut [f32]) {
    let plane = g.out_plane();
    for c in 0..g.in_ch {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let start = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src_row[start..start + hi - lo]);
                    } else {
                        for (v, &s) in line[lo..hi].iter_mut().zip(src_row[start..].iter().step_by(g.stride)) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back, accumulating.
fn col2im(cols: &[f32], g: &Geometry, dx: &mut [f32]) {
    let plane = g.out_plane();
    for c in 0..g.in_ch {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kx);
                if lo == hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    let start = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        for (d, &v) in dst_row[start..start + hi - lo].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst_row[start..].iter_mut().step_by(g.stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

struct ConvRule {
    geom: Geometry,
    has_bias: bool,
}

impl BackwardRule for ConvRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let g = &self.geom;
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let (rows, plane) = (g.col_rows(), g.out_plane());
        let need_x = needs[0];
        let need_w = needs[1];
        let need_b = self.has_bias && needs[2];

        let mut dx = need_x.then(|| vec![0.0f32; x.len()]);
        let mut dw = need_w.then(|| vec![0.0f32; w.len()]);
        let mut cols = vec![0.0f32; if g.is_pointwise() { 0 } else { rows * plane }];
        let mut dcols = vec![0.0f32; if need_x && !g.is_pointwise() { rows * plane } else { 0 }];

        for n in 0..g.batch {
            let x_n = &x[n * g.in_image()..(n + 1) * g.in_image()];
            let g_n = &grad[n * g.out_ch * plane..(n + 1) * g.out_ch * plane];
            if let Some(dw) = dw.as_mut() {
                let col_mat = if g.is_pointwise() {
                    Mat::t(x_n, rows, plane)
                } else {
                    im2col(x_n, g, &mut cols);
                    Mat::t(&cols, rows, plane)
                };
                gemm(Mat::new(g_n, g.out_ch, plane), col_mat, dw, 1.0);
            }
            if let Some(dx) = dx.as_mut() {
                let dx_n = &mut dx[n * g.in_image()..(n + 1) * g.in_image()];
                if g.is_pointwise() {
                    gemm(Mat::t(w, g.out_ch, rows), Mat::new(g_n, g.out_ch, plane), dx_n, 0.0);
                } else {
                    gemm(Mat::t(w, g.out_ch, rows), Mat::new(g_n, g.out_ch, plane), &mut dcols, 0.0);
                    col2im(&dcols, g, dx_n);
                }
            }
        }

        let db = need_b.then(|| {
            let mut db = vec![0.0f64; g.out_ch];
            for n in 0..g.batch {
                for (o, acc) in db.iter_mut().enumerate() {
                    let start = (n * g.out_ch + o) * plane;
                    *acc += grad[start..start + plane].iter().map(|&v| v as f64).sum::<f64>();
                }
            }
            db.into_iter().map(|v| v as f32).collect()
        });

        let mut out = vec![dx, dw];
        if self.has_bias {
            out.push(db);
        }
        out
    }
}

/// 2-D cross-correlation of `x [N,C,H,W]` with `weight [O,C,k,k]` plus an
/// optional per-channel bias, zero-padded symmetrically.
pub fn conv2d(tape: &mut Tape, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(weight).to_vec();
    let (&[batch, in_ch, h, w], &[out_ch, w_in, k, k2]) = (xs.as_slice(), ws.as_slice()) else {
        return Err(Error::contract(
            "conv2d",
            format!("expected x [N,C,H,W] and weight [O,C,k,k], got {xs:?} and {ws:?}"),
        ));
    };
    if w_in != in_ch {
        return Err(Error::contract(
            "conv2d",
            format!("input has {in_ch} channels, weight expects {w_in}"),
        ));
    }
    if k != k2 || stride == 0 {
        return Err(Error::contract("conv2d", "kernel must be square and stride positive"));
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::contract(
            "conv2d",
            format!("padded input {h}x{w} (+{padding}) smaller than kernel {k}"),
        ));
    }
    if let Some(b) = bias {
        if tape.shape(b) != [out_ch] {
            return Err(Error::contract("conv2d", format!("bias must have shape [{out_ch}]")));
        }
    }
    let g = Geometry {
        batch,
        in_ch,
        h,
        w,
        out_ch,
        k,
        stride,
        pad: padding,
        oh: (h + 2 * padding - k) / stride + 1,
        ow: (w + 2 * padding - k) / stride + 1,
    };

    let plane = g.out_plane();
    let mut out = vec![0.0f32; batch * out_ch * plane];
    let mut cols = vec![0.0f32; if g.is_pointwise() { 0 } else { g.col_rows() * plane }];
    {
        let xd = tape.data(x);
        let wd = tape.data(weight);
        for n in 0..batch {
            let x_n = &xd[n * g.in_image()..(n + 1) * g.in_image()];
            let out_n = &mut out[n * out_ch * plane..(n + 1) * out_ch * plane];
            let col_mat = if g.is_pointwise() {
                Mat::new(x_n, g.col_rows(), plane)
            } else {
                im2col(x_n, &g, &mut cols);
                Mat::new(&cols, g.col_rows(), plane)
            };
            gemm(Mat::new(wd, out_ch, g.col_rows()), col_mat, out_n, 0.0);
        }
    }
    if let Some(b) = bias {
        let bd = tape.data(b);
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let bv = bd[i % out_ch];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }

    let out = Tensor::new(vec![batch, out_ch, g.oh, g.ow], out)?;
    let inputs: Vec<Var> = std::iter::once(x).chain(Some(weight)).chain(bias).collect();
    tape.record(
        "conv2d",
        &inputs,
        out,
        ConvRule {
            geom: g,
            has_bias: bias.is_some(),
        },
    )
}

/// Convolution layer with square kernel, symmetric zero padding and bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// He-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            weight: Param::trainable(
                format!("{name}.weight"),
                he_uniform([out_ch, in_ch, kernel, kernel], fan_in, rng),
            ),
            bias: Param::trainable(format!("{name}.bias"), Tensor::zeros([out_ch])),
            stride,
            padding,
        }
    }

    /// 3×3 kernel with padding 1.
    pub fn same3x3<R: Rng + ?Sized>(name: &str, in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Conv2d::new(name, in_ch, out_ch, 3, 1, 1, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = self.weight.register(tape);
        let b = self.bias.register(tape);
        conv2d(tape, x, w, Some(b), self.stride, self.padding)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
