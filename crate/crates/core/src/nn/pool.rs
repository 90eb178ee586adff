use std::rc::Rc;

use crate::autograd::{BackwardRule, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Argmax positions recorded by [`maxpool2d_with_indices`].
///
/// One entry per pooled cell: the row-major offset (0..4) of the winning
/// element inside its 2×2 window. [`PoolIndices::feature_map_index`] converts
/// an entry to the flat row-major index within the input feature map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: [usize; 4],
    offsets: Vec<u8>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> [usize; 4] {
        self.input_shape
    }

    pub fn pooled_shape(&self) -> [usize; 4] {
        let [n, c, h, w] = self.input_shape;
        [n, c, h / 2, w / 2]
    }

    /// Window-local argmax offsets in pooled-tensor order.
    pub fn offsets(&self) -> &[u8] {
        &self.offsets
    }

    /// Flat index within the `H×W` input feature map of pooled cell `cell`.
    pub fn feature_map_index(&self, cell: usize) -> usize {
        let [_, _, _, w] = self.input_shape;
        let pw = w / 2;
        let plane = (self.input_shape[2] / 2) * pw;
        let within = cell % plane;
        let (oy, ox) = (within / pw, within % pw);
        let off = self.offsets[cell] as usize;
        (2 * oy + off / 2) * w + 2 * ox + off % 2
    }

    /// Flat index into the whole `[N,C,H,W]` input tensor.
    fn tensor_index(&self, cell: usize) -> usize {
        let [_, _, h, w] = self.input_shape;
        let plane = (h / 2) * (w / 2);
        (cell / plane) * h * w + self.feature_map_index(cell)
    }
}

fn dims4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::contract(op, format!("expected [N,C,H,W], got {shape:?}"))),
    }
}

struct MaxPoolRule(Rc<PoolIndices>);

impl BackwardRule for MaxPoolRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![needs[0].then(|| {
            let mut dx = vec![0.0; inputs[0].numel()];
            for (cell, &gv) in g.iter().enumerate() {
                dx[self.0.tensor_index(cell)] += gv;
            }
            dx
        })]
    }
}

/// Non-overlapping 2×2 stride-2 max pooling that also returns the argmax
/// of every window. Ties resolve to the smallest index.
pub fn maxpool2d_with_indices(tape: &mut Tape, x: Var) -> Result<(Var, Rc<PoolIndices>)> {
    let [n, c, h, w] = dims4("maxpool2d", tape.shape(x))?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::contract(
            "maxpool2d",
            format!("spatial dims {h}x{w} must be even"),
        ));
    }
    let (ph, pw) = (h / 2, w / 2);
    let xd = tape.data(x);
    let mut out = Vec::with_capacity(n * c * ph * pw);
    let mut offsets = Vec::with_capacity(n * c * ph * pw);
    for plane in xd.chunks(h * w) {
        for oy in 0..ph {
            let top = &plane[2 * oy * w..(2 * oy + 1) * w];
            let bottom = &plane[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..pw {
                let window = [top[2 * ox], top[2 * ox + 1], bottom[2 * ox], bottom[2 * ox + 1]];
                let mut best = 0u8;
                for i in 1..4u8 {
                    if window[i as usize] > window[best as usize] {
                        best = i;
                    }
                }
                out.push(window[best as usize]);
                offsets.push(best);
            }
        }
    }
    let indices = Rc::new(PoolIndices {
        input_shape: [n, c, h, w],
        offsets,
    });
    let out = Tensor::new(vec![n, c, ph, pw], out)?;
    let y = tape.record("maxpool2d", &[x], out, MaxPoolRule(indices.clone()))?;
    Ok((y, indices))
}

struct UnpoolRule(Rc<PoolIndices>);

impl BackwardRule for UnpoolRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![needs[0].then(|| (0..inputs[0].numel()).map(|cell| g[self.0.tensor_index(cell)]).collect())]
    }
}

/// Scatters each pooled value back to the position its pooling window
/// selected; every other cell of the upsampled map is zero.
pub fn maxunpool2d(tape: &mut Tape, x: Var, indices: &Rc<PoolIndices>) -> Result<Var> {
    let shape = dims4("maxunpool2d", tape.shape(x))?;
    if shape != indices.pooled_shape() {
        return Err(Error::contract(
            "maxunpool2d",
            format!(
                "input {:?} does not match indices recorded for pooled shape {:?}",
                shape,
                indices.pooled_shape()
            ),
        ));
    }
    let [n, c, h, w] = indices.input_shape();
    let mut out = vec![0.0f32; n * c * h * w];
    for (cell, &v) in tape.data(x).iter().enumerate() {
        out[indices.tensor_index(cell)] = v;
    }
    let out = Tensor::new(vec![n, c, h, w], out)?;
    tape.record("maxunpool2d", &[x], out, UnpoolRule(indices.clone()))
}

struct GapRule {
    plane: usize,
}

impl BackwardRule for GapRule {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![needs[0].then(|| {
            let scale = 1.0 / self.plane as f64;
            g.iter()
                .flat_map(|&gv| std::iter::repeat_n((gv as f64 * scale) as f32, self.plane))
                .collect()
        })]
    }
}

/// Per-channel spatial mean: `[N,C,H,W] → [N,C]`.
pub fn global_avg_pool(tape: &mut Tape, x: Var) -> Result<Var> {
    let [n, c, h, w] = dims4("global_avg_pool", tape.shape(x))?;
    let plane = h * w;
    let out: Vec<f32> = tape
        .data(x)
        .chunks(plane)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
        .collect();
    let out = Tensor::new(vec![n, c], out)?;
    tape.record("global_avg_pool", &[x], out, GapRule { plane })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(data: Vec<f32>, shape: [usize; 4]) -> (Vec<f32>, Rc<PoolIndices>) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(shape.to_vec(), data).unwrap());
        let (y, idx) = maxpool2d_with_indices(&mut tape, x).unwrap();
        (tape.data(y).to_vec(), idx)
    }

    #[test]
    fn single_window() {
        let (v, idx) = pool(vec![1.0, 3.0, 2.0, 0.0], [1, 1, 2, 2]);
        assert_eq!(v, [3.0]);
        assert_eq!(idx.offsets(), &[1]);
        assert_eq!(idx.feature_map_index(0), 1);
    }

    #[test]
    fn constant_input_ties_to_first() {
        let (v, idx) = pool(vec![2.5; 32], [1, 2, 4, 4]);
        assert!(v.iter().all(|&x| x == 2.5));
        assert!(idx.offsets().iter().all(|&o| o == 0));
    }

    #[test]
    fn increasing_raster_picks_bottom_right() {
        let (_, idx) = pool((0..36).map(|i| i as f32).collect(), [1, 1, 6, 6]);
        assert!(idx.offsets().iter().all(|&o| o == 3));
        // Window (1,2) of a 6-wide map: bottom-right is row 3, col 5.
        assert_eq!(idx.feature_map_index(5), 3 * 6 + 5);
    }

    #[test]
    fn odd_dims_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 1, 3, 4]));
        assert!(maxpool2d_with_indices(&mut tape, x).is_err());
    }

    #[test]
    fn unpool_scatters_to_index() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new([1, 1, 2, 2], vec![1.0, 3.0, 2.0, 0.0]).unwrap());
        let (p, idx) = maxpool2d_with_indices(&mut tape, x).unwrap();
        let u = maxunpool2d(&mut tape, p, &idx).unwrap();
        assert_eq!(tape.data(u), &[0.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn unpool_rejects_mismatched_indices() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 1, 4, 4]));
        let (_, idx) = maxpool2d_with_indices(&mut tape, x).unwrap();
        let other = tape.constant(Tensor::zeros([1, 2, 2, 2]));
        assert!(maxunpool2d(&mut tape, other, &idx).is_err());
    }

    #[test]
    fn gap_values_and_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new([1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap().with_requires_grad(true));
        let y = global_avg_pool(&mut tape, x).unwrap();
        assert_eq!(tape.data(y), &[4.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.25; 4]);

        let mut tape = Tape::new();
        let c = tape.constant(Tensor::full([2, 3, 5, 5], -1.25));
        let y = global_avg_pool(&mut tape, c).unwrap();
        assert!(tape.data(y).iter().all(|&v| v == -1.25));
    }
}
