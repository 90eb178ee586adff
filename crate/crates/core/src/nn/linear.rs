use rand::Rng;

use super::{he_uniform, Param};
use crate::autograd::{BackwardRule, Tape, Tensor, Var};
use crate::error::{Error, Result};

struct LinearRule {
    batch: usize,
    in_f: usize,
    out_f: usize,
}

impl BackwardRule for LinearRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let (n, i_f, o_f) = (self.batch, self.in_f, self.out_f);
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0f32; n * i_f];
            for b in 0..n {
                for i in 0..i_f {
                    let acc: f64 = (0..o_f).map(|o| g[b * o_f + o] as f64 * w[o * i_f + i] as f64).sum();
                    dx[b * i_f + i] = acc as f32;
                }
            }
            dx
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![0.0f32; o_f * i_f];
            for o in 0..o_f {
                for i in 0..i_f {
                    let acc: f64 = (0..n).map(|b| g[b * o_f + o] as f64 * x[b * i_f + i] as f64).sum();
                    dw[o * i_f + i] = acc as f32;
                }
            }
            dw
        });
        let db = needs[2].then(|| {
            (0..o_f)
                .map(|o| (0..n).map(|b| g[b * o_f + o] as f64).sum::<f64>() as f32)
                .collect()
        });
        vec![dx, dw, db]
    }
}

/// `y = x·Wᵀ + b` for `x [N,in]`, `W [out,in]`, `b [out]`.
pub fn linear(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let (xs, ws, bs) = (tape.shape(x), tape.shape(weight), tape.shape(bias));
    let (&[n, in_f], &[out_f, w_in], &[b_out]) = (xs, ws, bs) else {
        return Err(Error::contract(
            "linear",
            format!("expected x [N,in], W [out,in], b [out]; got {xs:?}, {ws:?}, {bs:?}"),
        ));
    };
    if w_in != in_f || b_out != out_f {
        return Err(Error::contract(
            "linear",
            format!("x has {in_f} features, W is [{out_f},{w_in}], b has {b_out}"),
        ));
    }
    let (xd, wd, bd) = (tape.data(x), tape.data(weight), tape.data(bias));
    let mut out = vec![0.0f32; n * out_f];
    for b in 0..n {
        for o in 0..out_f {
            let dot: f64 = (0..in_f).map(|i| xd[b * in_f + i] as f64 * wd[o * in_f + i] as f64).sum();
            out[b * out_f + o] = (dot + bd[o] as f64) as f32;
        }
    }
    let out = Tensor::new(vec![n, out_f], out)?;
    tape.record(
        "linear",
        &[x, weight, bias],
        out,
        LinearRule {
            batch: n,
            in_f,
            out_f,
        },
    )
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Linear {
            weight: Param::trainable(
                format!("{name}.weight"),
                he_uniform([out_features, in_features], in_features, rng),
            ),
            bias: Param::trainable(format!("{name}.bias"), Tensor::zeros([out_features])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = self.weight.register(tape);
        let b = self.bias.register(tape);
        linear(tape, x, w, b)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
