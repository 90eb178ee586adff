use super::{Mode, Param};
use crate::autograd::{BackwardRule, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

struct BatchNormRule {
    channels: usize,
    plane: usize,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    /// Statistics came from the batch itself, so they depend on `x`.
    batch_stats: bool,
}

impl BackwardRule for BatchNormRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let x = inputs[0].data();
        let gamma = inputs[1].data();
        let (c_n, plane) = (self.channels, self.plane);
        let batch = x.len() / (c_n * plane);
        let count = (batch * plane) as f64;

        // Per-channel Σg and Σg·x̂.
        let mut sum_g = vec![0.0f64; c_n];
        let mut sum_gx = vec![0.0f64; c_n];
        for n in 0..batch {
            for c in 0..c_n {
                let start = (n * c_n + c) * plane;
                for i in start..start + plane {
                    let xhat = (x[i] as f64 - self.mean[c]) * self.inv_std[c];
                    sum_g[c] += g[i] as f64;
                    sum_gx[c] += g[i] as f64 * xhat;
                }
            }
        }

        let dx = needs[0].then(|| {
            let mut dx = vec![0.0f32; x.len()];
            for n in 0..batch {
                for c in 0..c_n {
                    let start = (n * c_n + c) * plane;
                    let scale = gamma[c] as f64 * self.inv_std[c];
                    for i in start..start + plane {
                        dx[i] = if self.batch_stats {
                            let xhat = (x[i] as f64 - self.mean[c]) * self.inv_std[c];
                            (scale * (g[i] as f64 - sum_g[c] / count - xhat * sum_gx[c] / count)) as f32
                        } else {
                            (scale * g[i] as f64) as f32
                        };
                    }
                }
            }
            dx
        });
        let dgamma = needs[1].then(|| sum_gx.iter().map(|&v| v as f32).collect());
        let dbeta = needs[2].then(|| sum_g.iter().map(|&v| v as f32).collect());
        vec![dx, dgamma, dbeta]
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::trainable(format!("{name}.gamma"), Tensor::full([channels], 1.0)),
            beta: Param::trainable(format!("{name}.beta"), Tensor::zeros([channels])),
            running_mean: Param::buffer(format!("{name}.running_mean"), Tensor::zeros([channels])),
            running_var: Param::buffer(format!("{name}.running_var"), Tensor::full([channels], 1.0)),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.numel()
    }

    /// A layer whose scale and shift are frozen normalizes with its running
    /// statistics even in train mode and leaves them untouched.
    pub fn is_frozen(&self) -> bool {
        !self.gamma.value.requires_grad() && !self.beta.value.requires_grad()
    }

    /// Train mode normalizes with the biased batch variance and folds the
    /// batch statistics into the running ones; eval mode only reads them.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let &[batch, channels, h, w] = shape.as_slice() else {
            return Err(Error::contract("batchnorm2d", format!("expected [N,C,H,W], got {shape:?}")));
        };
        if channels != self.channels() {
            return Err(Error::contract(
                "batchnorm2d",
                format!("input has {channels} channels, layer {}", self.channels()),
            ));
        }
        let plane = h * w;
        let use_batch = mode == Mode::Train && !self.is_frozen();
        if use_batch && batch * plane < 2 {
            return Err(Error::contract(
                "batchnorm2d",
                "train mode needs at least two values per channel",
            ));
        }

        let (mean, var): (Vec<f64>, Vec<f64>) = if use_batch {
            let xd = tape.data(x);
            let count = (batch * plane) as f64;
            let mut mean = vec![0.0f64; channels];
            let mut var = vec![0.0f64; channels];
            for n in 0..batch {
                for c in 0..channels {
                    let start = (n * channels + c) * plane;
                    mean[c] += xd[start..start + plane].iter().map(|&v| v as f64).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for n in 0..batch {
                for c in 0..channels {
                    let start = (n * channels + c) * plane;
                    var[c] += xd[start..start + plane]
                        .iter()
                        .map(|&v| (v as f64 - mean[c]).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            (mean, var)
        } else {
            (
                self.running_mean.value.data().iter().map(|&v| v as f64).collect(),
                self.running_var.value.data().iter().map(|&v| v as f64).collect(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + self.eps as f64).sqrt()).collect();

        let gamma_v = self.gamma.register(tape);
        let beta_v = self.beta.register(tape);
        let out = {
            let xd = tape.data(x);
            let gd = tape.data(gamma_v);
            let bd = tape.data(beta_v);
            let mut out = vec![0.0f32; xd.len()];
            for n in 0..batch {
                for c in 0..channels {
                    let start = (n * channels + c) * plane;
                    let (scale, shift) = (gd[c] as f64 * inv_std[c], bd[c] as f64);
                    for i in start..start + plane {
                        out[i] = ((xd[i] as f64 - mean[c]) * scale + shift) as f32;
                    }
                }
            }
            out
        };

        if use_batch {
            let m = self.momentum;
            for (r, &b) in self.running_mean.value.data_mut().iter_mut().zip(&mean) {
                *r = (1.0 - m) * *r + m * b as f32;
            }
            for (r, &b) in self.running_var.value.data_mut().iter_mut().zip(&var) {
                *r = (1.0 - m) * *r + m * b as f32;
            }
        }

        let out = Tensor::new(shape, out)?;
        tape.record(
            "batchnorm2d",
            &[x, gamma_v, beta_v],
            out,
            BatchNormRule {
                channels,
                plane,
                mean,
                inv_std,
                batch_stats: use_batch,
            },
        )
    }

    pub fn params(&self) -> [&Param; 4] {
        [&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}
