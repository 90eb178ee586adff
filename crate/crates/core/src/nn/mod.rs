//! Layers both networks are built from.
//!
//! Every trainable or persistent tensor is a [`Param`] carrying its full
//! dotted name, e.g. `encoder.1.0.conv.weight`. Names key the tape's
//! parameter leaves, optimizer state and checkpoint entries.

mod conv;
mod gemm;
mod linear;
mod norm;
mod pool;
mod residual;

use rand::Rng;

pub use conv::{conv2d, Conv2d};
pub use linear::{linear, Linear};
pub use norm::{BatchNorm2d, BN_EPS, BN_MOMENTUM};
pub use pool::{global_avg_pool, maxpool2d_with_indices, maxunpool2d, PoolIndices};
pub use residual::ResidualBlock;

use crate::autograd::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// `false` for persistent buffers such as batch-norm running statistics.
    pub trainable: bool,
}

impl Param {
    pub fn trainable(name: String, value: Tensor) -> Self {
        Param {
            name,
            value: value.with_requires_grad(true),
            trainable: true,
        }
    }

    pub fn buffer(name: String, value: Tensor) -> Self {
        Param {
            name,
            value,
            trainable: false,
        }
    }

    pub fn register(&self, tape: &mut Tape) -> Var {
        tape.param(&self.name, &self.value)
    }

    pub fn is_frozen(&self) -> bool {
        self.trainable && !self.value.requires_grad()
    }
}

/// Uniform in `±√(6 / fan_in)`.
pub fn he_uniform<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut R) -> Tensor {
    let shape = shape.into();
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("positive dims")
}

/// Conv 3×3 (same padding) → batch norm → relu.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new<R: Rng + ?Sized>(name: &str, in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        ConvBnRelu {
            conv: Conv2d::same3x3(&format!("{name}.conv"), in_ch, out_ch, rng),
            bn: BatchNorm2d::new(&format!("{name}.bn"), out_ch),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> crate::Result<Var> {
        let h = self.conv.forward(tape, x)?;
        let h = self.bn.forward(tape, h, mode)?;
        tape.relu(h)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.conv.params().into_iter().chain(self.bn.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.conv.params_mut().into_iter().chain(self.bn.params_mut()).collect()
    }
}
