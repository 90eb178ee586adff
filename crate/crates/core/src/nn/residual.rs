use rand::Rng;

use super::{BatchNorm2d, Conv2d, Mode, Param};
use crate::autograd::{Tape, Var};
use crate::error::Result;

/// Basic two-convolution residual block:
/// `relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))`.
///
/// The shortcut is the identity when stride is 1 and channel counts agree,
/// otherwise a 1×1 convolution with the block's stride.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub projection: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(name: &str, in_ch: usize, out_ch: usize, stride: usize, rng: &mut R) -> Self {
        let projection =
            (stride != 1 || in_ch != out_ch).then(|| Conv2d::new(&format!("{name}.proj"), in_ch, out_ch, 1, stride, 0, rng));
        ResidualBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), in_ch, out_ch, 3, stride, 1, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), out_ch),
            conv2: Conv2d::same3x3(&format!("{name}.conv2"), out_ch, out_ch, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), out_ch),
            projection,
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv1.forward(tape, x)?;
        let h = self.bn1.forward(tape, h, mode)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, h)?;
        let h = self.bn2.forward(tape, h, mode)?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(tape, x)?,
            None => x,
        };
        let sum = tape.add(h, shortcut)?;
        tape.relu(sum)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = Vec::new();
        v.extend(self.conv1.params());
        v.extend(self.bn1.params());
        v.extend(self.conv2.params());
        v.extend(self.bn2.params());
        if let Some(p) = &self.projection {
            v.extend(p.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = Vec::new();
        v.extend(self.conv1.params_mut());
        v.extend(self.bn1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        if let Some(p) = &mut self.projection {
            v.extend(p.params_mut());
        }
        v
    }
}
