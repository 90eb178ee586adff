//! The two networks: an index-unpooling encoder-decoder for binary
//! specimen masks and a residual classifier for consistency classes.

mod resnet;
mod segnet;

pub use resnet::{ResNet, ResNetConfig};
pub use segnet::{SegNet, SegNetConfig};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Mode, Param};

/// Channels of the RGB images both networks consume.
pub const INPUT_CHANNELS: usize = 3;

pub trait Model {
    fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var>;

    fn params(&self) -> Vec<&Param>;

    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Total element count of every named tensor, buffers included.
    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    /// Marks parameters whose name starts with any of `prefixes` as frozen.
    fn freeze(&mut self, prefixes: &[&str]) {
        for p in self.params_mut() {
            if p.trainable {
                let frozen = prefixes.iter().any(|pre| !pre.is_empty() && p.name.starts_with(pre));
                p.value.set_requires_grad(!frozen);
            }
        }
    }

    /// Adds the gradients collected on `tape` into each parameter.
    fn accumulate_grads(&mut self, tape: &Tape) -> Result<()> {
        for p in self.params_mut() {
            if let Some(g) = tape.param_grad(&p.name) {
                p.value.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.value.zero_grad();
        }
    }

    /// Runs a forward pass on a tape of its own and returns the output.
    fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, xv, Mode::Eval)?;
        Ok(tape.value(y).clone())
    }
}

/// Either network, for code paths that handle both tasks.
#[derive(Debug, Clone)]
pub enum Network {
    SegNet(SegNet),
    ResNet(ResNet),
}

impl Network {
    pub fn as_model(&mut self) -> &mut dyn Model {
        match self {
            Network::SegNet(n) => n,
            Network::ResNet(n) => n,
        }
    }
}

impl Model for Network {
    fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        self.as_model().forward(tape, x, mode)
    }

    fn params(&self) -> Vec<&Param> {
        match self {
            Network::SegNet(n) => n.params(),
            Network::ResNet(n) => n.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.as_model().params_mut()
    }
}

pub(crate) fn check_input(op: &'static str, shape: &[usize], h: usize, w: usize) -> Result<usize> {
    match *shape {
        [n, INPUT_CHANNELS, ih, iw] if ih == h && iw == w => Ok(n),
        _ => Err(Error::contract(
            op,
            format!("expected input [N,{INPUT_CHANNELS},{h},{w}], got {shape:?}"),
        )),
    }
}
