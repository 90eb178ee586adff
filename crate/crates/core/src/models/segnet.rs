use std::rc::Rc;

use rand::Rng;

use super::{check_input, Model, INPUT_CHANNELS};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{maxpool2d_with_indices, maxunpool2d, Conv2d, ConvBnRelu, Mode, Param, PoolIndices};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegNetConfig {
    pub stages: usize,
    pub base_channels: usize,
    pub input_size: (usize, usize),
    pub convs_per_stage: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        SegNetConfig {
            stages: 3,
            base_channels: 16,
            input_size: (64, 64),
            convs_per_stage: 2,
        }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("segnet stages must be at least 1".into()));
        }
        if self.base_channels < 4 {
            return Err(Error::Config("segnet base_channels must be at least 4".into()));
        }
        if self.convs_per_stage == 0 {
            return Err(Error::Config("segnet convs_per_stage must be at least 1".into()));
        }
        let div = 1usize << self.stages;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "segnet input size {h}x{w} must be divisible by 2^stages = {div}"
            )));
        }
        Ok(())
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }
}

/// Encoder-decoder segmenter. Each encoder stage ends in a 2×2 max pool
/// whose argmax indices are handed to the mirrored decoder stage, which
/// unpools with them before its convolutions. A 1×1 convolution and a
/// sigmoid produce the per-pixel foreground probability.
#[derive(Debug, Clone)]
pub struct SegNet {
    cfg: SegNetConfig,
    encoder: Vec<Vec<ConvBnRelu>>,
    /// Stored deepest stage first, in execution order.
    decoder: Vec<Vec<ConvBnRelu>>,
    head: Conv2d,
}

impl SegNet {
    pub fn new<R: Rng + ?Sized>(cfg: SegNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut encoder = Vec::with_capacity(cfg.stages);
        for s in 0..cfg.stages {
            let out = cfg.stage_channels(s);
            let mut stage = Vec::with_capacity(cfg.convs_per_stage);
            for i in 0..cfg.convs_per_stage {
                let inp = match (s, i) {
                    (0, 0) => INPUT_CHANNELS,
                    (_, 0) => cfg.stage_channels(s - 1),
                    _ => out,
                };
                stage.push(ConvBnRelu::new(&format!("encoder.{s}.{i}"), inp, out, rng));
            }
            encoder.push(stage);
        }

        let mut decoder = Vec::with_capacity(cfg.stages);
        for s in (0..cfg.stages).rev() {
            let width = cfg.stage_channels(s);
            let last_out = if s == 0 { width } else { cfg.stage_channels(s - 1) };
            let mut stage = Vec::with_capacity(cfg.convs_per_stage);
            for i in 0..cfg.convs_per_stage {
                let out = if i + 1 == cfg.convs_per_stage { last_out } else { width };
                stage.push(ConvBnRelu::new(&format!("decoder.{s}.{i}"), width, out, rng));
            }
            decoder.push(stage);
        }

        let head = Conv2d::new("head", cfg.base_channels, 1, 1, 1, 0, rng);
        Ok(SegNet {
            cfg,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &SegNetConfig {
        &self.cfg
    }

    pub fn head_mut(&mut self) -> &mut Conv2d {
        &mut self.head
    }

    /// Forward pass that also returns the pooling indices of every encoder
    /// stage, shallowest first.
    pub fn forward_with_indices(
        &mut self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<Rc<PoolIndices>>)> {
        let (h, w) = self.cfg.input_size;
        check_input("segnet", tape.shape(x), h, w)?;
        let mut indices = Vec::with_capacity(self.cfg.stages);
        let mut h = x;
        for stage in &mut self.encoder {
            for layer in stage.iter_mut() {
                h = layer.forward(tape, h, mode)?;
            }
            let (pooled, idx) = maxpool2d_with_indices(tape, h)?;
            indices.push(idx);
            h = pooled;
        }
        for (stage, idx) in self.decoder.iter_mut().zip(indices.iter().rev()) {
            h = maxunpool2d(tape, h, idx)?;
            for layer in stage.iter_mut() {
                h = layer.forward(tape, h, mode)?;
            }
        }
        let logits = self.head.forward(tape, h)?;
        Ok((tape.sigmoid(logits)?, indices))
    }
}

impl Model for SegNet {
    fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        Ok(self.forward_with_indices(tape, x, mode)?.0)
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for layer in self.encoder.iter().chain(&self.decoder).flatten() {
            v.extend(layer.params());
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()).flatten() {
            v.extend(layer.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}
