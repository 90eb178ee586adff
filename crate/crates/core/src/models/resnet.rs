use rand::Rng;

use super::{check_input, Model, INPUT_CHANNELS};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, ConvBnRelu, Linear, Mode, Param, ResidualBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResNetConfig {
    pub stages: usize,
    pub blocks_per_stage: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    pub input_size: (usize, usize),
}

impl Default for ResNetConfig {
    fn default() -> Self {
        ResNetConfig {
            stages: 3,
            blocks_per_stage: 2,
            base_channels: 16,
            num_classes: 3,
            input_size: (64, 64),
        }
    }
}

impl ResNetConfig {
    /// Four stages of two blocks at 64 base channels: the 18-layer topology.
    pub fn resnet18(num_classes: usize, input_size: (usize, usize)) -> Self {
        ResNetConfig {
            stages: 4,
            blocks_per_stage: 2,
            base_channels: 64,
            num_classes,
            input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.blocks_per_stage == 0 || self.base_channels == 0 {
            return Err(Error::Config(
                "resnet stages, blocks_per_stage and base_channels must be positive".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("resnet needs at least two classes".into()));
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(Error::Config("resnet input size must be positive".into()));
        }
        Ok(())
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }
}

/// Residual classifier: 3×3 stem, stages of basic blocks (each stage after
/// the first opens with a stride-2 projected block that doubles channels),
/// global average pooling, and a linear layer emitting logits.
#[derive(Debug, Clone)]
pub struct ResNet {
    cfg: ResNetConfig,
    stem: ConvBnRelu,
    stages: Vec<Vec<ResidualBlock>>,
    classifier: Linear,
}

impl ResNet {
    pub fn new<R: Rng + ?Sized>(cfg: ResNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let stem = ConvBnRelu::new("features.stem", INPUT_CHANNELS, cfg.base_channels, rng);
        let mut stages = Vec::with_capacity(cfg.stages);
        for s in 0..cfg.stages {
            let out = cfg.stage_channels(s);
            let blocks = (0..cfg.blocks_per_stage)
                .map(|b| {
                    let (inp, stride) = match (s, b) {
                        (0, 0) => (cfg.base_channels, 1),
                        (_, 0) => (cfg.stage_channels(s - 1), 2),
                        _ => (out, 1),
                    };
                    ResidualBlock::new(&format!("features.stage{s}.{b}"), inp, out, stride, rng)
                })
                .collect();
            stages.push(blocks);
        }
        let classifier = Linear::new("classifier", cfg.stage_channels(cfg.stages - 1), cfg.num_classes, rng);
        Ok(ResNet {
            cfg,
            stem,
            stages,
            classifier,
        })
    }

    pub fn config(&self) -> &ResNetConfig {
        &self.cfg
    }

    pub fn classifier_mut(&mut self) -> &mut Linear {
        &mut self.classifier
    }

    /// Convolution and linear layers on the main path: the stem, two per
    /// residual block, and the classifier. Shortcut projections are not
    /// counted, matching the usual depth convention.
    pub fn weighted_layers(&self) -> usize {
        1 + 2 * self.stages.iter().map(Vec::len).sum::<usize>() + 1
    }
}

impl Model for ResNet {
    fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let (h, w) = self.cfg.input_size;
        check_input("resnet", tape.shape(x), h, w)?;
        let mut h = self.stem.forward(tape, x, mode)?;
        for block in self.stages.iter_mut().flatten() {
            h = block.forward(tape, h, mode)?;
        }
        let pooled = global_avg_pool(tape, h)?;
        self.classifier.forward(tape, pooled)
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.stem.params();
        for block in self.stages.iter().flatten() {
            v.extend(block.params());
        }
        v.extend(self.classifier.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.stem.params_mut();
        for block in self.stages.iter_mut().flatten() {
            v.extend(block.params_mut());
        }
        v.extend(self.classifier.params_mut());
        v
    }
}
