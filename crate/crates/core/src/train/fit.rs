use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use super::loss::{bce_loss, cross_entropy_loss, softmax};
use super::optim::{LrSchedule, SgdMomentum};
use crate::autograd::{Tape, Tensor};
use crate::data::{augment, images_to_tensor, masks_to_tensor, AugmentationSpec, Image, Mask, Sample};
use crate::error::{Error, Result};
use crate::metrics::{binarize, iou, ConfusionMatrix, Consolidated, IoUReport};
use crate::models::{Model, ResNet, ResNetConfig, SegNet, SegNetConfig};
use crate::nn::Mode;
use crate::rng::{derive_seed, seeded};

pub const HISTORY_HEADER: &str = "epoch,train_loss,test_loss,lr";

/// Images per forward pass when evaluating.
const EVAL_BATCH: usize = 16;

// Independent PRNG streams derived from the run seed.
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1 << 32;
const AUGMENT_STREAM: u64 = 2 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    /// Parameters whose names start with this are left untouched.
    pub freeze_prefix: Option<String>,
    pub augment: bool,
    /// Transform ranges used when `augment` is set.
    pub augmentation: AugmentationSpec,
}

impl TrainConfig {
    /// 100 epochs from lr 0.05.
    pub fn segmentation() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            seed: 0,
            schedule: LrSchedule {
                initial_lr: 0.05,
                gamma: 0.5,
                step_epochs: 10,
            },
            momentum: 0.9,
            freeze_prefix: None,
            augment: false,
            augmentation: AugmentationSpec::default(),
        }
    }

    /// 30 epochs from lr 0.001.
    pub fn classification() -> Self {
        TrainConfig {
            epochs: 30,
            schedule: LrSchedule {
                initial_lr: 0.001,
                ..Self::segmentation().schedule
            },
            ..Self::segmentation()
        }
    }

    /// Zero epochs is accepted and trains nothing.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        self.schedule.validate()?;
        self.augmentation.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's training batches, as trained.
    pub train_loss: f64,
    /// Eval-mode loss over the test set after the epoch.
    pub test_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// An absent test loss is written as an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.epochs {
            let test = r.test_loss.map(|t| format!("{t:.6}")).unwrap_or_default();
            writeln!(out, "{},{:.6},{test},{}", r.epoch, r.train_loss, r.lr).unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy)]
enum Target {
    Mask,
    Label(usize),
}

fn check_samples(samples: &[Sample], target: Target, what: &str) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        match target {
            Target::Mask if s.mask.is_none() => {
                return Err(Error::Data(format!("{what} sample {i} has no mask")));
            }
            Target::Label(k) if s.label(k).is_none() => {
                return Err(Error::Data(format!("{what} sample {i} has no label for {k} classes")));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Mean loss of one batch on `tape`.
fn batch_loss(
    tape: &mut Tape,
    net: &mut dyn Model,
    images: &[&Image],
    masks: &[&Mask],
    labels: &[usize],
    target: Target,
    mode: Mode,
) -> Result<crate::autograd::Var> {
    let x = tape.constant(images_to_tensor(images)?);
    let y = net.forward(tape, x, mode)?;
    let loss = match target {
        Target::Mask => bce_loss(tape, y, &masks_to_tensor(masks)?)?,
        Target::Label(_) => cross_entropy_loss(tape, y, labels)?,
    };
    if !tape.data(loss)[0].is_finite() {
        return Err(Error::NonFinite { op: "training loss" });
    }
    Ok(loss)
}

/// Eval-mode loss over `samples`, weighted by batch size.
fn eval_loss(net: &mut dyn Model, samples: &[Sample], target: Target) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        let masks: Vec<&Mask> = chunk.iter().filter_map(|s| s.mask.as_ref()).collect();
        let labels: Vec<usize> = match target {
            Target::Label(k) => chunk.iter().filter_map(|s| s.label(k)).collect(),
            Target::Mask => vec![],
        };
        let mut tape = Tape::inference();
        let l = batch_loss(&mut tape, net, &images, &masks, &labels, target, Mode::Eval)?;
        total += tape.data(l)[0] as f64 * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

fn fit(net: &mut dyn Model, train: &[Sample], test: &[Sample], cfg: &TrainConfig, target: Target) -> Result<History> {
    cfg.validate()?;
    check_samples(train, target, "train")?;
    check_samples(test, target, "test")?;
    let mut history = History::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if train.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    if let Some(prefix) = &cfg.freeze_prefix {
        net.freeze(&[prefix]);
    }
    let mut opt = SgdMomentum::new(cfg.schedule.initial_lr, cfg.momentum, net.params())?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at_epoch(epoch);
        opt.lr = lr;
        order.shuffle(&mut seeded(derive_seed(cfg.seed, SHUFFLE_STREAM + epoch as u64)));
        let aug_seed = derive_seed(cfg.seed, AUGMENT_STREAM + epoch as u64);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut images = Vec::with_capacity(batch.len());
            let mut masks = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &train[i];
                let mask = match target {
                    Target::Mask => s.mask.as_ref(),
                    Target::Label(_) => None,
                };
                if cfg.augment {
                    let (img, m) = augment(&s.image, mask, &cfg.augmentation, derive_seed(aug_seed, i as u64))?;
                    images.push(img);
                    masks.extend(m);
                } else {
                    images.push(s.image.clone());
                    masks.extend(mask.cloned());
                }
                if let Target::Label(k) = target {
                    labels.extend(s.label(k));
                }
            }
            let image_refs: Vec<&Image> = images.iter().collect();
            let mask_refs: Vec<&Mask> = masks.iter().collect();
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, net, &image_refs, &mask_refs, &labels, target, Mode::Train)?;
            total += tape.data(loss)[0] as f64 * batch.len() as f64;
            tape.backward(loss)?;
            net.accumulate_grads(&tape)?;
            opt.step(net.params_mut())?;
            net.zero_grad();
        }
        let test_loss = if test.is_empty() {
            None
        } else {
            Some(eval_loss(net, test, target)?)
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            test_loss,
            lr,
        });
    }
    Ok(history)
}

/// Trains an existing segmentation network in place, e.g. one restored
/// from a checkpoint.
pub fn fit_segmentation(net: &mut dyn Model, train: &[Sample], test: &[Sample], cfg: &TrainConfig) -> Result<History> {
    fit(net, train, test, cfg, Target::Mask)
}

/// Trains an existing classifier with `num_classes` outputs in place.
pub fn fit_classifier(
    net: &mut dyn Model,
    num_classes: usize,
    train: &[Sample],
    test: &[Sample],
    cfg: &TrainConfig,
) -> Result<History> {
    fit(net, train, test, cfg, Target::Label(num_classes))
}

/// The weights a training run with this seed starts from.
pub fn init_segnet(net_cfg: SegNetConfig, seed: u64) -> Result<SegNet> {
    SegNet::new(net_cfg, &mut seeded(derive_seed(seed, INIT_STREAM)))
}

pub fn init_resnet(net_cfg: ResNetConfig, seed: u64) -> Result<ResNet> {
    ResNet::new(net_cfg, &mut seeded(derive_seed(seed, INIT_STREAM)))
}

/// Initializes a SegNet from `cfg.seed` and minimizes BCE against the masks.
pub fn train_segmentation(
    train: &[Sample],
    test: &[Sample],
    cfg: &TrainConfig,
    net_cfg: SegNetConfig,
) -> Result<(SegNet, History)> {
    let mut net = init_segnet(net_cfg, cfg.seed)?;
    let history = fit_segmentation(&mut net, train, test, cfg)?;
    Ok((net, history))
}

/// Initializes a ResNet from `cfg.seed` and minimizes cross-entropy against
/// the sample labels.
pub fn train_classifier(
    train: &[Sample],
    test: &[Sample],
    cfg: &TrainConfig,
    net_cfg: ResNetConfig,
) -> Result<(ResNet, History)> {
    let mut net = init_resnet(net_cfg, cfg.seed)?;
    let history = fit_classifier(&mut net, net_cfg.num_classes, train, test, cfg)?;
    Ok((net, history))
}

/// Foreground probability maps, one `H * W` vector per image.
pub fn predict_masks(net: &mut dyn Model, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let y = net.predict(&images_to_tensor(chunk)?)?;
        let per = y.numel() / chunk.len();
        out.extend(y.data().chunks(per).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Softmax class probabilities per image.
pub fn predict_classes(net: &mut dyn Model, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        out.extend(softmax(&net.predict(&images_to_tensor(chunk)?)?)?);
    }
    Ok(out)
}

pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegEvaluation {
    pub loss: f64,
    pub report: IoUReport,
    /// Fraction of all pixels predicted as foreground.
    pub foreground_fraction: f64,
}

pub fn evaluate_segmentation(net: &mut dyn Model, samples: &[Sample], threshold: f32) -> Result<SegEvaluation> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    check_samples(samples, Target::Mask, "eval")?;
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let probs = predict_masks(net, &images)?;
    let mut ious = Vec::with_capacity(samples.len());
    let (mut fg, mut px) = (0usize, 0usize);
    let mut loss = 0.0;
    for (p, s) in probs.iter().zip(samples) {
        let truth = s.mask.as_ref().unwrap();
        let pred = binarize(p, threshold);
        fg += pred.iter().filter(|&&v| v == 1).count();
        px += pred.len();
        ious.push(iou(&pred, &truth.data)?);
        let mut tape = Tape::inference();
        let pv = tape.constant(Tensor::new(vec![p.len()], p.clone())?);
        let target = Tensor::new(vec![p.len()], truth.data.iter().map(|&v| v as f32).collect())?;
        let l = bce_loss(&mut tape, pv, &target)?;
        loss += tape.data(l)[0] as f64;
    }
    Ok(SegEvaluation {
        loss: loss / samples.len() as f64,
        report: IoUReport::from_ious(ious)?,
        foreground_fraction: fg as f64 / px as f64,
    })
}

/// Fraction of pixels at or above `threshold` over every image.
pub fn foreground_fraction(net: &mut dyn Model, images: &[&Image], threshold: f32) -> Result<f64> {
    let probs = predict_masks(net, images)?;
    let px: usize = probs.iter().map(Vec::len).sum();
    let fg = probs.iter().flatten().filter(|&&p| p >= threshold).count();
    Ok(fg as f64 / px.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsEvaluation {
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

/// Class names for `k` outputs: the consolidated classes for 3, levels otherwise.
pub fn class_names(k: usize) -> Vec<String> {
    if k == 3 {
        Consolidated::ALL.iter().map(|c| c.name().to_string()).collect()
    } else {
        (1..=k).map(|l| format!("bss{l}")).collect()
    }
}

pub fn evaluate_classifier(net: &mut dyn Model, num_classes: usize, samples: &[Sample]) -> Result<ClsEvaluation> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    check_samples(samples, Target::Label(num_classes), "eval")?;
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let probs = predict_classes(net, &images)?;
    let truths: Vec<usize> = samples.iter().map(|s| s.label(num_classes).unwrap()).collect();
    let predictions: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let loss = probs
        .iter()
        .zip(&truths)
        .map(|(p, &t)| -p[t].max(1e-300).ln())
        .sum::<f64>()
        / samples.len() as f64;
    let confusion = ConfusionMatrix::with_names(&predictions, &truths, class_names(num_classes))?;
    Ok(ClsEvaluation {
        loss,
        confusion,
        predictions,
    })
}

/// Eval-mode BCE over samples with masks, without augmentation.
pub fn segmentation_loss(net: &mut dyn Model, samples: &[Sample]) -> Result<f64> {
    check_samples(samples, Target::Mask, "eval")?;
    eval_loss(net, samples, Target::Mask)
}
