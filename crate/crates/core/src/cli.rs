//! Run configuration files and the commands behind the `bss` binary.
//!
//! A config file is UTF-8 `key=value` lines; `#` starts a comment. Values
//! are applied in order over the task defaults, so later lines win, and an
//! unknown key is an error. [`RunConfig::keys`] lists every key.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::netpbm::{read_ppm, write_mask, write_pgm};
use crate::data::{generate_dataset, ClassMix, DatasetConfig, DatasetManifest, EraseSpec, Mask, Split};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, binarize, cohens_kappa, Consolidated};
use crate::models::{Model, ResNetConfig, SegNetConfig};
use crate::train::{
    argmax, class_names, evaluate_classifier, evaluate_segmentation, fit_classifier, fit_segmentation, init_resnet,
    init_segnet, load_checkpoint, predict_classes, predict_masks, save_checkpoint, History, TrainConfig,
};

/// Environment variable read for the seed when no config or flag sets one.
pub const SEED_ENV: &str = "BSS_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Seg,
    Cls,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Seg => "seg",
            Task::Cls => "cls",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seg" => Ok(Task::Seg),
            "cls" => Ok(Task::Cls),
            _ => Err(Error::Config(format!("unknown task '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub segnet: SegNetConfig,
    pub resnet: ResNetConfig,
    pub data: DatasetConfig,
    /// Probability at or above which a pixel counts as foreground.
    pub threshold: f32,
}

const KEYS: &[(&str, &str)] = &[
    ("seed", "run seed for initialization, shuffling, augmentation and generation"),
    ("epochs", "training epochs"),
    ("batch_size", "images per SGD step"),
    ("lr", "initial learning rate"),
    ("lr_gamma", "learning-rate decay factor"),
    ("lr_step_epochs", "epochs between decays"),
    ("momentum", "SGD momentum"),
    ("freeze_prefix", "freeze parameters whose names start with this; empty for none"),
    ("augment", "true or false"),
    ("aug_hflip_prob", "horizontal flip probability"),
    ("aug_rotation", "rotation range in degrees, lo:hi or none"),
    ("aug_shear", "shear range in degrees, lo:hi or none"),
    ("aug_zoom", "zoom range, lo:hi or none"),
    ("aug_erase", "count@lo:hi erased rectangles (side fraction) or none"),
    ("image_size", "HEIGHTxWIDTH for data and both networks"),
    ("seg_stages", "SegNet encoder stages"),
    ("seg_base_channels", "SegNet first-stage channels"),
    ("seg_convs_per_stage", "SegNet convolutions per stage"),
    ("cls_stages", "ResNet stages"),
    ("cls_blocks_per_stage", "ResNet residual blocks per stage"),
    ("cls_base_channels", "ResNet first-stage channels"),
    ("num_classes", "classifier outputs: 3 classes, or 5 or 7 levels"),
    ("data_n", "specimen images to generate"),
    ("data_mix", "uniform3, uniform5, uniform7, skewed (12:201:59), or 3, 5 or 7 weights w1/w2/..."),
    ("data_train_frac", "fraction of samples in the train split"),
    ("data_negatives", "specimen-free images generated on top of data_n"),
    ("threshold", "foreground probability threshold"),
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_range(key: &str, v: &str) -> Result<Option<(f64, f64)>> {
    if v == "none" {
        return Ok(None);
    }
    let (lo, hi) = v
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("{key}: expected lo:hi or none, got '{v}'")))?;
    Ok(Some((parse(key, lo)?, parse(key, hi)?)))
}

fn show_range(r: Option<(f64, f64)>) -> String {
    r.map(|(a, b)| format!("{a}:{b}")).unwrap_or_else(|| "none".into())
}

fn parse_size(key: &str, v: &str) -> Result<(usize, usize)> {
    let (h, w) = v
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("{key}: expected HEIGHTxWIDTH, got '{v}'")))?;
    Ok((parse(key, h)?, parse(key, w)?))
}

fn show_mix(mix: &ClassMix) -> String {
    let w = match mix {
        ClassMix::Classes(w) => w.to_vec(),
        ClassMix::Levels(w) => w.clone(),
    };
    w.iter().map(f64::to_string).collect::<Vec<_>>().join("/")
}

impl RunConfig {
    pub fn defaults(task: Task) -> Self {
        RunConfig {
            train: match task {
                Task::Seg => TrainConfig::segmentation(),
                Task::Cls => TrainConfig::classification(),
            },
            segnet: SegNetConfig::default(),
            resnet: ResNetConfig::default(),
            data: DatasetConfig::default(),
            threshold: 0.5,
        }
    }

    /// Every accepted key with a short description.
    pub fn keys() -> &'static [(&'static str, &'static str)] {
        KEYS
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let t = &mut self.train;
        let aug = &mut t.augmentation;
        match key {
            "seed" => {
                t.seed = parse(key, v)?;
                self.data.seed = t.seed;
            }
            "epochs" => t.epochs = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "lr" => t.schedule.initial_lr = parse(key, v)?,
            "lr_gamma" => t.schedule.gamma = parse(key, v)?,
            "lr_step_epochs" => t.schedule.step_epochs = parse(key, v)?,
            "momentum" => t.momentum = parse(key, v)?,
            "freeze_prefix" => t.freeze_prefix = (!v.is_empty()).then(|| v.to_string()),
            "augment" => t.augment = parse(key, v)?,
            "aug_hflip_prob" => aug.hflip_prob = parse(key, v)?,
            "aug_rotation" => aug.rotation_degrees = parse_range(key, v)?,
            "aug_shear" => aug.shear_degrees = parse_range(key, v)?,
            "aug_zoom" => aug.crop_zoom = parse_range(key, v)?,
            "aug_erase" => {
                aug.erase = if v == "none" {
                    None
                } else {
                    let (count, range) = v
                        .split_once('@')
                        .ok_or_else(|| Error::Config(format!("{key}: expected count@lo:hi or none, got '{v}'")))?;
                    let size = parse_range(key, range)?
                        .ok_or_else(|| Error::Config(format!("{key}: missing size range")))?;
                    Some(EraseSpec {
                        count: parse(key, count)?,
                        size,
                    })
                }
            }
            "image_size" => {
                let s = parse_size(key, v)?;
                self.segnet.input_size = s;
                self.resnet.input_size = s;
                self.data.image_size = s;
            }
            "seg_stages" => self.segnet.stages = parse(key, v)?,
            "seg_base_channels" => self.segnet.base_channels = parse(key, v)?,
            "seg_convs_per_stage" => self.segnet.convs_per_stage = parse(key, v)?,
            "cls_stages" => self.resnet.stages = parse(key, v)?,
            "cls_blocks_per_stage" => self.resnet.blocks_per_stage = parse(key, v)?,
            "cls_base_channels" => self.resnet.base_channels = parse(key, v)?,
            "num_classes" => self.resnet.num_classes = parse(key, v)?,
            "data_n" => self.data.n = parse(key, v)?,
            "data_mix" => self.data.mix = v.replace('/', ",").parse()?,
            "data_train_frac" => self.data.train_frac = parse(key, v)?,
            "data_negatives" => self.data.negatives = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Current value of every key, in [`RunConfig::keys`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let a = &t.augmentation;
        let (h, w) = self.segnet.input_size;
        KEYS.iter()
            .map(|&(k, _)| {
                let v = match k {
                    "seed" => t.seed.to_string(),
                    "epochs" => t.epochs.to_string(),
                    "batch_size" => t.batch_size.to_string(),
                    "lr" => t.schedule.initial_lr.to_string(),
                    "lr_gamma" => t.schedule.gamma.to_string(),
                    "lr_step_epochs" => t.schedule.step_epochs.to_string(),
                    "momentum" => t.momentum.to_string(),
                    "freeze_prefix" => t.freeze_prefix.clone().unwrap_or_default(),
                    "augment" => t.augment.to_string(),
                    "aug_hflip_prob" => a.hflip_prob.to_string(),
                    "aug_rotation" => show_range(a.rotation_degrees),
                    "aug_shear" => show_range(a.shear_degrees),
                    "aug_zoom" => show_range(a.crop_zoom),
                    "aug_erase" => a
                        .erase
                        .map(|e| format!("{}@{}:{}", e.count, e.size.0, e.size.1))
                        .unwrap_or_else(|| "none".into()),
                    "image_size" => format!("{h}x{w}"),
                    "seg_stages" => self.segnet.stages.to_string(),
                    "seg_base_channels" => self.segnet.base_channels.to_string(),
                    "seg_convs_per_stage" => self.segnet.convs_per_stage.to_string(),
                    "cls_stages" => self.resnet.stages.to_string(),
                    "cls_blocks_per_stage" => self.resnet.blocks_per_stage.to_string(),
                    "cls_base_channels" => self.resnet.base_channels.to_string(),
                    "num_classes" => self.resnet.num_classes.to_string(),
                    "data_n" => self.data.n.to_string(),
                    "data_mix" => show_mix(&self.data.mix),
                    "data_train_frac" => self.data.train_frac.to_string(),
                    "data_negatives" => self.data.negatives.to_string(),
                    "threshold" => self.threshold.to_string(),
                    _ => unreachable!("every key is listed"),
                };
                (k, v)
            })
            .collect()
    }

    /// Applies `key=value` lines; errors carry the line number.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.segnet.validate()?;
        self.resnet.validate()?;
        self.data.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} must lie in [0, 1]", self.threshold)));
        }
        Ok(())
    }

    /// Task defaults, then `env_seed`, then the file, then `overrides`.
    pub fn resolve(
        task: Task,
        file: Option<&Path>,
        env_seed: Option<&str>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut cfg = RunConfig::defaults(task);
        if let Some(s) = env_seed {
            cfg.set("seed", s).map_err(|_| Error::Config(format!("{SEED_ENV}='{s}' is not a seed")))?;
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)
                .map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                    other => other,
                })?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Where `train` stores the resolved configuration beside a checkpoint.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

fn emit(out: &mut dyn Write, line: impl fmt::Display) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

/// `RESULT task=<t> metric=<m> value=<v>` plus optional extra pairs.
pub fn result_line(task: &str, metric: &str, value: f64, extra: &[(&str, String)]) -> String {
    let mut s = format!("RESULT task={task} metric={metric} value={value:.6}");
    for (k, v) in extra {
        s.push_str(&format!(" {k}={v}"));
    }
    s
}

pub fn gen_data(cfg: &DatasetConfig, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let manifest = generate_dataset(cfg, out_dir)?;
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in &manifest.records {
        let class = r.class.map(|c| c.name().to_string()).unwrap_or_else(|| "negative".into());
        *counts.entry((r.split.to_string(), class)).or_default() += 1;
    }
    for ((split, class), n) in &counts {
        emit(out, format!("split={split} class={class} count={n}"))?;
    }
    let train = manifest.records.iter().filter(|r| r.split == Split::Train).count();
    let test = manifest.records.len() - train;
    emit(
        out,
        result_line(
            "gen-data",
            "samples",
            manifest.records.len() as f64,
            &[("train", train.to_string()), ("test", test.to_string())],
        ),
    )
}

/// Rejects manifests that cannot feed `task`, naming the first bad line.
fn check_manifest(manifest: &DatasetManifest, task: Task, num_classes: usize) -> Result<()> {
    for (i, r) in manifest.records.iter().enumerate() {
        let line = i + 2;
        let ok = match task {
            Task::Seg => r.mask.is_some(),
            Task::Cls if num_classes == 3 => r.class.is_some(),
            Task::Cls => r.bss.is_some_and(|b| (b as usize) <= num_classes),
        };
        if !ok {
            let what = match task {
                Task::Seg => "mask".to_string(),
                Task::Cls => format!("label for {num_classes} classes"),
            };
            return Err(Error::Data(format!(
                "manifest line {line} ({}) has no {what}",
                r.image.display()
            )));
        }
    }
    Ok(())
}

fn build(task: Task, cfg: &RunConfig) -> Result<Box<dyn Model>> {
    Ok(match task {
        Task::Seg => Box::new(init_segnet(cfg.segnet, cfg.train.seed)?),
        Task::Cls => Box::new(init_resnet(cfg.resnet, cfg.train.seed)?),
    })
}

fn fmt_loss(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
}

pub struct TrainPaths<'a> {
    pub manifest: &'a Path,
    pub checkpoint: &'a Path,
    pub history: &'a Path,
    /// Start from these weights instead of a fresh initialization.
    pub init: Option<&'a Path>,
}

/// Trains, writes checkpoint, history and config sidecar, then reports the
/// task metric on the test split (or the train split when there is none).
pub fn train(task: Task, cfg: &RunConfig, paths: &TrainPaths<'_>, out: &mut dyn Write) -> Result<History> {
    let manifest = DatasetManifest::load(paths.manifest)?;
    check_manifest(&manifest, task, cfg.resnet.num_classes)?;
    let train = manifest.load_samples(Some(Split::Train))?;
    let test = manifest.load_samples(Some(Split::Test))?;
    if train.is_empty() {
        return Err(Error::Data(format!("{} has no train records", paths.manifest.display())));
    }
    let mut net = build(task, cfg)?;
    if let Some(init) = paths.init {
        load_checkpoint(net.as_mut(), init)?;
    }
    let history = match task {
        Task::Seg => fit_segmentation(net.as_mut(), &train, &test, &cfg.train)?,
        Task::Cls => fit_classifier(net.as_mut(), cfg.resnet.num_classes, &train, &test, &cfg.train)?,
    };
    save_checkpoint(net.as_ref(), paths.checkpoint)?;
    let sidecar = sidecar_path(paths.checkpoint);
    std::fs::write(&sidecar, cfg.to_text()).map_err(|e| Error::io(&sidecar, e))?;
    history.save(paths.history)?;

    let (split, eval_set) = if test.is_empty() { ("train", &train) } else { ("test", &test) };
    let last = history.last();
    let extra = |v: f64| {
        vec![
            ("split", split.to_string()),
            ("train_loss", fmt_loss(last.map(|r| r.train_loss))),
            ("test_loss", fmt_loss(last.and_then(|r| r.test_loss))),
            ("eval_loss", format!("{v:.6}")),
        ]
    };
    let line = match task {
        Task::Seg => {
            let ev = evaluate_segmentation(net.as_mut(), eval_set, cfg.threshold)?;
            result_line("seg", "miou", ev.report.miou, &extra(ev.loss))
        }
        Task::Cls => {
            let ev = evaluate_classifier(net.as_mut(), cfg.resnet.num_classes, eval_set)?;
            result_line("cls", "accuracy", accuracy(&ev.confusion)?, &extra(ev.loss))
        }
    };
    emit(out, line)?;
    Ok(history)
}

fn load_model(task: Task, cfg: &RunConfig, checkpoint: &Path) -> Result<Box<dyn Model>> {
    let mut net = build(task, cfg)?;
    load_checkpoint(net.as_mut(), checkpoint)?;
    Ok(net)
}

/// Per-image IoU CSV (seg) or confusion-matrix CSV (cls) goes to `report`,
/// or to `out` when no report path is given; the RESULT line follows.
pub fn eval(
    task: Task,
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest_path: &Path,
    split: Option<Split>,
    report: Option<&Path>,
    out: &mut dyn Write,
) -> Result<f64> {
    let manifest = DatasetManifest::load(manifest_path)?;
    check_manifest(&manifest, task, cfg.resnet.num_classes)?;
    let samples = manifest.load_samples(split)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("{} selects no records", manifest_path.display())));
    }
    let mut net = load_model(task, cfg, checkpoint)?;
    let (csv, metric, value, loss) = match task {
        Task::Seg => {
            let ev = evaluate_segmentation(net.as_mut(), &samples, cfg.threshold)?;
            let names: Vec<String> = manifest
                .records
                .iter()
                .filter(|r| split.is_none_or(|s| r.split == s))
                .map(|r| r.image.display().to_string())
                .collect();
            (ev.report.to_csv(&names), "miou", ev.report.miou, ev.loss)
        }
        Task::Cls => {
            let ev = evaluate_classifier(net.as_mut(), cfg.resnet.num_classes, &samples)?;
            (ev.confusion.to_csv(), "accuracy", accuracy(&ev.confusion)?, ev.loss)
        }
    };
    match report {
        Some(p) => std::fs::write(p, &csv).map_err(|e| Error::io(p, e))?,
        None => write!(out, "{csv}").map_err(|e| Error::io("<stdout>", e))?,
    }
    let split_name = split.map(|s| s.to_string()).unwrap_or_else(|| "all".into());
    emit(
        out,
        result_line(
            &task.to_string(),
            metric,
            value,
            &[
                ("split", split_name),
                ("n", samples.len().to_string()),
                ("loss", format!("{loss:.6}")),
            ],
        ),
    )?;
    Ok(value)
}

/// Writes the probability map rescaled to 0..255 and the thresholded mask.
pub fn predict_seg(
    cfg: &RunConfig,
    checkpoint: &Path,
    image: &Path,
    prob_out: &Path,
    mask_out: &Path,
    out: &mut dyn Write,
) -> Result<f64> {
    let img = read_ppm(image)?;
    let mut net = load_model(Task::Seg, cfg, checkpoint)?;
    let p = predict_masks(net.as_mut(), &[&img])?.remove(0);
    let gray: Vec<u8> = p.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    write_pgm(prob_out, img.width, img.height, &gray)?;
    let mask = Mask::new(img.width, img.height, binarize(&p, cfg.threshold))?;
    write_mask(mask_out, &mask)?;
    let frac = mask.coverage();
    emit(
        out,
        result_line(
            "predict-seg",
            "foreground",
            frac,
            &[("width", img.width.to_string()), ("height", img.height.to_string())],
        ),
    )?;
    Ok(frac)
}

/// Prints `class=<name>` and one `p_<name>=<prob>` line per class.
pub fn predict_cls(cfg: &RunConfig, checkpoint: &Path, image: &Path, out: &mut dyn Write) -> Result<Vec<f64>> {
    let img = read_ppm(image)?;
    let mut net = load_model(Task::Cls, cfg, checkpoint)?;
    let p = predict_classes(net.as_mut(), &[&img])?.remove(0);
    let names = class_names(cfg.resnet.num_classes);
    let best = argmax(&p);
    emit(out, format!("class={}", names[best]))?;
    for (n, v) in names.iter().zip(&p) {
        emit(out, format!("p_{n}={v:.6}"))?;
    }
    emit(out, result_line("predict-cls", "confidence", p[best], &[("class", names[best].clone())]))?;
    Ok(p)
}

/// Ratings are consolidated class names or levels 1..7; one file may not
/// mix the two. Blank lines are ignored.
pub fn parse_ratings(text: &str) -> Result<Vec<String>> {
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn rating_indices(a: &[String], b: &[String]) -> Result<(Vec<usize>, Vec<usize>, usize)> {
    let all = a.iter().chain(b);
    if all.clone().all(|s| s.parse::<Consolidated>().is_ok()) {
        let idx = |v: &[String]| v.iter().map(|s| s.parse::<Consolidated>().unwrap().index()).collect();
        return Ok((idx(a), idx(b), 3));
    }
    let level = |s: &String| s.parse::<u8>().ok().filter(|l| (1..=7).contains(l));
    if let Some(bad) = all.clone().find(|s| level(s).is_none()) {
        return Err(Error::Data(format!("unknown label '{bad}'")));
    }
    let idx = |v: &[String]| v.iter().map(|s| level(s).unwrap() as usize - 1).collect();
    Ok((idx(a), idx(b), 7))
}

pub fn kappa(file_a: &Path, file_b: &Path, out: &mut dyn Write) -> Result<f64> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let a = parse_ratings(&read(file_a)?)?;
    let b = parse_ratings(&read(file_b)?)?;
    if a.len() != b.len() {
        return Err(Error::Data(format!("rating files differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Data("rating files are empty".into()));
    }
    let (ia, ib, k) = rating_indices(&a, &b)?;
    let r = cohens_kappa(&ia, &ib, k)?;
    emit(out, format!("p_o={:.6}", r.p_o))?;
    emit(out, format!("p_e={:.6}", r.p_e))?;
    emit(out, format!("kappa={:.6}", r.kappa))?;
    emit(out, result_line("kappa", "kappa", r.kappa, &[("n", a.len().to_string())]))?;
    Ok(r.kappa)
}
