//! Whole datasets: level allocation, train/test split, negatives, and the
//! manifest that indexes the files on disk.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::generate::{generate_negative, generate_specimen, SceneParams, SpecimenSpec};
use super::netpbm::{read_mask, read_ppm, write_mask, write_ppm};
use super::{Image, Mask};
use crate::error::{Error, Result};
use crate::metrics::{consolidate, Consolidated};
use crate::rng::{derive_seed, seeded};

pub const MANIFEST_HEADER: &str = "image,mask,bss,class,split";
pub const MANIFEST_NAME: &str = "manifest.csv";

/// Target distribution over consolidated classes or over form levels.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassMix {
    /// Weights for constipation, normal, loose; levels within a class are
    /// spread evenly.
    Classes([f64; 3]),
    /// Weights for levels 1..=k with k = 5 or 7.
    Levels(Vec<f64>),
}

impl ClassMix {
    pub fn uniform3() -> Self {
        ClassMix::Classes([1.0 / 3.0; 3])
    }

    pub fn uniform_levels(k: usize) -> Self {
        ClassMix::Levels(vec![1.0 / k as f64; k])
    }

    /// Class proportions of a real-world test set: 12 constipation, 201
    /// normal and 59 loose out of 272.
    pub fn skewed() -> Self {
        ClassMix::Classes([12.0 / 272.0, 201.0 / 272.0, 59.0 / 272.0])
    }

    fn weights(&self) -> &[f64] {
        match self {
            ClassMix::Classes(w) => w,
            ClassMix::Levels(w) => w,
        }
    }

    /// Number of classifier outputs this mix is labeled with.
    pub fn num_classes(&self) -> usize {
        self.weights().len()
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if let ClassMix::Levels(v) = self {
            if v.len() != 5 && v.len() != 7 {
                return Err(Error::Config(format!("a level mix needs 5 or 7 weights, got {}", v.len())));
            }
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config("mix weights must be finite and non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("mix weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

impl FromStr for ClassMix {
    type Err = Error;

    /// `uniform3`, `uniform5`, `uniform7`, `skewed`, or a comma-separated
    /// list of 3 (classes), 5 or 7 (levels) weights.
    fn from_str(s: &str) -> Result<Self> {
        let mix = match s.trim() {
            "uniform3" => ClassMix::uniform3(),
            "uniform5" => ClassMix::uniform_levels(5),
            "uniform7" => ClassMix::uniform_levels(7),
            "skewed" => ClassMix::skewed(),
            list => {
                let w: Vec<f64> = list
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("cannot parse mix '{s}'")))?;
                match w.len() {
                    3 => ClassMix::Classes([w[0], w[1], w[2]]),
                    5 | 7 => ClassMix::Levels(w),
                    k => return Err(Error::Config(format!("mix '{s}' has {k} weights; expected 3, 5 or 7"))),
                }
            }
        };
        mix.validate()?;
        Ok(mix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    /// Specimen images; negatives come on top.
    pub n: usize,
    pub mix: ClassMix,
    pub train_frac: f64,
    pub seed: u64,
    /// (height, width)
    pub image_size: (usize, usize),
    pub negatives: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n: 100,
            mix: ClassMix::uniform3(),
            train_frac: 0.7,
            seed: 0,
            image_size: (64, 64),
            negatives: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.train_frac) {
            return Err(Error::Config("train_frac must lie in [0, 1]".into()));
        }
        self.mix.validate()?;
        SceneParams {
            image_size: self.image_size,
            ..SceneParams::default()
        }
        .validate()
    }
}

/// One in-memory example. Negatives have an all-zero mask and no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub mask: Option<Mask>,
    pub bss: Option<u8>,
    pub class: Option<Consolidated>,
    pub split: Split,
}

impl Sample {
    /// Classifier target: the consolidated class for 3 outputs, `bss - 1`
    /// for 5 or 7.
    pub fn label(&self, num_classes: usize) -> Option<usize> {
        match num_classes {
            3 => self.class.map(Consolidated::index),
            _ => self.bss.map(|b| b as usize - 1).filter(|&l| l < num_classes),
        }
    }
}

/// Splits `total` into integer parts proportional to `weights` (largest
/// remainder, ties to the lower index).
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let short = total - parts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        parts[i] += 1;
    }
    parts
}

const CLASS_LEVELS: [&[u8]; 3] = [&[1, 2], &[3, 4, 5], &[6, 7]];

/// Form level of each specimen, grouped by stratum (class or level).
fn allocate_levels(n: usize, mix: &ClassMix) -> Vec<Vec<u8>> {
    let counts = apportion(n, mix.weights());
    match mix {
        ClassMix::Classes(_) => counts
            .iter()
            .zip(CLASS_LEVELS)
            .map(|(&c, levels)| (0..c).map(|j| levels[j % levels.len()]).collect())
            .collect(),
        ClassMix::Levels(_) => counts
            .iter()
            .enumerate()
            .map(|(l, &c)| vec![l as u8 + 1; c])
            .collect(),
    }
}

/// Blueprint of every sample: (level or None for a negative, split), in
/// sample-index order.
fn plan(cfg: &DatasetConfig) -> Vec<(Option<u8>, Split)> {
    let mut strata: Vec<Vec<Option<u8>>> = allocate_levels(cfg.n, &cfg.mix)
        .into_iter()
        .map(|s| s.into_iter().map(Some).collect())
        .collect();
    strata.push(vec![None; cfg.negatives]);
    let sizes: Vec<f64> = strata.iter().map(|s| s.len() as f64).collect();
    let total = cfg.n + cfg.negatives;
    let n_train = (total as f64 * cfg.train_frac).round() as usize;
    let train_per = apportion(n_train, &sizes);

    let mut rng = seeded(derive_seed(cfg.seed, u64::MAX));
    let mut items = Vec::with_capacity(total);
    for (stratum, &k) in strata.iter_mut().zip(&train_per) {
        stratum.shuffle(&mut rng);
        let k = k.min(stratum.len());
        items.extend(stratum.iter().enumerate().map(|(j, &lvl)| (lvl, if j < k { Split::Train } else { Split::Test })));
    }
    items.shuffle(&mut rng);
    // Negatives go last so specimen indices do not depend on their count.
    items.sort_by_key(|(lvl, _)| lvl.is_none());
    items
}

/// Generates specimen `index` of a dataset at the given level, retrying
/// with fresh parameters if a draw cannot be placed.
pub fn generate_indexed(level: u8, seed: u64, image_size: (usize, usize)) -> Result<(Image, Mask)> {
    let mut last = None;
    for attempt in 0..8u64 {
        let mut rng = seeded(derive_seed(seed, attempt));
        let scene = SceneParams::sample(image_size, &mut rng);
        let spec = SpecimenSpec::for_level(level, rng.random())?;
        match generate_specimen(&spec, &scene) {
            Ok(out) => return Ok(out),
            Err(e @ Error::Generation(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap())
}

fn negative_indexed(seed: u64, image_size: (usize, usize)) -> Result<(Image, Mask)> {
    let mut rng = seeded(seed);
    let scene = SceneParams::sample(image_size, &mut rng);
    generate_negative(&scene, rng.random())
}

/// Generates every sample and keeps it in memory. Sample `i` uses the seed
/// `derive_seed(cfg.seed, i)`.
pub fn generate_samples(cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    plan(cfg)
        .into_iter()
        .enumerate()
        .map(|(i, (level, split))| make_sample(cfg, i, level, split))
        .collect()
}

fn make_sample(cfg: &DatasetConfig, i: usize, level: Option<u8>, split: Split) -> Result<Sample> {
    let seed = derive_seed(cfg.seed, i as u64);
    Ok(match level {
        Some(l) => {
            let (image, mask) = generate_indexed(l, seed, cfg.image_size)?;
            Sample {
                image,
                mask: Some(mask),
                bss: Some(l),
                class: Some(consolidate(l)?),
                split,
            }
        }
        None => {
            let (image, mask) = negative_indexed(seed, cfg.image_size)?;
            Sample {
                image,
                mask: Some(mask),
                bss: None,
                class: None,
                split,
            }
        }
    })
}

/// One manifest row. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub bss: Option<u8>,
    pub class: Option<Consolidated>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory the record paths are relative to.
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
}

fn field<T>(v: &Option<T>, show: impl Fn(&T) -> String) -> String {
    v.as_ref().map(show).unwrap_or_else(|| "-".into())
}

impl DatasetManifest {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.image.display(),
                field(&r.mask, |p| p.display().to_string()),
                field(&r.bss, u8::to_string),
                field(&r.class, |c| c.name().to_string()),
                r.split
            ));
        }
        out
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Format {
            kind: "manifest",
            msg: format!("line {line}: {msg}"),
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == MANIFEST_HEADER => {}
            other => return Err(bad(1, format!("expected header '{MANIFEST_HEADER}', found {other:?}"))),
        }
        let mut records = Vec::new();
        for (k, line) in lines.enumerate() {
            let ln = k + 2;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(bad(ln, format!("expected 5 columns, found {}", cols.len())));
            }
            let opt = |s: &str| (s != "-").then(|| s.to_string());
            let bss = match opt(cols[2]) {
                None => None,
                Some(b) => match b.parse::<u8>() {
                    Ok(v) if (1..=7).contains(&v) => Some(v),
                    _ => return Err(bad(ln, format!("bad level '{b}'"))),
                },
            };
            let class = match opt(cols[3]) {
                None => None,
                Some(c) => Some(c.parse::<Consolidated>().map_err(|_| bad(ln, format!("bad class '{c}'")))?),
            };
            records.push(SampleRecord {
                image: PathBuf::from(cols[0]),
                mask: opt(cols[1]).map(PathBuf::from),
                bss,
                class,
                split: cols[4].parse().map_err(|_| bad(ln, format!("bad split '{}'", cols[4])))?,
            });
        }
        Ok(DatasetManifest {
            root: root.into(),
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Reads the records of one split (or all) into memory.
    pub fn load_samples(&self, split: Option<Split>) -> Result<Vec<Sample>> {
        self.records
            .iter()
            .filter(|r| split.is_none_or(|s| r.split == s))
            .map(|r| {
                let image = read_ppm(self.root.join(&r.image))?;
                let mask = r.mask.as_ref().map(|m| read_mask(self.root.join(m))).transpose()?;
                if let Some(m) = &mask {
                    if (m.width, m.height) != (image.width, image.height) {
                        return Err(Error::Data(format!("{}: mask size differs from image", r.image.display())));
                    }
                }
                Ok(Sample {
                    image,
                    mask,
                    bss: r.bss,
                    class: r.class,
                    split: r.split,
                })
            })
            .collect()
    }
}

/// Writes `images/`, `masks/` and `manifest.csv` under `out_dir`.
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out = out_dir.as_ref();
    for sub in ["images", "masks"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let width = (cfg.n + cfg.negatives).to_string().len().max(5);
    let mut records = Vec::new();
    for (i, (level, split)) in plan(cfg).into_iter().enumerate() {
        let s = make_sample(cfg, i, level, split)?;
        let image = PathBuf::from(format!("images/{i:0width$}.ppm"));
        let mask = PathBuf::from(format!("masks/{i:0width$}.pgm"));
        write_ppm(out.join(&image), &s.image)?;
        write_mask(out.join(&mask), s.mask.as_ref().expect("generated samples carry masks"))?;
        records.push(SampleRecord {
            image,
            mask: Some(mask),
            bss: s.bss,
            class: s.class,
            split,
        });
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        records,
    };
    manifest.save(out.join(MANIFEST_NAME))?;
    Ok(manifest)
}
