//! Evaluation arithmetic: mask overlap, confusion matrices, accuracy and
//! inter-rater agreement, plus the seven-to-three consistency grouping.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

/// The three-way grouping of the seven-level stool form scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Consolidated {
    Constipation,
    Normal,
    Loose,
}

impl Consolidated {
    pub const ALL: [Consolidated; 3] = [Consolidated::Constipation, Consolidated::Normal, Consolidated::Loose];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Consolidated::Constipation => "constipation",
            Consolidated::Normal => "normal",
            Consolidated::Loose => "loose",
        }
    }
}

impl fmt::Display for Consolidated {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Consolidated {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "constipation" | "constipated" | "c" => Ok(Consolidated::Constipation),
            "normal" | "n" => Ok(Consolidated::Normal),
            "loose" | "l" => Ok(Consolidated::Loose),
            other => Err(Error::Data(format!("unknown class label `{other}`"))),
        }
    }
}

/// 1–2 constipation, 3–5 normal, 6–7 loose.
pub fn consolidate(bss: u8) -> Result<Consolidated> {
    match bss {
        1 | 2 => Ok(Consolidated::Constipation),
        3..=5 => Ok(Consolidated::Normal),
        6 | 7 => Ok(Consolidated::Loose),
        _ => Err(Error::contract("consolidate", format!("level {bss} outside 1..=7"))),
    }
}

/// Pixels at or above `threshold` become foreground.
pub fn binarize(prob: &[f32], threshold: f32) -> Vec<u8> {
    prob.iter().map(|&p| u8::from(p >= threshold)).collect()
}

/// Intersection over union of two binary masks; two empty masks agree
/// perfectly.
pub fn iou(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(
            "iou",
            format!("mask sizes differ: {} vs {}", a.len(), b.len()),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x != 0, y != 0);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IoUReport {
    pub per_image: Vec<f64>,
    /// Unweighted mean of `per_image`.
    pub miou: f64,
}

impl IoUReport {
    pub fn from_ious(per_image: Vec<f64>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::contract("miou", "no images to average"));
        }
        let miou = per_image.iter().sum::<f64>() / per_image.len() as f64;
        Ok(IoUReport { per_image, miou })
    }

    /// `image,iou` rows followed by a `mean` row. `names` labels the rows;
    /// missing names fall back to the row index.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("image,iou\n");
        for (i, v) in self.per_image.iter().enumerate() {
            match names.get(i) {
                Some(n) => writeln!(out, "{n},{v:.6}"),
                None => writeln!(out, "{i},{v:.6}"),
            }
            .unwrap();
        }
        writeln!(out, "mean,{:.6}", self.miou).unwrap();
        out
    }
}

/// Binarizes each prediction at `threshold` and averages per-image IoU.
pub fn miou<P, T>(pairs: &[(P, T)], threshold: f32) -> Result<IoUReport>
where
    P: AsRef<[f32]>,
    T: AsRef<[u8]>,
{
    let ious = pairs
        .iter()
        .map(|(p, t)| iou(&binarize(p.as_ref(), threshold), t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    IoUReport::from_ious(ious)
}

/// Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
    classes: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let k = classes.len();
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
            classes,
        }
    }

    /// Class names default to their indices.
    pub fn from_predictions(preds: &[usize], truths: &[usize], k: usize) -> Result<Self> {
        Self::with_names(preds, truths, (0..k).map(|i| i.to_string()).collect())
    }

    pub fn with_names(preds: &[usize], truths: &[usize], classes: Vec<String>) -> Result<Self> {
        if preds.len() != truths.len() {
            return Err(Error::contract(
                "confusion_matrix",
                format!("{} predictions for {} truths", preds.len(), truths.len()),
            ));
        }
        let mut cm = ConfusionMatrix::new(classes);
        for (&p, &t) in preds.iter().zip(truths) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::contract(
                "confusion_matrix",
                format!("class ({truth}, {pred}) outside 0..{}", self.k),
            ));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    pub fn column_total(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// A `(k+1)×(k+1)` grid: a header of predicted class names, then one
    /// row per true class led by its name.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth\\pred");
        for c in &self.classes {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for t in 0..self.k {
            out.push_str(&self.classes[t]);
            for v in self.row(t) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Trace over total.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::contract("accuracy", "confusion matrix is empty")),
        n => Ok(cm.trace() as f64 / n as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaResult {
    pub p_o: f64,
    pub p_e: f64,
    pub kappa: f64,
}

pub fn cohens_kappa(a: &[usize], b: &[usize], k: usize) -> Result<KappaResult> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::contract(
            "cohens_kappa",
            format!("rating lists must be equal and non-empty ({} vs {})", a.len(), b.len()),
        ));
    }
    if let Some(&v) = a.iter().chain(b).find(|&&v| v >= k) {
        return Err(Error::contract("cohens_kappa", format!("rating {v} outside 0..{k}")));
    }
    let n = a.len() as f64;
    let mut ma = vec![0u64; k];
    let mut mb = vec![0u64; k];
    let mut agree = 0u64;
    for (&x, &y) in a.iter().zip(b) {
        ma[x] += 1;
        mb[y] += 1;
        agree += u64::from(x == y);
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = ma.iter().zip(&mb).map(|(&x, &y)| (x as f64 / n) * (y as f64 / n)).sum();
    if p_e >= 1.0 {
        return Err(Error::UndefinedKappa);
    }
    Ok(KappaResult {
        p_o,
        p_e,
        kappa: (p_o - p_e) / (1.0 - p_e),
    })
}
