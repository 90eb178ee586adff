//! Central finite-difference oracle shared by the gradient tests.
//!
//! The scalar probed is `L = Σ wᵢ·outᵢ` with fixed positive weights `w`,
//! accumulated in f64 from the f32 outputs. Every stored output carries a
//! rounding error near 2⁻²⁴·|out|, so the central difference has an absolute
//! noise of roughly 1e-5 to 1e-4; fixtures keep checked gradients well above
//! that. Coordinates where the left and
//! right one-sided slopes disagree sit on a kink (relu, max) within ε and
//! are skipped; the skip fraction is reported so callers can bound it.
#![allow(dead_code)]

pub mod suite;

use bss_vision::autograd::{Tape, Tensor, Var};
use bss_vision::rng::seeded;
use rand::seq::SliceRandom;
use rand::Rng;

pub const EPS: f32 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
pub const FLOOR: f64 = 1e-4;

#[derive(Debug, Default, Clone)]
pub struct GradReport {
    pub max_rel: f64,
    pub checked: usize,
    pub kinks: usize,
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradReport {
    /// The first violated bound, if any.
    pub fn failure(&self) -> Option<String> {
        if self.checked == 0 {
            return Some("nothing checked".into());
        }
        if self.kinks * 20 > self.checked + self.kinks {
            return Some(format!("{} of {} coordinates on kinks", self.kinks, self.checked + self.kinks));
        }
        if self.max_rel >= REL_TOL {
            return Some(format!("max relative error {:.3e} at {:?}", self.max_rel, self.worst));
        }
        None
    }

    pub fn assert_ok(&self, what: &str) {
        if let Some(f) = self.failure() {
            panic!("{what}: {f}");
        }
    }
}

/// Evenly spaced values over `[lo, hi]` in random order, so no two entries
/// are within a finite-difference step of each other.
pub fn spaced_tensor(rng: &mut impl Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f32> = (0..n)
        .map(|i| lo + (hi - lo) * i as f32 / (n.max(2) - 1) as f32)
        .collect();
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals).unwrap()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `build` records a graph on the tape from the given input values and
/// returns its output together with the tape handle of each input.
pub fn grad_check<F>(inputs: &[Tensor], seed: u64, build: F) -> GradReport
where
    F: Fn(&mut Tape, &[Tensor]) -> (Var, Vec<Var>),
{
    let out_len = {
        let mut tape = Tape::new();
        let (y, _) = build(&mut tape, inputs);
        tape.value(y).numel()
    };
    let mut rng = seeded(seed ^ 0xA5A5);
    let weights: Vec<f32> = (0..out_len).map(|_| rng.random_range(0.5..1.5)).collect();
    grad_check_weighted(inputs, &weights, build)
}

/// Same check with caller-chosen output weights.
pub fn grad_check_weighted<F>(inputs: &[Tensor], weights: &[f32], build: F) -> GradReport
where
    F: Fn(&mut Tape, &[Tensor]) -> (Var, Vec<Var>),
{

    let loss_of = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let (y, _) = build(&mut tape, vals);
        tape.data(y)
            .iter()
            .zip(weights)
            .map(|(&o, &w)| o as f64 * w as f64)
            .sum()
    };

    // Analytic gradients.
    let grad_inputs: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_requires_grad(true)).collect();
    let mut tape = Tape::new();
    let (y, handles) = build(&mut tape, &grad_inputs);
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(Tensor::new(shape, weights.to_vec()).unwrap());
    let prod = tape.mul(y, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f32>> = handles
        .iter()
        .zip(inputs)
        .map(|(&h, t)| tape.grad(h).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut report = GradReport::default();
    let base = loss_of(inputs);
    for (ti, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let x0 = t.data()[e];
            let (xp, xm) = (x0 + EPS, x0 - EPS);
            let mut vals = inputs.to_vec();
            vals[ti].data_mut()[e] = xp;
            let lp = loss_of(&vals);
            vals[ti].data_mut()[e] = xm;
            let lm = loss_of(&vals);

            let right = (lp - base) / (xp as f64 - x0 as f64);
            let left = (base - lm) / (x0 as f64 - xm as f64);
            if (right - left).abs() > 0.05 * (right.abs() + left.abs()) + 1e-3 {
                report.kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (xp as f64 - xm as f64);
            let a = analytic[ti][e] as f64;
            let denom = a.abs() + numeric.abs();
            if denom <= FLOOR {
                continue;
            }
            report.checked += 1;
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = Some((ti, e, a, numeric));
            }
        }
    }
    report
}
