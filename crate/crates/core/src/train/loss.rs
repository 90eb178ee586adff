//! Losses recorded as single tape nodes, accumulated in f64.

use crate::autograd::{BackwardRule, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[P_MIN, 1 - P_MIN]` before the logs.
pub const P_MIN: f64 = 1e-7;

struct Bce {
    target: Vec<f32>,
}

impl BackwardRule for Bce {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let n = self.target.len() as f64;
        let g0 = g[0] as f64;
        // The clamp passes gradients straight through, evaluated at the
        // clamped value, so a saturated prediction still gets pushed back.
        let grad = needs[0].then(|| {
            inputs[0]
                .data()
                .iter()
                .zip(&self.target)
                .map(|(&p, &t)| {
                    let p = (p as f64).clamp(P_MIN, 1.0 - P_MIN);
                    (g0 * (p - t as f64) / (p * (1.0 - p)) / n) as f32
                })
                .collect()
        });
        vec![grad]
    }
}

/// Mean binary cross-entropy of probabilities `pred` against 0/1 `target`.
pub fn bce_loss(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
    if tape.shape(pred) != target.shape() {
        return Err(Error::contract(
            "bce_loss",
            format!("pred {:?} vs target {:?}", tape.shape(pred), target.shape()),
        ));
    }
    if let Some(bad) = target.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::contract("bce_loss", format!("target value {bad} is not 0 or 1")));
    }
    let p = tape.data(pred);
    let total: f64 = p
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = (p as f64).clamp(P_MIN, 1.0 - P_MIN);
            if t == 1.0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    let loss = total / p.len() as f64;
    tape.record(
        "bce_loss",
        &[pred],
        Tensor::scalar(loss as f32),
        Bce {
            target: target.data().to_vec(),
        },
    )
}

struct CrossEntropy {
    /// Row-wise softmax minus one-hot, already divided by the batch size.
    grad: Vec<f32>,
}

impl BackwardRule for CrossEntropy {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![needs[0].then(|| self.grad.iter().map(|&x| x * g[0]).collect())]
    }
}

/// Mean softmax cross-entropy of `[N, K]` logits against class indices.
pub fn cross_entropy_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let &[n, k] = tape.shape(logits) else {
        return Err(Error::contract(
            "cross_entropy_loss",
            format!("logits must be [N, K], got {:?}", tape.shape(logits)),
        ));
    };
    if labels.len() != n {
        return Err(Error::contract(
            "cross_entropy_loss",
            format!("{} labels for a batch of {n}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract("cross_entropy_loss", format!("label {bad} outside 0..{k}")));
    }
    let z = tape.data(logits);
    let mut total = 0.0f64;
    let mut grad = vec![0f32; n * k];
    for (i, &label) in labels.iter().enumerate() {
        let row = &z[i * k..(i + 1) * k];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[label] as f64;
        for (j, &v) in row.iter().enumerate() {
            let p = (v as f64 - lse).exp();
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad[i * k + j] = ((p - onehot) / n as f64) as f32;
        }
    }
    tape.record(
        "cross_entropy_loss",
        &[logits],
        Tensor::scalar((total / n as f64) as f32),
        CrossEntropy { grad },
    )
}

/// Row-wise softmax of `[N, K]` logits, computed in f64.
pub fn softmax(logits: &Tensor) -> Result<Vec<Vec<f64>>> {
    let &[n, k] = logits.shape() else {
        return Err(Error::contract("softmax", format!("expected [N, K], got {:?}", logits.shape())));
    };
    Ok((0..n)
        .map(|i| {
            let row = &logits.data()[i * k..(i + 1) * k];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let e: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        })
        .collect())
}
