//! Elementwise arithmetic, matrix product, activations and reductions.

use super::{BackwardRule, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Largest `f32` strictly below one.
const SIGMOID_HI: f32 = 1.0 - f32::EPSILON / 2.0;

struct Elementwise {
    kind: BinaryOp,
    scalar_rhs: bool,
}

impl BackwardRule for Elementwise {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let ga = needs[0].then(|| match self.kind {
            BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
            BinaryOp::Mul if self.scalar_rhs => g.iter().map(|&gi| gi * b[0]).collect(),
            BinaryOp::Mul => g.iter().zip(b).map(|(&gi, &bi)| gi * bi).collect(),
        });
        let gb = needs[1].then(|| {
            let per_elem: Vec<f32> = match self.kind {
                BinaryOp::Add => g.to_vec(),
                BinaryOp::Sub => g.iter().map(|&gi| -gi).collect(),
                BinaryOp::Mul => g.iter().zip(a).map(|(&gi, &ai)| gi * ai).collect(),
            };
            if self.scalar_rhs {
                vec![per_elem.iter().map(|&x| x as f64).sum::<f64>() as f32]
            } else {
                per_elem
            }
        });
        vec![ga, gb]
    }
}

struct Scale(f32);

impl BackwardRule for Scale {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![needs[0].then(|| g.iter().map(|&x| x * self.0).collect())]
    }
}

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl BackwardRule for MatMul {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let (m, k, n) = (self.m, self.k, self.n);
        // grad_a = g · bᵀ
        let ga = needs[0].then(|| {
            let mut out = vec![0.0; m * k];
            for i in 0..m {
                for p in 0..k {
                    let mut acc = 0.0f64;
                    for j in 0..n {
                        acc += g[i * n + j] as f64 * b[p * n + j] as f64;
                    }
                    out[i * k + p] = acc as f32;
                }
            }
            out
        });
        // grad_b = aᵀ · g
        let gb = needs[1].then(|| {
            let mut out = vec![0.0; k * n];
            for p in 0..k {
                for j in 0..n {
                    let mut acc = 0.0f64;
                    for i in 0..m {
                        acc += a[i * k + p] as f64 * g[i * n + j] as f64;
                    }
                    out[p * n + j] = acc as f32;
                }
            }
            out
        });
        vec![ga, gb]
    }
}

struct ActivationRule(Activation);

impl BackwardRule for ActivationRule {
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let grad = needs[0].then(|| match self.0 {
            Activation::Relu => g
                .iter()
                .zip(inputs[0].data())
                .map(|(&gi, &x)| if x > 0.0 { gi } else { 0.0 })
                .collect(),
            Activation::Sigmoid => g
                .iter()
                .zip(out.data())
                .map(|(&gi, &s)| gi * s * (1.0 - s))
                .collect(),
        });
        vec![grad]
    }
}

struct ReduceRule(Reduction);

impl BackwardRule for ReduceRule {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let n = inputs[0].numel();
        let fill = match self.0 {
            Reduction::Sum => g[0],
            Reduction::Mean => (g[0] as f64 / n as f64) as f32,
        };
        vec![needs[0].then(|| vec![fill; n])]
    }
}

struct Reshape;

impl BackwardRule for Reshape {
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![needs[0].then(|| g.to_vec())]
    }
}

impl Tape {
    /// `a ∘ b` for equal shapes, or with `b` a single-element tensor.
    pub fn elementwise(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let scalar_rhs = tb.numel() == 1 && ta.shape() != tb.shape();
        if !scalar_rhs && ta.shape() != tb.shape() {
            return Err(Error::contract(
                "elementwise",
                format!("shapes {:?} and {:?} differ and rhs is not scalar", ta.shape(), tb.shape()),
            ));
        }
        let f = |x: f32, y: f32| match kind {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
        };
        let data: Vec<f32> = if scalar_rhs {
            let y = tb.data()[0];
            ta.data().iter().map(|&x| f(x, y)).collect()
        } else {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.record("elementwise", &[a, b], out, Elementwise { kind, scalar_rhs })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    /// Multiplies by a constant that is not itself differentiated.
    pub fn scale(&mut self, a: Var, factor: f32) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| x * factor).collect());
        self.record("scale", &[a], out, Scale(factor))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (&[m, k], &[k2, n]) = (ta.shape(), tb.shape()) else {
            return Err(Error::contract(
                "matmul",
                format!("expected rank-2 operands, got {:?} and {:?}", ta.shape(), tb.shape()),
            ));
        };
        if k != k2 {
            return Err(Error::contract(
                "matmul",
                format!("inner dimensions differ: [{m},{k}] · [{k2},{n}]"),
            ));
        }
        let (da, db) = (ta.data(), tb.data());
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f64;
                for p in 0..k {
                    acc += da[i * k + p] as f64 * db[p * n + j] as f64;
                }
                out[i * n + j] = acc as f32;
            }
        }
        let out = Tensor::from_parts(vec![m, n], out);
        self.record("matmul", &[a, b], out, MatMul { m, k, n })
    }

    /// Sigmoid saturates at the representable values nearest to 0 and 1,
    /// so its output stays inside the open unit interval.
    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = match kind {
            Activation::Relu => t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            Activation::Sigmoid => t
                .data()
                .iter()
                .map(|&v| {
                    let s = 1.0 / (1.0 + (-(v as f64)).exp());
                    (s as f32).clamp(f32::MIN_POSITIVE, SIGMOID_HI)
                })
                .collect(),
        };
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.record("activation", &[x], out, ActivationRule(kind))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn reduce(&mut self, kind: Reduction, x: Var) -> Result<Var> {
        let t = self.value(x);
        let total: f64 = t.data().iter().map(|&v| v as f64).sum();
        let value = match kind {
            Reduction::Sum => total,
            Reduction::Mean => total / t.numel() as f64,
        };
        self.record("reduce", &[x], Tensor::scalar(value as f32), ReduceRule(kind))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduction::Sum, x)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduction::Mean, x)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape.to_vec())?;
        self.record("reshape", &[x], out, Reshape)
    }
}
