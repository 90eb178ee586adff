use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Vector-Jacobian product of one recorded operation.
///
/// Returns one entry per input; `None` where `needs_grad` is false.
pub trait BackwardRule {
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &[f32],
        needs_grad: &[bool],
    ) -> Vec<Option<Vec<f32>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    rule: Option<Box<dyn BackwardRule>>,
}

/// Wengert list of the operations of one forward pass.
///
/// Nodes are appended in execution order, so every node's inputs precede
/// it and a single reverse sweep visits each node once. A tape is used for
/// exactly one backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    recording: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            recording: true,
            consumed: false,
        }
    }

    /// A tape that evaluates but records no backward rules.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Tape::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf, keeping the tensor's `requires_grad` flag.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_grad(None);
        if !self.recording {
            tensor.set_requires_grad(false);
        }
        self.push(tensor, Vec::new(), None)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Registers a named parameter. Registering the same name twice returns
    /// the first handle.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let copy = Tensor::from_parts(value.shape().to_vec(), value.data().to_vec())
            .with_requires_grad(value.requires_grad());
        let v = self.leaf(copy);
        self.params.insert(name.to_owned(), v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub fn param_grad(&self, name: &str) -> Option<&[f32]> {
        self.params.get(name).and_then(|&v| self.grad(v))
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    /// Appends the result of an operation. Fails if any output value is
    /// not finite.
    pub fn record<R: BackwardRule + 'static>(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        output: Tensor,
        rule: R,
    ) -> Result<Var> {
        if output.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        let needs = self.recording && inputs.iter().any(|&v| self.requires_grad(v));
        let output = output.with_requires_grad(needs);
        if needs {
            Ok(self.push(output, inputs.to_vec(), Some(Box::new(rule))))
        } else {
            Ok(self.push(output, Vec::new(), None))
        }
    }

    fn push(&mut self, value: Tensor, inputs: Vec<Var>, rule: Option<Box<dyn BackwardRule>>) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            rule,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`. Gradients reaching a node from
    /// several consumers are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("backward", "loss is not on this tape"));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, has shape {:?}", self.shape(loss)),
            ));
        }
        if self.consumed {
            return Err(Error::contract("backward", "tape already consumed"));
        }
        self.consumed = true;
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.nodes[loss.0].value.set_grad(Some(vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(rule) = self.nodes[i].rule.as_ref() else {
                continue;
            };
            let Some(grad_out) = self.nodes[i].value.grad() else {
                continue;
            };
            let node = &self.nodes[i];
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = inputs.iter().map(|t| t.requires_grad()).collect();
            let grads = rule.backward(&inputs, &node.value, grad_out, &needs);
            debug_assert_eq!(grads.len(), inputs.len());

            let targets = node.inputs.clone();
            for (v, g) in targets.into_iter().zip(grads) {
                let Some(g) = g else { continue };
                let target = &mut self.nodes[v.0].value;
                if !target.requires_grad() {
                    continue;
                }
                match target.take_grad() {
                    None => target.set_grad(Some(g)),
                    Some(mut acc) => {
                        acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                        target.set_grad(Some(acc));
                    }
                }
            }
        }
        Ok(())
    }
}
