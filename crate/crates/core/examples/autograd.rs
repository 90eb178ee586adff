//! Records a tiny two-layer computation on a tape and prints the gradients.
//!
//! cargo run --example autograd

use bss_vision::autograd::{Tape, Tensor};

fn main() -> anyhow::Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5])?.with_requires_grad(true));
    let w = tape.leaf(Tensor::new(vec![3, 1], vec![0.2, -0.4, 0.1])?.with_requires_grad(true));

    let h = tape.matmul(x, w)?;
    let s = tape.sigmoid(h)?;
    let loss = tape.mean(s)?;
    tape.backward(loss)?;

    println!("loss    = {:.6}", tape.data(loss)[0]);
    println!("dL/dx   = {:?}", tape.grad(x).unwrap());
    println!("dL/dw   = {:?}", tape.grad(w).unwrap());

    // An inference tape records nothing and keeps only values.
    let mut inf = Tape::inference();
    let a = inf.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0])?);
    let r = inf.relu(a)?;
    println!("relu    = {:?} (tape length {})", inf.data(r), inf.len());
    Ok(())
}
