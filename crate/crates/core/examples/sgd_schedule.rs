//! SGD with momentum under a step-decay schedule on a 1-D quadratic.
//!
//! cargo run --example sgd_schedule

use bss_vision::autograd::Tensor;
use bss_vision::nn::Param;
use bss_vision::train::{sgd_step, LrSchedule, SgdMomentum};

fn main() -> anyhow::Result<()> {
    let schedule = LrSchedule::new(0.05, 0.5, 10)?;
    let mut w = Param::trainable("w".into(), Tensor::new(vec![1], vec![4.0])?);
    let mut opt = SgdMomentum::new(schedule.initial_lr, 0.9, [&w])?;
    for epoch in 0..40 {
        let lr = schedule.lr_at_epoch(epoch);
        // f(w) = (w - 1)^2, so f'(w) = 2 (w - 1).
        let g = 2.0 * (w.value.data()[0] - 1.0);
        w.value.zero_grad();
        w.value.accumulate_grad(&[g])?;
        sgd_step(&mut opt, [&mut w], lr)?;
        if epoch % 5 == 4 {
            println!("epoch {epoch:2} lr {lr:.4} w {:.5} velocity {:.5}", w.value.data()[0], opt.velocity("w").unwrap()[0]);
        }
    }
    Ok(())
}
