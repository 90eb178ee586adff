//! IoU, mean IoU, confusion matrices and accuracy on hand-made inputs.
//!
//! cargo run --example metrics

use bss_vision::metrics::{accuracy, binarize, iou, miou, ConfusionMatrix};
use bss_vision::train::class_names;

fn main() -> anyhow::Result<()> {
    let truth = [0u8, 1, 1, 1, 0, 0, 1, 0];
    let prob = [0.1f32, 0.9, 0.7, 0.4, 0.6, 0.2, 0.8, 0.0];
    let pred = binarize(&prob, 0.5);
    println!("pred {pred:?}, IoU {:.4}", iou(&pred, &truth)?);

    let report = miou(&[(prob.to_vec(), truth.to_vec()), (vec![1.0; 8], truth.to_vec())], 0.5)?;
    print!("{}", report.to_csv(&["a".into(), "b".into()]));

    // Three classes where the model answers "normal" for everything.
    let truths = [0, 1, 1, 1, 2, 2, 1, 1];
    let preds = [1; 8];
    let cm = ConfusionMatrix::with_names(&preds, &truths, class_names(3))?;
    print!("{}", cm.to_csv());
    println!("accuracy {:.4}", accuracy(&cm)?);
    Ok(())
}
