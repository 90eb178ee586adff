//! Trains a small SegNet on 32x32 synthetic specimens and reports test IoU.
//!
//! cargo run --release --example train_segnet

use bss_vision::data::{generate_samples, DatasetConfig, Split};
use bss_vision::models::SegNetConfig;
use bss_vision::train::{evaluate_segmentation, train_segmentation, TrainConfig};

fn main() -> anyhow::Result<()> {
    let data = DatasetConfig {
        n: 120,
        image_size: (32, 32),
        seed: 1,
        ..Default::default()
    };
    let (train, test): (Vec<_>, Vec<_>) =
        generate_samples(&data)?.into_iter().partition(|s| s.split == Split::Train);
    let cfg = TrainConfig {
        epochs: 15,
        augment: true,
        ..TrainConfig::segmentation()
    };
    let net_cfg = SegNetConfig {
        input_size: (32, 32),
        base_channels: 8,
        ..Default::default()
    };
    let (mut net, history) = train_segmentation(&train, &test, &cfg, net_cfg)?;
    print!("{}", history.to_csv());
    let ev = evaluate_segmentation(&mut net, &test, 0.5)?;
    println!("test mIoU {:.4}, test BCE {:.4}", ev.report.miou, ev.loss);
    Ok(())
}
