//! Trains a small ResNet on the three consolidated classes and prints the
//! test confusion matrix.
//!
//! cargo run --release --example train_resnet

use bss_vision::data::{generate_samples, DatasetConfig, Split};
use bss_vision::metrics::accuracy;
use bss_vision::models::ResNetConfig;
use bss_vision::train::{evaluate_classifier, train_classifier, TrainConfig};

fn main() -> anyhow::Result<()> {
    let data = DatasetConfig {
        n: 240,
        image_size: (32, 32),
        seed: 2,
        ..Default::default()
    };
    let (train, test): (Vec<_>, Vec<_>) =
        generate_samples(&data)?.into_iter().partition(|s| s.split == Split::Train);
    let cfg = TrainConfig {
        epochs: 8,
        ..TrainConfig::classification()
    };
    let net_cfg = ResNetConfig {
        input_size: (32, 32),
        base_channels: 8,
        ..Default::default()
    };
    let (mut net, history) = train_classifier(&train, &test, &cfg, net_cfg)?;
    print!("{}", history.to_csv());
    let ev = evaluate_classifier(&mut net, 3, &test)?;
    print!("{}", ev.confusion.to_csv());
    println!("accuracy {:.4}", accuracy(&ev.confusion)?);
    Ok(())
}
