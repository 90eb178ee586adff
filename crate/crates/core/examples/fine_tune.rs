//! Partial fine-tuning: saves a classifier, reloads it and retrains only
//! the head with the feature extractor frozen.
//!
//! cargo run --release --example fine_tune

use bss_vision::data::{generate_samples, DatasetConfig, Split};
use bss_vision::models::{Model, ResNetConfig};
use bss_vision::train::{fit_classifier, init_resnet, load_checkpoint, save_checkpoint, TrainConfig};

fn main() -> anyhow::Result<()> {
    let data = DatasetConfig {
        n: 60,
        image_size: (32, 32),
        seed: 3,
        ..Default::default()
    };
    let (train, test): (Vec<_>, Vec<_>) =
        generate_samples(&data)?.into_iter().partition(|s| s.split == Split::Train);
    let net_cfg = ResNetConfig {
        input_size: (32, 32),
        base_channels: 8,
        ..Default::default()
    };
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("base.ssnn");
    save_checkpoint(&init_resnet(net_cfg, 10)?, &path)?;

    let mut net = init_resnet(net_cfg, 0)?;
    load_checkpoint(&mut net, &path)?;
    let before: Vec<_> = net.params().iter().map(|p| (p.name.clone(), p.value.data().to_vec())).collect();
    let cfg = TrainConfig {
        epochs: 2,
        freeze_prefix: Some("features".into()),
        ..TrainConfig::classification()
    };
    let history = fit_classifier(&mut net, 3, &train, &test, &cfg)?;
    for (p, (name, old)) in net.params().iter().zip(&before) {
        let moved = p.value.data() != old.as_slice();
        if moved || name.starts_with("classifier") {
            println!("{name:40} moved: {moved}");
        }
    }
    println!("final train loss {:.4}", history.last().unwrap().train_loss);
    Ok(())
}
