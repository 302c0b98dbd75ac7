//! Trains the two-branch segmentation network on in-memory synthetic
//! scenes with each fusion strategy and reports test mIoU.
//!
//! `cargo run --release --example train_toy -- [iterations]`

use roadfuse::net::{evaluate, train, Dataset, Fusion, Modality, NetConfig};
use roadfuse::synth::DEFAULT_NOISE_SIGMA;

fn main() -> anyhow::Result<()> {
    let iterations = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(150);
    let data = Dataset::synthetic(40, 2024, DEFAULT_NOISE_SIGMA, Modality::Tdisp)?;
    println!("{} train / {} val / {} test scenes", data.train.len(), data.val.len(), data.test.len());
    for fusion in Fusion::ALL {
        let cfg = NetConfig {
            fusion,
            iterations,
            ..NetConfig::default()
        };
        let model = train(&cfg, &data)?;
        let (report, _) = evaluate(&cfg, &model.params, &data.test)?;
        println!(
            "{:<14} best iteration {:>4}  val mIoU {:.4}  test mIoU {:.4}  mAP {:.4}",
            fusion.name(),
            model.best_iteration,
            model.val_miou,
            report.miou,
            report.map.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
