use log::info;
use rayon::prelude::*;
use serde::Serialize;

use super::{evaluate, forward_macs, train, Dataset, Fusion, Modality, NetConfig, NetError};
use crate::metrics::{eta, MetricsError};

/// Nominal throughput used to turn forward MACs into a runtime, so the
/// table does not depend on the machine it was produced on.
pub const NOMINAL_MACS_PER_MS: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub fusion: Fusion,
    pub modality: Modality,
    /// Test mIoU of the best validation checkpoint, per seed.
    pub per_seed: Vec<f64>,
    pub miou_mean: f64,
    pub miou_std: f64,
    /// Forward-pass MACs at [`NOMINAL_MACS_PER_MS`].
    pub runtime_ms: f64,
    /// mIoU gain in percentage points per ms over the addition row of the
    /// same modality; `None` for that row itself.
    pub eta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl AblationTable {
    pub fn row(&self, fusion: Fusion, modality: Modality) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.fusion == fusion && r.modality == modality)
    }

    /// `fusion,modality,miou_mean,miou_std,runtime_ms,eta,miou_per_seed`;
    /// per-seed values are `;`-separated and η is blank for baseline rows.
    pub fn to_csv(&self) -> Result<String, MetricsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fusion", "modality", "miou_mean", "miou_std", "runtime_ms", "eta", "miou_per_seed"])?;
        for r in &self.rows {
            let per_seed: Vec<String> = r.per_seed.iter().map(f64::to_string).collect();
            w.write_record([
                r.fusion.name().to_string(),
                r.modality.name().to_string(),
                r.miou_mean.to_string(),
                r.miou_std.to_string(),
                r.runtime_ms.to_string(),
                r.eta.map(|e| e.to_string()).unwrap_or_default(),
                per_seed.join(";"),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| MetricsError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Trains every `(fusion, modality, seed)` combination from `base` and
/// scores it on the test split. Runs are independent and may execute in
/// parallel; the table order follows `datasets` then `fusions`.
pub fn ablation(
    base: &NetConfig,
    datasets: &[(Modality, Dataset)],
    fusions: &[Fusion],
    seeds: &[u64],
) -> Result<AblationTable, NetError> {
    if seeds.len() < 3 {
        return Err(NetError::Config(format!("ablation needs at least 3 seeds, got {}", seeds.len())));
    }
    let jobs: Vec<(usize, Fusion, u64)> = (0..datasets.len())
        .flat_map(|d| fusions.iter().flat_map(move |&f| seeds.iter().map(move |&s| (d, f, s))))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(d, fusion, seed)| -> Result<f64, NetError> {
            let (modality, data) = &datasets[d];
            let cfg = NetConfig {
                fusion,
                modality: *modality,
                seed,
                ..base.clone()
            };
            let model = train(&cfg, data)?;
            let (report, _) = evaluate(&cfg, &model.params, &data.test)?;
            info!("{} {} seed {seed}: test mIoU {:.4}", fusion.name(), modality.name(), report.miou);
            Ok(report.miou)
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for (d, (modality, _)) in datasets.iter().enumerate() {
        for (f, &fusion) in fusions.iter().enumerate() {
            let start = (d * fusions.len() + f) * seeds.len();
            let per_seed = scores[start..start + seeds.len()].to_vec();
            let (miou_mean, miou_std) = mean_std(&per_seed);
            let cfg = NetConfig {
                fusion,
                modality: *modality,
                ..base.clone()
            };
            rows.push(AblationRow {
                fusion,
                modality: *modality,
                per_seed,
                miou_mean,
                miou_std,
                runtime_ms: forward_macs(&cfg) as f64 / NOMINAL_MACS_PER_MS,
                eta: None,
            });
        }
    }
    let baselines: Vec<(Modality, f64, f64)> = rows
        .iter()
        .filter(|r| r.fusion == Fusion::Addition)
        .map(|r| (r.modality, r.miou_mean, r.runtime_ms))
        .collect();
    for r in &mut rows {
        if let Some(&(_, m, t)) = baselines.iter().find(|b| b.0 == r.modality) {
            r.eta = eta(100.0 * r.miou_mean, r.runtime_ms, 100.0 * m, t).ok();
        }
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}
