//! One line per acceptance criterion, then a non-zero exit if any failed.
//! Run with `cargo test --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use sha2::{Digest, Sha256};

use roadfuse::dfm::{cost_model, dfm_forward, dfm_naive_forward, dfm_stage1, dfm_stage2, gradcheck, DfmParams, Variant};
use roadfuse::dt::{roll_energy, run_dt_pipeline, sample_mask};
use roadfuse::io::LABEL_DRIVABLE;
use roadfuse::metrics::{coeff_variation, confusion_slices, eta, fsc_iou, pr_curve, EVAL_CLASSES};
use roadfuse::net::{ablation, Dataset, Fusion, Modality, NetConfig};
use roadfuse::synth::{generate, random_specs, DEFAULT_HEIGHT, DEFAULT_NOISE_SIGMA, DEFAULT_WIDTH};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dt_recovery() -> Outcome {
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut slowest = 0.0f64;
    for spec in random_specs(20, 101, DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_NOISE_SIGMA) {
        let scene = generate(&spec).map_err(|e| e.to_string())?;
        let start = Instant::now();
        let out = run_dt_pipeline(&scene.disparity).map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        worst.0 = worst.0.max((out.model.theta - spec.theta).abs().to_degrees());
        worst.1 = worst.1.max((out.model.a0 - spec.a0).abs());
        worst.2 = worst.2.max((out.model.a1 - spec.a1).abs());
    }
    let mut clean_theta = 0.0f64;
    let mut clean_energy = 0.0f64;
    for spec in random_specs(20, 102, DEFAULT_WIDTH, DEFAULT_HEIGHT, 0.0) {
        let d = generate(&spec).map_err(|e| e.to_string())?.disparity;
        let out = run_dt_pipeline(&d).map_err(|e| e.to_string())?;
        clean_theta = clean_theta.max((out.model.theta - spec.theta).abs().to_degrees());
        let samples = sample_mask(&d, &out.road_mask, usize::MAX);
        let dd: f64 = samples.iter().map(|p| p.d * p.d).sum();
        let e = roll_energy(&samples, out.model.theta).map_err(|e| e.to_string())?;
        clean_energy = clean_energy.max(e / dd);
    }
    check(
        worst.0 < 0.5 && worst.1 < 0.05 && worst.2 < 0.01 && clean_theta < 0.1 && clean_energy < 1e-9 && slowest < 1.0,
        format!(
            "noisy max err θ {:.3}° a0 {:.4} a1 {:.5}; clean θ {:.2e}° E/dᵀd {:.2e}; slowest {:.3} s/scene",
            worst.0, worst.1, worst.2, clean_theta, clean_energy, slowest
        ),
    )
}

fn transform_flatness() -> Outcome {
    let mut max_t = 0.0f64;
    let mut min_o = f64::INFINITY;
    for spec in random_specs(20, 103, DEFAULT_WIDTH, DEFAULT_HEIGHT, 0.0) {
        let scene = generate(&spec).map_err(|e| e.to_string())?;
        let out = run_dt_pipeline(&scene.disparity).map_err(|e| e.to_string())?;
        let road: Vec<usize> = (0..scene.labels.labels().len())
            .filter(|&i| scene.labels.labels()[i] == LABEL_DRIVABLE)
            .collect();
        let t: Vec<f64> = road.iter().map(|&i| out.transformed.data()[i]).collect();
        let o: Vec<f64> = road.iter().map(|&i| scene.disparity.data()[i]).collect();
        max_t = max_t.max(coeff_variation(&t).map_err(|e| e.to_string())?);
        min_o = min_o.min(coeff_variation(&o).map_err(|e| e.to_string())?);
    }
    check(
        max_t < 1e-6 && min_o > 0.01,
        format!("max c_v transformed {max_t:.2e}, min c_v original {min_o:.4}"),
    )
}

fn eta_table() -> Outcome {
    let (base_miou, base_ms) = (89.3, 24.7);
    let rows = [
        ("B", 88.6, 25.3, -1.17),
        ("C", 89.7, 25.9, 0.33),
        ("D", 90.2, 26.4, 0.53),
        ("E", 92.6, 28.1, 0.97),
        ("F", 90.8, 27.6, 0.52),
        ("G", 91.3, 31.2, 0.31),
    ];
    let mut got = Vec::new();
    let mut ok = true;
    for (name, miou, ms, want) in rows {
        let e = eta(miou, ms, base_miou, base_ms).map_err(|e| e.to_string())?;
        let rounded = (e * 100.0).round() / 100.0;
        ok &= (rounded - want).abs() < 1e-9;
        got.push(format!("{name} {rounded:.2}"));
    }
    check(ok, got.join(", "))
}

fn cost_model_counts() -> Outcome {
    let mut ok = true;
    for c in [1u64, 2, 8, 16] {
        for co in [1u64, 4, 16] {
            for k in [1u64, 3, 5] {
                let n = cost_model(8, 8, c, co, k, Variant::Naive, false) as f64;
                let f = cost_model(8, 8, c, co, k, Variant::Factorized, false) as f64;
                ok &= (f / n - (k * k + co) as f64 / (k * k * co) as f64).abs() < 1e-12;
            }
        }
    }
    let mut r = common::rng(4);
    let f_r = common::random(&[8, 8, 16], &mut r);
    let f_t = common::random(&[8, 8, 16], &mut r);
    let p = DfmParams::random(16, 16, 3, 0.1, &mut r).map_err(|e| e.to_string())?;
    let fact = common::factorized(&f_r, &f_t, &p);
    let naive = common::naive(&f_r, &f_t, &common::random_naive(16, 16, 3, &mut r));
    ok &= naive.apply_macs == 147456 && fact.apply_macs == 25600;
    ok &= naive.apply_macs == cost_model(8, 8, 16, 16, 3, Variant::Naive, false);
    ok &= fact.apply_macs == cost_model(8, 8, 16, 16, 3, Variant::Factorized, false);
    ok &= naive.apply_macs + naive.generation_macs == cost_model(8, 8, 16, 16, 3, Variant::Naive, true);
    ok &= fact.apply_macs + fact.generation_macs == cost_model(8, 8, 16, 16, 3, Variant::Factorized, true);
    check(
        ok,
        format!("loop counters naive {} factorized {} at H=W=8, C=C'=16, K=3", naive.apply_macs, fact.apply_macs),
    )
}

fn dfm_correctness() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut r = common::rng(seed);
        let f_r = common::random(&[4, 4, 2], &mut r);
        let f_t = common::random(&[4, 4, 2], &mut r);
        let p = DfmParams::random(2, 2, 3, 0.5, &mut r).map_err(|e| e.to_string())?;
        let oracle = common::factorized(&f_r, &f_t, &p);
        let (s1, _) = dfm_stage1(&f_r, &f_t, &p).map_err(|e| e.to_string())?;
        let (s2, _) = dfm_stage2(&s1, &f_t, &p).map_err(|e| e.to_string())?;
        let np = common::random_naive(2, 2, 3, &mut r);
        let nv = dfm_naive_forward(&f_r, &f_t, &np).map_err(|e| e.to_string())?;
        worst = worst
            .max(s1.max_abs_diff(&oracle.value.0))
            .max(s2.max_abs_diff(&oracle.value.1))
            .max(nv.max_abs_diff(&common::naive(&f_r, &f_t, &np).value));
    }
    let report = gradcheck(4, 4, 2, 3, &mut common::rng(7)).map_err(|e| e.to_string())?;
    check(
        worst < 1e-12 && report.max() < 1e-4,
        format!("oracle max diff {worst:.2e}; gradcheck max rel error {:.2e}", report.max()),
    )
}

fn identity_init() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = common::rng(seed);
        let c = r.random_range(1..6usize);
        let f_r = common::random(&[5, 6, c], &mut r);
        let f_t = common::random(&[5, 6, c], &mut r);
        let p = DfmParams::identity(c, 3).map_err(|e| e.to_string())?;
        let out = dfm_forward(&f_r, &f_t, &p).map_err(|e| e.to_string())?;
        worst = worst.max(out.max_abs_diff(&f_r.scale(2.0)));
    }
    check(worst < 1e-12, format!("max |out - 2 F_r| {worst:.2e}"))
}

fn toy_ablation() -> Outcome {
    let start = Instant::now();
    let data = Dataset::synthetic(60, 2024, DEFAULT_NOISE_SIGMA, Modality::Tdisp).map_err(|e| e.to_string())?;
    let table = ablation(&NetConfig::default(), &[(Modality::Tdisp, data)], &Fusion::ALL, &[1, 2, 3, 4, 5])
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let row = |f: Fusion| table.rows.iter().find(|r| r.fusion == f).expect("fusion row");
    let (add, dfm) = (row(Fusion::Addition), row(Fusion::DfmAll));
    let wins = dfm.per_seed.iter().zip(&add.per_seed).filter(|(d, a)| d > a).count();
    let means: Vec<String> = table.rows.iter().map(|r| format!("{} {:.4}", r.fusion.name(), r.miou_mean)).collect();
    check(
        dfm.miou_mean >= add.miou_mean && wins >= 4 && elapsed < 1800.0,
        format!(
            "means {}; per seed addition {:.4?} dfm-all {:.4?}; dfm-all wins {wins}/5; grid took {elapsed:.0} s on one thread",
            means.join(", "),
            add.per_seed,
            dfm.per_seed
        ),
    )
}

fn metrics_suite() -> Outcome {
    let mut worst_ap = 0.0f64;
    let mut worst_fsc = 0.0f64;
    for seed in 0..100 {
        let mut r = common::rng(1000 + seed);
        let gt: Vec<u8> = (0..100).map(|_| r.random_range(0..3)).collect();
        let pred: Vec<u8> = (0..100).map(|_| r.random_range(0..3)).collect();
        let scores: Vec<f64> = (0..100).map(|_| f64::from(r.random_range(0..10u8)) / 9.0).collect();
        let counts = confusion_slices(&pred, &gt).map_err(|e| e.to_string())?;
        for class in EVAL_CLASSES {
            if gt.contains(&class) {
                let ap = pr_curve(&scores, &gt, class).map_err(|e| e.to_string())?.ap;
                worst_ap = worst_ap.max((ap - common::brute_force_ap(&scores, &gt, class)).abs());
            }
            if let Some(k) = counts.get(class) {
                let s = fsc_iou(k);
                worst_fsc = worst_fsc.max((s.fsc - 2.0 * s.iou / (1.0 + s.iou)).abs());
            }
        }
    }
    let constant = coeff_variation(&[3.5; 10]).map_err(|e| e.to_string())?;
    let pair = coeff_variation(&[1.0, 3.0]).map_err(|e| e.to_string())?;
    check(
        worst_ap < 1e-12 && worst_fsc < 1e-12 && constant == 0.0 && pair == 0.5,
        format!("AP diff {worst_ap:.2e}; Fsc identity diff {worst_fsc:.2e}; c_v const {constant}, c_v([1,3]) {pair}"),
    )
}

fn hash_tree(root: &Path, out: &mut BTreeMap<String, String>) {
    let mut entries: Vec<_> = std::fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            hash_tree(&p, out);
        } else {
            let digest = Sha256::digest(std::fs::read(&p).unwrap());
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            out.insert(p.display().to_string(), hex);
        }
    }
}

/// Runs a fixed sequence of seeded commands in `dir` and hashes stdout and
/// every file written.
fn cli_run(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let tiny = NetConfig {
        iterations: 6,
        eval_every: 3,
        ..NetConfig::default()
    };
    std::fs::write(dir.join("tiny.json"), tiny.to_json()).map_err(|e| e.to_string())?;
    let commands: &[&[&str]] = &[
        &["--seed", "7", "synth", "split", "--n", "10", "--out", "data"],
        &["--seed", "7", "synth", "generate", "--n", "2", "--out", "gen"],
        &["dt", "pipeline", "--disp", "gen/disp/000000.pgm", "--out-dir", "dt"],
        &["dt", "estimate", "--disp", "gen/disp/000001.pgm", "--model", "m1.txt"],
        &["dt", "transform", "--disp", "gen/disp/000001.pgm", "--model", "m1.txt", "--out", "t1.pgm"],
        &["features", "depth", "--disp", "gen/disp/000000.pgm", "--cam", "gen/camera.txt", "--out", "depth.tnsr"],
        &["features", "normal", "--disp", "gen/disp/000000.pgm", "--cam", "gen/camera.txt", "--out", "normal.tnsr"],
        &["features", "elevation", "--disp", "gen/disp/000000.pgm", "--cam", "gen/camera.txt", "--out", "elev.tnsr"],
        &["features", "hha", "--disp", "gen/disp/000000.pgm", "--cam", "gen/camera.txt", "--out", "hha.tnsr"],
        &["fuse", "bench-cost", "--h", "8", "--w", "8", "--c", "16", "--cout", "16", "--include-generation"],
        &["--seed", "3", "fuse", "gradcheck"],
        &["--seed", "9", "train", "--config", "tiny.json", "--data", "data", "--out", "model.tnsr"],
        &["eval", "--model", "model.tnsr", "--data", "data", "--out", "eval/report.csv"],
        &[
            "ablate", "--data", "data", "--config", "tiny.json", "--seeds", "1,2,3", "--fusions", "addition,dfm-all", "--out",
            "ablation.csv",
        ],
    ];
    let mut hashes = BTreeMap::new();
    for (i, args) in commands.iter().enumerate() {
        let out = Command::new(env!("CARGO_BIN_EXE_roadfuse"))
            .args(*args)
            .current_dir(dir)
            .env_remove("GS_LOG")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
        }
        let hex: String = Sha256::digest(&out.stdout).iter().map(|b| format!("{b:02x}")).collect();
        hashes.insert(format!("stdout {i:02}"), hex);
    }
    let mut files = BTreeMap::new();
    hash_tree(dir, &mut files);
    let prefix = dir.display().to_string();
    hashes.extend(files.into_iter().map(|(k, v)| (k.replacen(&prefix, "", 1), v)));
    Ok(hashes)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ha = cli_run(a.path())?;
    let hb = cli_run(b.path())?;
    let differing: Vec<&String> = ha.keys().filter(|k| ha.get(*k) != hb.get(*k)).collect();
    check(
        ha.len() == hb.len() && differing.is_empty(),
        format!("{} outputs hashed per run, differing: {differing:?}", ha.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("DT recovery", dt_recovery),
        ("transform flatness", transform_flatness),
        ("eta table", eta_table),
        ("cost model", cost_model_counts),
        ("DFM correctness", dfm_correctness),
        ("identity init", identity_init),
        ("toy ablation", toy_ablation),
        ("metrics suite", metrics_suite),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|k| name.contains(k.as_str())) {
            continue;
        }
        match f() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
