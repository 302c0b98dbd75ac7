//! Renders one random road scene and writes its disparity, colour image,
//! labels and camera to a directory.
//!
//! `cargo run --example synth_scene -- [out_dir] [seed]`

use std::path::PathBuf;

use roadfuse::io;
use roadfuse::synth::{generate, random_specs, DEFAULT_HEIGHT, DEFAULT_NOISE_SIGMA, DEFAULT_WIDTH};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "scene".into()));
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);

    let spec = &random_specs(1, seed, DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_NOISE_SIGMA)[0];
    let scene = generate(spec)?;
    std::fs::create_dir_all(&out)?;
    io::write_pgm16(&scene.disparity, out.join("disp.pgm"))?;
    io::write_ppm(&scene.rgb, out.join("rgb.ppm"))?;
    io::write_labels(&scene.labels, out.join("label.pgm"))?;
    io::write_camera(&scene.camera, out.join("camera.txt"))?;

    println!(
        "a0 {:.3}  a1 {:.3}  roll {:.2} deg  {} anomalies",
        spec.a0,
        spec.a1,
        spec.theta.to_degrees(),
        spec.anomalies.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}
