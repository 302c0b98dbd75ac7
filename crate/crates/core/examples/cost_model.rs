//! Multiply-accumulate counts of the factorized fusion layer against
//! full per-pixel kernels.
//!
//! `cargo run --example cost_model -- [h w c c_out k]`

use roadfuse::dfm::{cost_model, Variant};

fn main() -> anyhow::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let [h, w, c, co, k] = args[..] else {
        return run(8, 8, 16, 16, 3);
    };
    run(h, w, c, co, k)
}

fn run(h: u64, w: u64, c: u64, co: u64, k: u64) -> anyhow::Result<()> {
    println!("H={h} W={w} C={c} C'={co} K={k}");
    println!("{:<12} {:>14} {:>14}", "variant", "apply", "with generation");
    for (name, v) in [("naive", Variant::Naive), ("factorized", Variant::Factorized)] {
        println!("{name:<12} {:>14} {:>14}", cost_model(h, w, c, co, k, v, false), cost_model(h, w, c, co, k, v, true));
    }
    let ratio = cost_model(h, w, c, co, k, Variant::Factorized, false) as f64
        / cost_model(h, w, c, co, k, Variant::Naive, false) as f64;
    println!("ratio {ratio:.4} = (K^2 + C') / (K^2 C') = {:.4}", (k * k + co) as f64 / (k * k * co) as f64);
    Ok(())
}
