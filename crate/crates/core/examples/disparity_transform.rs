//! Estimates the road profile and roll of a synthetic scene, then compares
//! how uniform the road looks before and after the transformation.

use roadfuse::dt::run_dt_pipeline;
use roadfuse::io::{self, LABEL_DRIVABLE};
use roadfuse::metrics::coeff_variation;
use roadfuse::synth::{generate, random_specs};

fn main() -> anyhow::Result<()> {
    for sigma in [0.0, 0.25] {
        let spec = &random_specs(1, 3, 96, 64, sigma)[0];
        let scene = generate(spec)?;
        let out = run_dt_pipeline(&scene.disparity)?;

        println!("noise {sigma}");
        println!("  truth     a0 {:.4} a1 {:.4} roll {:.3} deg", spec.a0, spec.a1, spec.theta.to_degrees());
        println!(
            "  estimate  a0 {:.4} a1 {:.4} roll {:.3} deg  offset {}",
            out.model.a0,
            out.model.a1,
            out.model.theta.to_degrees(),
            out.model.delta
        );

        let road = |img: &io::DisparityImage| -> Vec<f64> {
            img.data()
                .iter()
                .zip(scene.labels.labels())
                .filter(|(_, &l)| l == LABEL_DRIVABLE)
                .map(|(&d, _)| d)
                .collect()
        };
        println!("  road c_v  original {:.4}  transformed {:.2e}", coeff_variation(&road(&scene.disparity))?, coeff_variation(&road(&out.transformed))?);
        print!("{}", io::render_road_model(&out.model).lines().map(|l| format!("  {l}\n")).collect::<String>());
    }
    Ok(())
}
