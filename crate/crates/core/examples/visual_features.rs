//! Computes every geometric feature for one scene and reports how flat
//! each is over the drivable area.

use roadfuse::dt::run_dt_pipeline;
use roadfuse::features::{
    depth_from_disparity, elevation_map, hha_image, normal_image, transformed_disparity, ELEVATION_CV_OFFSET,
};
use roadfuse::io::LABEL_DRIVABLE;
use roadfuse::metrics::coeff_variation;
use roadfuse::synth::{generate, random_specs};

fn main() -> anyhow::Result<()> {
    let spec = &random_specs(1, 8, 96, 64, 0.25)[0];
    let scene = generate(spec)?;
    let (d, cam) = (&scene.disparity, &scene.camera);
    let road = |i: usize| scene.labels.labels()[i] == LABEL_DRIVABLE;
    let mask = run_dt_pipeline(d)?.road_mask;

    let depth = depth_from_disparity(d, cam);
    let tdisp = transformed_disparity(d, cam)?;
    let normals = normal_image(d, cam);
    let elevation = elevation_map(d, cam, &mask)?;
    let hha = hha_image(d, cam, &mask)?;

    let shifted: Vec<f64> = elevation.channel_values(0, road).iter().map(|e| e + ELEVATION_CV_OFFSET).collect();
    println!("road c_v");
    println!("  depth                  {:.4}", coeff_variation(&depth.channel_values(0, road))?);
    println!("  transformed disparity  {:.4}", coeff_variation(&tdisp.channel_values(0, road))?);
    println!("  surface normal (mean)  {:.4}", coeff_variation(&normals.mean_channel_values(road))?.abs());
    println!("  elevation + {ELEVATION_CV_OFFSET} m       {:.4}", coeff_variation(&shifted)?);
    println!("hha map {:?}", hha.map.dims());
    Ok(())
}
