//! Fuses two feature maps with the dynamic fusion layer, checks the
//! identity start point, and verifies gradients by finite differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use roadfuse::dfm::{dfm_forward, dfm_naive_forward, gradcheck, mean_activation_map, DfmParams, NaiveParams};
use roadfuse::tensor::Tensor;

fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| StandardNormal.sample(rng)).collect()).expect("dims match")
}

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (h, w, c) = (6, 6, 4);
    let rgb = random(&[h, w, c], &mut rng);
    let aux = random(&[h, w, c], &mut rng);

    let identity = DfmParams::identity(c, 3)?;
    let out = dfm_forward(&rgb, &aux, &identity)?;
    println!("identity start: max |out - 2 rgb| = {:.1e}", out.max_abs_diff(&rgb.scale(2.0)));

    let params = DfmParams::random(c, c, 3, 0.3, &mut rng)?;
    let fused = dfm_forward(&rgb, &aux, &params)?;
    let naive = NaiveParams::factorized_family(&params, &aux)?;
    let full = dfm_naive_forward(&rgb, &aux, &naive)?;
    println!(
        "factorized vs equivalent full kernels: max diff {:.1e}",
        fused.sub(&rgb)?.max_abs_diff(&full)
    );

    let activation = mean_activation_map(&fused)?;
    println!("activation map {:?}, range [0, 1]", activation.dims());

    let report = gradcheck(4, 4, 2, 3, &mut rng)?;
    println!(
        "gradcheck max relative error  rgb {:.1e}  aux {:.1e}  stage-1 generator {:.1e}  stage-2 generator {:.1e}",
        report.f_r, report.f_t, report.omega1, report.omega2
    );
    Ok(())
}
