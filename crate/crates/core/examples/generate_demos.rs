//! Draw noisy demonstrations around the optimal inputs under each noise family.

use ioc_eiv::demos::{generate, noise_scale_from_percent, rmse, sample_mean, NoiseSpec};
use ioc_eiv::{forward, problems};
use nalgebra::DVector;

fn main() -> ioc_eiv::Result<()> {
    let fp = problems::positivity_surrogate();
    let u_star = forward::solve(&fp, fp.theta_true.as_ref().unwrap())?.u;
    let sigma = noise_scale_from_percent(&u_star, fp.m(), 10.0)?;
    let lower = DVector::zeros(fp.m());
    let upper = DVector::from_element(fp.m(), f64::INFINITY);

    let specs = [
        ("gaussian", NoiseSpec::gaussian(&sigma, 1)),
        ("uniform", NoiseSpec::uniform(&sigma, 1)),
        ("truncated", NoiseSpec::truncated(&sigma, lower, upper, 1)),
    ];
    for (name, spec) in &specs {
        let ds = generate(&fp, &u_star, spec, 200)?;
        let min = ds.demos.iter().flat_map(|d| d.iter().copied()).fold(f64::INFINITY, f64::min);
        let bias = rmse(&sample_mean(&ds), &u_star)?;
        println!("{name:>9}: {} demos, smallest input {min:+.4}, rmse of the sample mean {bias:.4}", ds.len());
    }
    Ok(())
}
