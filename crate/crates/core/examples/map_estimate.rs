//! MAP estimate from noisy spring-damper demonstrations.

use ioc_eiv::demos::{generate, noise_scale_from_percent, rmse, sample_mean, NoiseSpec};
use ioc_eiv::kkt_baseline::{kkt_ls, NormalizationRule};
use ioc_eiv::map_estimator::{estimate_seeded, MapConfig};
use ioc_eiv::{forward, problems};

fn main() -> ioc_eiv::Result<()> {
    let fp = problems::spring_damper();
    let theta = fp.theta_true.clone().unwrap();
    let u_star = forward::solve(&fp, &theta)?.u;
    let norm = NormalizationRule::Sum { value: theta.sum() };
    let sigma = noise_scale_from_percent(&u_star, fp.m(), 10.0)?;
    let ds = generate(&fp, &u_star, &NoiseSpec::gaussian(&sigma, 4), 10)?;

    let cfg = MapConfig { norm, ..MapConfig::default() };
    let map = estimate_seeded(&ds, &fp, &cfg)?;
    let kkt = kkt_ls(&ds, &fp, Some(&norm))?;

    println!("truth theta = {:.3?}", theta.as_slice());
    println!("MAP   theta = {:.3?} (rmse {:.4})", map.theta.as_slice(), rmse(&map.theta, &theta)?);
    println!("KKT   theta = {:.3?} (rmse {:.4})", kkt.theta.as_slice(), rmse(&kkt.theta, &theta)?);
    println!("rmse U: MAP {:.4}, sample mean {:.4}", rmse(&map.u_hat, &u_star)?, rmse(&sample_mean(&ds), &u_star)?);
    println!(
        "{} alternations, converged {}, cost {:.4e} -> {:.4e}",
        map.iterations,
        map.converged,
        map.cost_trace.first().unwrap(),
        map.cost_trace.last().unwrap()
    );
    Ok(())
}
