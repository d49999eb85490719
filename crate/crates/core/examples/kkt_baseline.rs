//! Least-squares KKT inverse: exact on clean data, biased once inputs are noisy.

use ioc_eiv::demos::{generate, noise_scale_from_percent, rmse, DemoSet, NoiseSpec};
use ioc_eiv::kkt_baseline::{kkt_ls, NormalizationRule};
use ioc_eiv::{forward, problems};

fn main() -> ioc_eiv::Result<()> {
    let fp = problems::spring_damper();
    let theta = fp.theta_true.clone().unwrap();
    let u_star = forward::solve(&fp, &theta)?.u;
    let norm = NormalizationRule::Sum { value: theta.sum() };

    for pct in [0.0, 5.0, 10.0, 20.0] {
        let ds = if pct == 0.0 {
            DemoSet::new(&fp, vec![u_star.clone(); 10])?
        } else {
            let sigma = noise_scale_from_percent(&u_star, fp.m(), pct)?;
            generate(&fp, &u_star, &NoiseSpec::uniform(&sigma, 3), 10)?
        };
        let est = kkt_ls(&ds, &fp, Some(&norm))?;
        println!(
            "{pct:>4}% noise: theta = {:.3?}, rmse {:.4}, residual {:.2e}",
            est.theta.as_slice(),
            rmse(&est.theta, &theta)?,
            est.residual
        );
    }
    Ok(())
}
