//! Metropolis-Hastings: a bare kernel on a 1-d target, then a chain whose U
//! block is updated by random walk instead of the exact conditional.

use ioc_eiv::demos::{generate, noise_scale_from_percent, rmse, NoiseSpec};
use ioc_eiv::kkt_baseline::NormalizationRule;
use ioc_eiv::mcmc::{mh_step, run_chain, ChainConfig, Independence, Priors, RandomWalk, UStep};
use ioc_eiv::model::BilinearStationarity;
use ioc_eiv::{forward, problems};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ioc_eiv::Result<()> {
    // N(2, 0.5²) sampled with two kernels
    let log_target = |x: &DVector<f64>| -0.5 * ((x[0] - 2.0) / 0.5).powi(2);
    let rw = RandomWalk::new(&DMatrix::from_element(1, 1, 0.8))?;
    let ind = Independence::new(DVector::from_element(1, 1.5), &DMatrix::from_element(1, 1, 1.0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (name, use_rw) in [("random walk", true), ("independence", false)] {
        let mut x = DVector::zeros(1);
        let (mut sum, mut acc, n) = (0.0, 0usize, 50_000);
        for _ in 0..n {
            let step = if use_rw { mh_step(&x, log_target, &rw, &mut rng)? } else { mh_step(&x, log_target, &ind, &mut rng)? };
            acc += step.accepted as usize;
            x = step.next;
            sum += x[0];
        }
        println!("{name:>12}: mean {:.3} (target 2), acceptance {:.2}", sum / n as f64, acc as f64 / n as f64);
    }

    let fp = problems::spring_damper();
    let theta = fp.theta_true.clone().unwrap();
    let u_star = forward::solve(&fp, &theta)?.u;
    let sigma = noise_scale_from_percent(&u_star, fp.m(), 10.0)?;
    let ds = generate(&fp, &u_star, &NoiseSpec::gaussian(&sigma, 2), 20)?;
    let priors = Priors::from_demos(&ds, &fp, &NormalizationRule::Sum { value: theta.sum() })?;
    let bs = BilinearStationarity::new(&fp);
    for u_step in [UStep::Exact, UStep::Metropolis { scale: 1e-3 }, UStep::Metropolis { scale: 1e-5 }] {
        let cfg = ChainConfig { n_iter: 4000, n_keep: 2000, u_step };
        let out = run_chain(&ds, &bs, &priors, &cfg, &mut ChaCha8Rng::seed_from_u64(9))?;
        println!(
            "{u_step:?}: U acceptance {:.2}, rmse of posterior mean U {:.4}",
            out.acceptance_rate.u,
            rmse(&out.means.u, &u_star)?
        );
    }
    Ok(())
}
