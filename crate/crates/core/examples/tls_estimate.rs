//! Constrained total-least-squares estimate on the positivity surrogate,
//! where truncated noise biases the sample mean.

use ioc_eiv::demos::{generate, noise_scale_from_percent, rmse, sample_mean, NoiseSpec};
use ioc_eiv::kkt_baseline::{kkt_ls, NormalizationRule};
use ioc_eiv::tls_estimator::{estimate, TlsConfig};
use ioc_eiv::{forward, problems};
use nalgebra::DVector;

fn main() -> ioc_eiv::Result<()> {
    let fp = problems::positivity_surrogate();
    let theta = fp.theta_true.clone().unwrap();
    let u_star = forward::solve(&fp, &theta)?.u;
    let norm = NormalizationRule::Sum { value: theta.sum() };
    let sigma = noise_scale_from_percent(&u_star, fp.m(), 10.0)?;
    let spec = NoiseSpec::truncated(&sigma, DVector::zeros(1), DVector::from_element(1, f64::INFINITY), 2);
    let ds = generate(&fp, &u_star, &spec, 10)?;

    let tls = estimate(&ds, &fp, &TlsConfig { norm, ..TlsConfig::default() })?;
    let kkt = kkt_ls(&ds, &fp, Some(&norm))?;
    println!("truth theta = {:.3?}", theta.as_slice());
    println!("TLS   theta = {:.3?} (rmse {:.4})", tls.theta.as_slice(), rmse(&tls.theta, &theta)?);
    println!("KKT   theta = {:.3?} (rmse {:.4})", kkt.theta.as_slice(), rmse(&kkt.theta, &theta)?);
    println!("rmse U: TLS {:.4}, sample mean {:.4}", rmse(&tls.u_hat, &u_star)?, rmse(&sample_mean(&ds), &u_star)?);
    for (i, rec) in tls.outer_trace.iter().enumerate() {
        println!("outer {i}: cost {:.4e}, Σ_U change {:.2e}, {} inner steps", rec.cost, rec.sigma_delta, rec.inner_costs.len());
    }
    println!("converged: {}", tls.converged);
    Ok(())
}
