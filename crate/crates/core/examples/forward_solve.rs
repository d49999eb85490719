//! Solve the spring-damper forward problem at its true weights and check the
//! optimality conditions of the result.

use ioc_eiv::model::kkt_residual;
use ioc_eiv::{forward, problems};

fn main() -> ioc_eiv::Result<()> {
    let fp = problems::spring_damper();
    let theta = fp.theta_true.clone().expect("the problem ships its weights");
    let sol = forward::solve(&fp, &theta)?;

    println!("theta      = {:?}", theta.as_slice());
    println!("objective  = {:.6}", sol.objective);
    println!("active set = {:?}", sol.active_set);
    for (k, u) in sol.u.iter().enumerate() {
        println!("  u[{k}] = {u:+.5}");
    }
    let r = kkt_residual(&fp, &theta, &sol.lambda, &sol.u)?;
    let [st, co, pv, dv] = r.block_norms();
    println!("residuals: stationarity {st:.1e}, complementarity {co:.1e}, primal {pv:.1e}, dual {dv:.1e}");

    // scaling the weights leaves the optimal inputs unchanged
    let scaled = forward::solve(&fp, &(&theta * 7.0))?;
    println!("max |U(θ) - U(7θ)| = {:.1e}", (&sol.u - &scaled.u).amax());
    Ok(())
}
