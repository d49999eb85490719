//! The full comparison across noise levels and repetitions, as run by
//! `ioc-eiv bench`, on a reduced number of repetitions.

use ioc_eiv::bench::{run_bench, BenchConfig};

fn main() -> ioc_eiv::Result<()> {
    let mut cfg = BenchConfig::spring_damper();
    cfg.reps = 3;
    let report = run_bench(&cfg, cfg.master_seed()?, None)?;
    println!("{:<6} {:>6} {:>12} {:>12} {:>5}", "method", "level", "rmse_theta", "rmse_U", "ok");
    for s in &report.summary {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!("{:<6} {:>5}% {:>12} {:>12} {:>5}", s.method, s.level, fmt(s.rmse_theta_mean), fmt(s.rmse_u_mean), s.n_ok);
    }
    Ok(())
}
