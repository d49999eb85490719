//! Experiment runner: problem and estimator settings from a JSON config,
//! demonstrations at several noise levels and repetitions, every requested
//! estimator on the same demonstrations, and RMSE tables as CSV and JSON.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demos::{generate, noise_scale_from_percent, rmse, sample_mean, DemoSet, NoiseSpec};
use crate::error::{Error, Result};
use crate::forward;
use crate::kkt_baseline::{kkt_ls, NormalizationRule};
use crate::map_estimator::{self, MapConfig};
use crate::model::ForwardProblem;
use crate::tls_estimator::{self, TlsConfig};

/// Environment variable that replaces the config's master seed.
pub const SEED_ENV: &str = "IOC_EIV_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kkt,
    Map,
    Tls,
    /// Sample mean of the demonstrations; no weights.
    Mean,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Kkt, Method::Map, Method::Tls, Method::Mean];

    pub fn name(self) -> &'static str {
        match self {
            Method::Kkt => "kkt",
            Method::Map => "map",
            Method::Tls => "tls",
            Method::Mean => "mean",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown method `{s}` (expected kkt, map, tls or mean)")))
    }
}

/// Noise family; the scale comes from the percentage level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    Uniform,
    /// Per-channel bounds on the demonstrated inputs; `null` is unbounded.
    TruncatedGaussian {
        lower: Vec<Option<f64>>,
        upper: Vec<Option<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    #[serde(flatten)]
    pub family: NoiseFamily,
    /// Percentages of the per-channel mean optimal input; 0 gives exact copies.
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl NoiseConfig {
    /// The noise draw at `pct` for the given seed; `None` at level 0.
    pub fn spec(&self, u_star: &DVector<f64>, m: usize, pct: f64, seed: u64) -> Result<Option<NoiseSpec>> {
        if pct == 0.0 {
            return Ok(None);
        }
        let sigma = noise_scale_from_percent(u_star, m, pct)?;
        let bound = |v: &[Option<f64>], fill: f64| -> Result<DVector<f64>> {
            if v.len() != m {
                return Err(Error::Invalid(format!("truncation bounds need {m} entries, got {}", v.len())));
            }
            Ok(DVector::from_iterator(m, v.iter().map(|b| b.unwrap_or(fill))))
        };
        Ok(Some(match &self.family {
            NoiseFamily::Gaussian => NoiseSpec::gaussian(&sigma, seed),
            NoiseFamily::Uniform => NoiseSpec::uniform(&sigma, seed),
            NoiseFamily::TruncatedGaussian { lower, upper } => NoiseSpec::truncated(
                &sigma,
                bound(lower, f64::NEG_INFINITY)?,
                bound(upper, f64::INFINITY)?,
                seed,
            ),
        }))
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("bench_out")
}

/// The runner replaces each estimator's own normalization with [`Self::normalization`]
/// and the Gibbs seed with the repetition seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub problem: ForwardProblem,
    pub noise: NoiseConfig,
    /// Demonstrations per repetition.
    #[serde(rename = "D")]
    pub demos: usize,
    pub reps: usize,
    pub methods: Vec<Method>,
    /// Applied to every estimator; defaults to `Σθ = ‖θ_true‖₁`, or `Σθ = 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormalizationRule>,
    #[serde(default)]
    pub map: MapConfig,
    #[serde(default)]
    pub tls: TlsConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl BenchConfig {
    /// Spring-damper benchmark: Gaussian noise at 5, 10 and 20 %, `D = 10`,
    /// ten repetitions, every method.
    pub fn spring_damper() -> Self {
        Self {
            problem: crate::problems::spring_damper(),
            noise: NoiseConfig {
                family: NoiseFamily::Gaussian,
                levels: vec![5.0, 10.0, 20.0],
                seed: 1,
            },
            demos: 10,
            reps: 10,
            methods: Method::ALL.to_vec(),
            norm: Some(NormalizationRule::Sum { value: 22.0 }),
            map: MapConfig {
                norm: NormalizationRule::Sum { value: 22.0 },
                ..MapConfig::default()
            },
            tls: TlsConfig {
                norm: NormalizationRule::Sum { value: 22.0 },
                ..TlsConfig::default()
            },
            output: PathBuf::from("out/spring_damper"),
        }
    }

    /// Nonnegative-input surrogate with Gaussian noise truncated to `u >= 0`.
    pub fn tls_positivity() -> Self {
        Self {
            problem: crate::problems::positivity_surrogate(),
            noise: NoiseConfig {
                family: NoiseFamily::TruncatedGaussian {
                    lower: vec![Some(0.0)],
                    upper: vec![None],
                },
                levels: vec![5.0, 10.0, 20.0],
                seed: 1,
            },
            demos: 10,
            reps: 10,
            methods: vec![Method::Kkt, Method::Tls, Method::Mean],
            norm: Some(NormalizationRule::Sum { value: 11.1 }),
            map: MapConfig {
                norm: NormalizationRule::Sum { value: 11.1 },
                ..MapConfig::default()
            },
            tls: TlsConfig {
                norm: NormalizationRule::Sum { value: 11.1 },
                ..TlsConfig::default()
            },
            output: PathBuf::from("out/tls_positivity"),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = crate::io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        if self.noise.levels.is_empty() || self.noise.levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Invalid("noise levels must be a non-empty list of percentages >= 0".into()));
        }
        if self.reps == 0 || self.demos == 0 {
            return Err(Error::Invalid("reps and D must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Invalid("at least one method is required".into()));
        }
        self.map.validate()?;
        self.tls.validate()
    }

    pub fn normalization(&self) -> NormalizationRule {
        self.norm.unwrap_or(match &self.problem.theta_true {
            Some(t) => NormalizationRule::Sum {
                value: t.iter().map(|v| v.abs()).sum(),
            },
            None => NormalizationRule::Sum { value: 1.0 },
        })
    }

    /// The master seed, unless overridden through [`SEED_ENV`].
    pub fn master_seed(&self) -> Result<u64> {
        match std::env::var(SEED_ENV) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("{SEED_ENV} must be an unsigned integer, got `{s}`"))),
            Err(_) => Ok(self.noise.seed),
        }
    }

    /// Optimal inputs at `theta_true`.
    pub fn u_star(&self) -> Result<DVector<f64>> {
        let theta = self
            .problem
            .theta_true
            .as_ref()
            .ok_or_else(|| Error::Invalid("the problem has no theta_true".into()))?;
        Ok(forward::solve(&self.problem, theta)?.u)
    }

    /// `D` demonstrations at level `pct` with the given seed.
    pub fn demos_at(&self, u_star: &DVector<f64>, pct: f64, seed: u64) -> Result<DemoSet> {
        match self.noise.spec(u_star, self.problem.m(), pct, seed)? {
            Some(spec) => generate(&self.problem, u_star, &spec, self.demos),
            None => {
                let mut ds = DemoSet::new(&self.problem, vec![u_star.clone(); self.demos])?;
                ds.u_star = Some(u_star.clone());
                Ok(ds)
            }
        }
    }
}

/// What any single estimator run produces, plus errors against the truth
/// when it is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    #[serde(default, with = "crate::io::opt_vector", skip_serializing_if = "Option::is_none")]
    pub theta: Option<DVector<f64>>,
    #[serde(default, with = "crate::io::opt_vector", skip_serializing_if = "Option::is_none")]
    pub lambda: Option<DVector<f64>>,
    #[serde(with = "crate::io::vector")]
    pub u_hat: DVector<f64>,
    #[serde(default, with = "opt_matrix", skip_serializing_if = "Option::is_none")]
    pub sigma_u_hat: Option<DMatrix<f64>>,
    /// MAP costs per alternation round, or TLS inner costs of the last outer
    /// iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cost_trace: Vec<f64>,
    /// Gibbs acceptance rates `[β, U, Σ_U]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_u: Option<f64>,
}

mod opt_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "crate::io::matrix")] DMatrix<f64>);

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.clone().map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

/// Runs one estimator. `seed` drives the MAP's Gibbs chain.
pub fn run_method(cfg: &BenchConfig, method: Method, ds: &DemoSet, seed: u64) -> Result<EstimateReport> {
    let fp = &cfg.problem;
    let norm = cfg.normalization();
    let mut report = EstimateReport {
        method,
        theta: None,
        lambda: None,
        u_hat: sample_mean(ds),
        sigma_u_hat: None,
        cost_trace: Vec::new(),
        acceptance: None,
        converged: None,
        rmse_theta: None,
        rmse_u: None,
    };
    match method {
        Method::Mean => {}
        Method::Kkt => {
            let est = kkt_ls(ds, fp, Some(&norm))?;
            // inputs implied by the fitted weights
            report.u_hat = forward::solve(fp, &est.theta.map(|t| t.max(1e-12)))?.u;
            report.lambda = Some(DVector::from_iterator(
                est.lambdas.iter().map(|l| l.len()).sum(),
                est.lambdas.iter().flat_map(|l| l.iter().copied()),
            ));
            report.theta = Some(est.theta);
        }
        Method::Map => {
            let mut mc = cfg.map.clone();
            mc.norm = norm;
            mc.gibbs.seed = seed;
            let r = map_estimator::estimate_seeded(ds, fp, &mc)?;
            report.acceptance = r
                .gibbs_diag
                .as_ref()
                .map(|g| [g.acceptance.beta, g.acceptance.u, g.acceptance.sigma_u]);
            report.theta = Some(r.theta);
            report.lambda = Some(r.lambda);
            report.u_hat = r.u_hat;
            report.sigma_u_hat = Some(r.sigma_u_hat);
            report.cost_trace = r.cost_trace;
            report.converged = Some(r.converged);
        }
        Method::Tls => {
            let tc = TlsConfig { norm, ..cfg.tls.clone() };
            let r = tls_estimator::estimate(ds, fp, &tc)?;
            report.cost_trace = r
                .outer_trace
                .last()
                .map(|o| o.inner_costs.clone())
                .unwrap_or_default();
            report.theta = Some(r.theta);
            report.lambda = Some(r.lambda);
            report.u_hat = r.u_hat;
            report.sigma_u_hat = Some(r.sigma_u_hat);
            report.converged = Some(r.converged);
        }
    }
    if let Some(truth) = &fp.theta_true {
        let u_star = match &ds.u_star {
            Some(u) => u.clone(),
            None => forward::solve(fp, truth)?.u,
        };
        report.rmse_u = Some(rmse(&report.u_hat, &u_star)?);
        if let Some(theta) = &report.theta {
            let scaled = NormalizationRule::Sum {
                value: truth.iter().map(|v| v.abs()).sum(),
            }
            .apply(theta);
            report.rmse_theta = scaled.and_then(|s| rmse(&s, truth)).ok();
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub noise_percent: f64,
    pub rep: usize,
    pub seed: u64,
    pub rmse_theta: Option<f64>,
    pub rmse_u: Option<f64>,
    pub wall_time_seconds: f64,
    /// `ok` or `failed: <reason>`.
    pub status: String,
}

impl BenchRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub level: f64,
    pub rmse_theta_mean: Option<f64>,
    pub rmse_theta_std: Option<f64>,
    pub rmse_theta_median: Option<f64>,
    #[serde(rename = "rmse_U_mean")]
    pub rmse_u_mean: Option<f64>,
    #[serde(rename = "rmse_U_std")]
    pub rmse_u_std: Option<f64>,
    #[serde(rename = "rmse_U_median")]
    pub rmse_u_median: Option<f64>,
    pub n_ok: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub master_seed: u64,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<SummaryRow>,
}

impl BenchReport {
    /// Every (method, level) cell has at least one successful repetition.
    pub fn all_cells_ok(&self) -> bool {
        self.summary.iter().all(|s| s.n_ok > 0)
    }

    pub fn cell(&self, method: Method, level: f64) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == method && s.level == level)
    }

    pub fn rows_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["method", "noise_percent", "rep", "seed", "rmse_theta", "rmse_U", "status"])?;
        for r in &self.rows {
            w.write_record([
                r.method.to_string(),
                r.noise_percent.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
                opt(r.rmse_theta),
                opt(r.rmse_u),
                r.status.clone(),
            ])?;
        }
        finish(w)
    }

    pub fn timings_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["method", "noise_percent", "rep", "wall_time_seconds"])?;
        for r in &self.rows {
            w.write_record([
                r.method.to_string(),
                r.noise_percent.to_string(),
                r.rep.to_string(),
                r.wall_time_seconds.to_string(),
            ])?;
        }
        finish(w)
    }

    pub fn summary_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record([
            "method",
            "level",
            "rmse_theta_mean",
            "rmse_theta_std",
            "rmse_U_mean",
            "rmse_U_std",
            "n_ok",
        ])?;
        for s in &self.summary {
            w.write_record([
                s.method.to_string(),
                s.level.to_string(),
                opt(s.rmse_theta_mean),
                opt(s.rmse_theta_std),
                opt(s.rmse_u_mean),
                opt(s.rmse_u_std),
                s.n_ok.to_string(),
            ])?;
        }
        finish(w)
    }

    /// Writes `rows.csv`, `timings.csv`, `summary.csv` and `summary.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io_err = |path: &Path, source: std::io::Error| Error::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (name, bytes) in [
            ("rows.csv", self.rows_csv()?),
            ("timings.csv", self.timings_csv()?),
            ("summary.csv", self.summary_csv()?),
        ] {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        }
        crate::io::write_json(&dir.join("summary.json"), self)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

fn mean_std_median(v: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std), Some(median(v)))
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Runs every (level, rep) cell, each with seed `master + rep`, on up to
/// `jobs` threads (`None`: rayon's default). Rows are ordered by method in
/// config order, then level, then rep.
pub fn run_bench(cfg: &BenchConfig, master_seed: u64, jobs: Option<usize>) -> Result<BenchReport> {
    cfg.validate()?;
    let u_star = cfg.u_star()?;
    let cells: Vec<(usize, usize)> = (0..cfg.noise.levels.len())
        .flat_map(|l| (0..cfg.reps).map(move |r| (l, r)))
        .collect();
    let run_cell = |&(l, rep): &(usize, usize)| -> Result<Vec<BenchRow>> {
        let level = cfg.noise.levels[l];
        let seed = master_seed.wrapping_add(rep as u64);
        let ds = cfg.demos_at(&u_star, level, seed)?;
        Ok(cfg
            .methods
            .iter()
            .map(|&method| {
                let start = Instant::now();
                let out = run_method(cfg, method, &ds, seed);
                let wall_time_seconds = start.elapsed().as_secs_f64();
                let (rmse_theta, rmse_u, status) = match out {
                    Ok(r) => (r.rmse_theta, r.rmse_u, "ok".to_string()),
                    Err(e) => {
                        log::warn!("{method} at {level}% rep {rep} failed: {e}");
                        (None, None, format!("failed: {e}"))
                    }
                };
                BenchRow {
                    method,
                    noise_percent: level,
                    rep,
                    seed,
                    rmse_theta,
                    rmse_u,
                    wall_time_seconds,
                    status,
                }
            })
            .collect())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let per_cell: Vec<Vec<BenchRow>> = pool.install(|| cells.par_iter().map(run_cell).collect::<Result<_>>())?;

    let order = |m: Method| cfg.methods.iter().position(|x| *x == m).unwrap_or(usize::MAX);
    let mut rows: Vec<BenchRow> = per_cell.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        order(a.method)
            .cmp(&order(b.method))
            .then(a.noise_percent.total_cmp(&b.noise_percent))
            .then(a.rep.cmp(&b.rep))
    });

    let mut summary = Vec::new();
    for &method in &cfg.methods {
        for &level in &cfg.noise.levels {
            let ok: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| r.method == method && r.noise_percent == level && r.is_ok())
                .collect();
            let thetas: Vec<f64> = ok.iter().filter_map(|r| r.rmse_theta).collect();
            let us: Vec<f64> = ok.iter().filter_map(|r| r.rmse_u).collect();
            let (tm, ts, tmed) = mean_std_median(&thetas);
            let (um, us_, umed) = mean_std_median(&us);
            summary.push(SummaryRow {
                method,
                level,
                rmse_theta_mean: tm,
                rmse_theta_std: ts,
                rmse_theta_median: tmed,
                rmse_u_mean: um,
                rmse_u_std: us_,
                rmse_u_median: umed,
                n_ok: ok.len(),
            });
        }
    }
    Ok(BenchReport {
        master_seed,
        rows,
        summary,
    })
}
