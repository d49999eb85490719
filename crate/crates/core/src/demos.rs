//! Suboptimal demonstrations `U_d = U* + n_d` and the statistics reported
//! alongside the estimators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::model::ForwardProblem;
use crate::numerics::psd_factor;

const MAX_REJECTIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// Per-step `n_{d,k} ~ N(0, Σ_u)`.
    Gaussian {
        #[serde(with = "crate::io::matrix")]
        sigma_u: DMatrix<f64>,
    },
    /// Gaussian noise conditioned on the demonstrated input lying in
    /// `[lower, upper]` per channel.
    TruncatedGaussian {
        #[serde(with = "crate::io::matrix")]
        sigma_u: DMatrix<f64>,
        #[serde(with = "crate::io::vector")]
        lower: DVector<f64>,
        #[serde(with = "crate::io::vector")]
        upper: DVector<f64>,
    },
    /// Per-channel `U(-halfwidth, halfwidth)`.
    Uniform {
        #[serde(with = "crate::io::vector")]
        halfwidth: DVector<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    /// Independent per-channel Gaussian noise with standard deviations `sigma`.
    pub fn gaussian(sigma: &DVector<f64>, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Gaussian {
                sigma_u: DMatrix::from_diagonal(&sigma.map(|s| s * s)),
            },
            seed,
        }
    }

    /// Uniform noise with the same per-channel standard deviation `sigma`.
    pub fn uniform(sigma: &DVector<f64>, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Uniform {
                halfwidth: sigma * 3f64.sqrt(),
            },
            seed,
        }
    }

    pub fn truncated(sigma: &DVector<f64>, lower: DVector<f64>, upper: DVector<f64>, seed: u64) -> Self {
        Self {
            kind: NoiseKind::TruncatedGaussian {
                sigma_u: DMatrix::from_diagonal(&sigma.map(|s| s * s)),
                lower,
                upper,
            },
            seed,
        }
    }

    fn channels(&self) -> usize {
        match &self.kind {
            NoiseKind::Gaussian { sigma_u } | NoiseKind::TruncatedGaussian { sigma_u, .. } => sigma_u.nrows(),
            NoiseKind::Uniform { halfwidth } => halfwidth.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            NoiseKind::Gaussian { sigma_u } => psd_factor(sigma_u).map(|_| ()),
            NoiseKind::TruncatedGaussian { sigma_u, lower, upper } => {
                psd_factor(sigma_u)?;
                check_len("lower", sigma_u.nrows(), lower.len())?;
                check_len("upper", sigma_u.nrows(), upper.len())?;
                if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
                    return Err(Error::Invalid("truncation bounds need lower < upper".into()));
                }
                Ok(())
            }
            NoiseKind::Uniform { halfwidth } => {
                if halfwidth.iter().any(|&h| !(h >= 0.0)) {
                    return Err(Error::Invalid("uniform halfwidth must be >= 0".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSet {
    /// Fingerprint of the forward problem the demonstrations belong to.
    pub problem_id: String,
    #[serde(with = "crate::io::vector")]
    pub x0: DVector<f64>,
    #[serde(default, with = "crate::io::opt_vector", skip_serializing_if = "Option::is_none")]
    pub u_star: Option<DVector<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(with = "crate::io::vec_of_vectors")]
    pub demos: Vec<DVector<f64>>,
}

impl DemoSet {
    /// Wraps raw demonstrations.
    pub fn new(fp: &ForwardProblem, demos: Vec<DVector<f64>>) -> Result<Self> {
        let ds = Self {
            problem_id: problem_id(fp),
            x0: fp.x0.clone(),
            u_star: None,
            noise: None,
            demos,
        };
        ds.validate_for(fp)?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn validate_for(&self, fp: &ForwardProblem) -> Result<()> {
        if self.demos.is_empty() {
            return Err(Error::Invalid("a demonstration set needs at least one demonstration".into()));
        }
        for d in &self.demos {
            check_len("demonstration", fp.n_inputs(), d.len())?;
        }
        check_len("x0", fp.n(), self.x0.len())?;
        if self.problem_id != problem_id(fp) {
            return Err(Error::Invalid(format!(
                "demonstrations were generated for problem {} but the config describes {}",
                self.problem_id,
                problem_id(fp)
            )));
        }
        Ok(())
    }
}

/// Short content hash of the problem definition.
pub fn problem_id(fp: &ForwardProblem) -> String {
    let mut canonical = fp.clone();
    canonical.theta_true = None;
    let json = serde_json::to_vec(&canonical).expect("problem serializes");
    Sha256::digest(&json)[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Draws `count` demonstrations around `u_star`. Demonstration `d` uses stream
/// `d` of a ChaCha generator keyed by the seed, so any subset can be
/// regenerated independently.
pub fn generate(fp: &ForwardProblem, u_star: &DVector<f64>, spec: &NoiseSpec, count: usize) -> Result<DemoSet> {
    if count == 0 {
        return Err(Error::Invalid("demonstration count must be >= 1".into()));
    }
    check_len("U*", fp.n_inputs(), u_star.len())?;
    check_len("noise channels", fp.m(), spec.channels())?;
    spec.validate()?;
    let demos = (0..count)
        .map(|d| {
            let mut rng = demo_rng(spec.seed, d);
            draw_one(u_star, fp.m(), &spec.kind, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DemoSet {
        problem_id: problem_id(fp),
        x0: fp.x0.clone(),
        u_star: Some(u_star.clone()),
        noise: Some(spec.clone()),
        demos,
    })
}

fn demo_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_one(u_star: &DVector<f64>, m: usize, kind: &NoiseKind, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    let steps = u_star.len() / m;
    let mut out = u_star.clone();
    match kind {
        NoiseKind::Gaussian { sigma_u } => {
            let f = psd_factor(sigma_u)?;
            for k in 0..steps {
                let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                let mut block = out.rows_mut(k * m, m);
                block += &f * z;
            }
        }
        NoiseKind::TruncatedGaussian { sigma_u, lower, upper } => {
            let f = psd_factor(sigma_u)?;
            for k in 0..steps {
                let base = u_star.rows(k * m, m).into_owned();
                let mut tries = 0;
                let sample = loop {
                    let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let cand = &base + &f * z;
                    if (0..m).all(|c| cand[c] >= lower[c] && cand[c] <= upper[c]) {
                        break cand;
                    }
                    tries += 1;
                    if tries >= MAX_REJECTIONS {
                        return Err(Error::Invalid(format!(
                            "truncated noise: no admissible draw at step {k} after {MAX_REJECTIONS} tries"
                        )));
                    }
                };
                out.rows_mut(k * m, m).copy_from(&sample);
            }
        }
        NoiseKind::Uniform { halfwidth } => {
            for k in 0..steps {
                for c in 0..m {
                    let h = halfwidth[c];
                    if h > 0.0 {
                        out[k * m + c] += rng.random_range(-h..=h);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel noise standard deviation `pct/100 · |u_m|`, where `u_m` is the
/// signed mean of the channel's entries in `u_star`.
pub fn noise_scale_from_percent(u_star: &DVector<f64>, m: usize, pct: f64) -> Result<DVector<f64>> {
    if !(pct > 0.0) {
        return Err(Error::Invalid(format!("noise percentage must be > 0, got {pct}")));
    }
    if m == 0 || u_star.len() % m != 0 {
        return Err(Error::Invalid("input length is not a multiple of the channel count".into()));
    }
    let steps = (u_star.len() / m) as f64;
    Ok(DVector::from_fn(m, |c, _| {
        let mean = u_star.iter().skip(c).step_by(m).sum::<f64>() / steps;
        pct / 100.0 * mean.abs()
    }))
}

/// `U_m = (1/D) Σ U_d`.
pub fn sample_mean(ds: &DemoSet) -> DVector<f64> {
    let mut acc = DVector::zeros(ds.demos[0].len());
    for d in &ds.demos {
        acc += d;
    }
    acc / ds.demos.len() as f64
}

/// Sample covariance `(1/(D-1)) Σ (U_d - U_m)(U_d - U_m)ᵀ`; zero when `D = 1`.
pub fn sample_covariance(ds: &DemoSet) -> DMatrix<f64> {
    let mean = sample_mean(ds);
    let n = mean.len();
    let mut acc = DMatrix::zeros(n, n);
    if ds.demos.len() < 2 {
        return acc;
    }
    for d in &ds.demos {
        let r = d - &mean;
        acc += &r * r.transpose();
    }
    acc / (ds.demos.len() - 1) as f64
}

pub fn rmse(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    check_len("rmse operand", a.len(), b.len())?;
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(((a - b).norm_squared() / a.len() as f64).sqrt())
}
