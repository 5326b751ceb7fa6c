//! Seeded Monte Carlo oracles: killed drifted-Brownian path simulation with
//! Brownian-bridge absorption correction, exact Bessel-3 sampling through
//! 3D Gaussian norms, and ratio-estimator statistics.
//!
//! Every path owns its own ChaCha stream keyed by (seed, path index), so a
//! batch is bit-identical under any parallel split of the path range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::DriftParams;
use crate::error::{QsdError, Result};
use crate::measures::{InitialMeasure, MeasureSpec};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub step: f64,
    pub seed: u64,
    /// paths per work unit when splitting across threads
    pub batch_size: usize,
}

impl McConfig {
    pub fn new(n_paths: usize, step: f64, seed: u64) -> Result<Self> {
        if n_paths < 1_000 {
            return Err(QsdError::InvalidArgument(format!(
                "n_paths = {n_paths} below the minimum of 1000"
            )));
        }
        if !(step > 0.0 && step <= 0.1) {
            return Err(QsdError::InvalidArgument(format!(
                "step = {step} outside (0, 0.1]"
            )));
        }
        Ok(Self { n_paths, step, seed, batch_size: 4096 })
    }
}

/// Where a batch came from, for manifests and reruns.
#[derive(Debug, Clone, Serialize)]
pub struct SeedLineage {
    pub seed: u64,
    pub kind: String,
}

/// A simulated sample set. Endpoints of absorbed paths are recorded as 0.
#[derive(Debug, Clone)]
pub struct McBatch {
    pub endpoints: Vec<f64>,
    pub survived: Vec<bool>,
    pub weight: f64,
    pub seed_lineage: SeedLineage,
    pub step: f64,
    pub r: Option<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_effective: usize,
}

/// JSON-facing batch digest.
#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub n: usize,
    pub survived: usize,
    pub mean: f64,
    pub se: f64,
    pub seed: u64,
    pub h: f64,
    pub r: Option<f64>,
    pub t: f64,
}

impl McBatch {
    pub fn n(&self) -> usize {
        self.endpoints.len()
    }

    pub fn n_survived(&self) -> usize {
        self.survived.iter().filter(|&&s| s).count()
    }

    pub fn survival_fraction(&self) -> f64 {
        self.n_survived() as f64 / self.n() as f64
    }

    /// Survival fraction with its binomial standard error.
    pub fn survival_estimate(&self) -> Estimate {
        let p = self.survival_fraction();
        let n = self.n() as f64;
        Estimate {
            mean: p,
            std_error: (p * (1.0 - p) / n).sqrt(),
            n_effective: self.n(),
        }
    }

    pub fn survivor_endpoints(&self) -> Vec<f64> {
        self.endpoints
            .iter()
            .zip(&self.survived)
            .filter(|(_, &s)| s)
            .map(|(&e, _)| e)
            .collect()
    }

    pub fn summary(&self) -> Result<BatchSummary> {
        let est = estimate_expectation(self, |y| y)?;
        Ok(BatchSummary {
            n: self.n(),
            survived: self.n_survived(),
            mean: est.mean,
            se: est.std_error,
            seed: self.seed_lineage.seed,
            h: self.step,
            r: self.r,
            t: self.t,
        })
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-path stream: a 256-bit ChaCha key expanded from (seed, path index).
fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed ^ mix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15));
    for chunk in key.chunks_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        chunk.copy_from_slice(&mix64(state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Inverse-CDF sampler for an initial measure; exact for atomic measures
/// and for the piecewise-linear density of grid measures.
enum StartSampler {
    Atomic { xs: Vec<f64>, cum: Vec<f64> },
    Grid { x: Vec<f64>, pdf: Vec<f64>, cum: Vec<f64> },
}

impl StartSampler {
    fn build(measure: &InitialMeasure) -> Self {
        match measure.to_spec() {
            MeasureSpec::Atomic { atoms } => {
                let xs: Vec<f64> = atoms.iter().map(|a| a.0).collect();
                let mut cum = Vec::with_capacity(atoms.len());
                let mut acc = 0.0;
                for &(_, w) in &atoms {
                    acc += w;
                    cum.push(acc);
                }
                StartSampler::Atomic { xs, cum }
            }
            MeasureSpec::Grid { x, pdf, .. } => {
                let mut cum = vec![0.0];
                for i in 0..x.len() - 1 {
                    let m = 0.5 * (pdf[i] + pdf[i + 1]) * (x[i + 1] - x[i]);
                    cum.push(cum[i] + m);
                }
                StartSampler::Grid { x, pdf, cum }
            }
        }
    }

    fn sample(&self, u: f64) -> f64 {
        match self {
            StartSampler::Atomic { xs, cum } => {
                let total = *cum.last().unwrap();
                let target = u * total;
                let i = cum.partition_point(|&c| c < target).min(xs.len() - 1);
                xs[i]
            }
            StartSampler::Grid { x, pdf, cum } => {
                let total = *cum.last().unwrap();
                let target = u * total;
                let i = cum.partition_point(|&c| c < target).saturating_sub(1).min(x.len() - 2);
                let m = target - cum[i];
                let h = x[i + 1] - x[i];
                let (p0, p1) = (pdf[i], pdf[i + 1]);
                let slope = (p1 - p0) / h;
                // solve p0 d + slope d^2 / 2 = m for d in [0, h]
                let d = if slope.abs() < 1e-14 * p0.abs().max(1e-300) {
                    if p0 > 0.0 { m / p0 } else { 0.0 }
                } else {
                    let disc = (p0 * p0 + 2.0 * slope * m).max(0.0);
                    (disc.sqrt() - p0) / slope
                };
                x[i] + d.clamp(0.0, h)
            }
        }
    }
}

/// Euler paths of `X_t = X_0 + B_t - r t` absorbed at 0, with the exact
/// Brownian-bridge crossing probability `e^{-2ab/h}` applied between
/// positive grid points (the drift does not change the bridge law given
/// the endpoints). The crossing draw is skipped when `2ab/h > 40`, where
/// the probability is below 4.3e-18.
pub fn simulate_killed(
    params: DriftParams,
    start: &InitialMeasure,
    t: f64,
    cfg: &McConfig,
) -> Result<McBatch> {
    if !(t > 0.0) {
        return Err(QsdError::InvalidArgument(format!("t = {t} must be positive")));
    }
    let sampler = StartSampler::build(start);
    let r = params.r();
    let h = cfg.step;
    let n_full = (t / h).floor() as usize;
    let h_last = t - n_full as f64 * h;
    let results: Vec<(f64, bool)> = (0..cfg.n_paths)
        .into_par_iter()
        .with_min_len(cfg.batch_size)
        .map(|i| {
            let mut rng = path_rng(cfg.seed, i as u64);
            let mut x = sampler.sample(rng.gen::<f64>());
            let mut alive = x > 0.0;
            let mut step_index = 0usize;
            while alive && step_index <= n_full {
                let hi = if step_index < n_full { h } else { h_last };
                step_index += 1;
                if hi <= 0.0 {
                    break;
                }
                let z: f64 = rng.sample(StandardNormal);
                let x_next = x + z * hi.sqrt() - r * hi;
                if x_next <= 0.0 {
                    alive = false;
                    break;
                }
                let q = 2.0 * x * x_next / hi;
                if q <= 40.0 && rng.gen::<f64>() < (-q).exp() {
                    alive = false;
                    break;
                }
                x = x_next;
            }
            if alive { (x, true) } else { (0.0, false) }
        })
        .collect();
    let (endpoints, survived) = results.into_iter().unzip();
    Ok(McBatch {
        endpoints,
        survived,
        weight: 1.0,
        seed_lineage: SeedLineage { seed: cfg.seed, kind: "killed".into() },
        step: h,
        r: Some(r),
        t,
    })
}

/// Exact Bessel-3 marginal samples: `|x0 e_1 + sqrt(t) N(0, I_3)|`.
/// No discretization bias.
pub fn simulate_bessel3(x0: f64, t: f64, cfg: &McConfig) -> Result<McBatch> {
    if !(x0 >= 0.0 && t > 0.0) {
        return Err(QsdError::InvalidArgument(format!("need x0 >= 0, t > 0; got {x0}, {t}")));
    }
    let st = t.sqrt();
    let endpoints: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .with_min_len(cfg.batch_size)
        .map(|i| {
            let mut rng = path_rng(cfg.seed, i as u64);
            let n1: f64 = rng.sample(StandardNormal);
            let n2: f64 = rng.sample(StandardNormal);
            let n3: f64 = rng.sample(StandardNormal);
            let a = x0 + st * n1;
            (a * a + t * (n2 * n2 + n3 * n3)).sqrt()
        })
        .collect();
    let n = endpoints.len();
    Ok(McBatch {
        endpoints,
        survived: vec![true; n],
        weight: 1.0,
        seed_lineage: SeedLineage { seed: cfg.seed, kind: "bessel3".into() },
        step: 0.0,
        r: None,
        t,
    })
}

/// Conditional mean of `f` over survivors, with the delta-method standard
/// error of the ratio estimator `sum f 1_surv / sum 1_surv` (which reduces
/// to the plain standard error of `f` among survivors).
pub fn estimate_expectation<F: Fn(f64) -> f64>(batch: &McBatch, f: F) -> Result<Estimate> {
    let survivors = batch.survivor_endpoints();
    if survivors.is_empty() {
        return Err(QsdError::InvalidArgument("no surviving paths in batch".into()));
    }
    let k = survivors.len() as f64;
    let mean = survivors.iter().map(|&y| f(y)).sum::<f64>() / k;
    let ss = survivors.iter().map(|&y| (f(y) - mean).powi(2)).sum::<f64>();
    Ok(Estimate {
        mean,
        std_error: ss.sqrt() / k,
        n_effective: survivors.len(),
    })
}

/// One-sample Kolmogorov-Smirnov statistic of samples against a CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &y) in sorted.iter().enumerate() {
        let c = cdf(y);
        d = d.max((c - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - c).abs());
    }
    d
}

/// KS statistic of a weighted empirical CDF against a reference CDF,
/// together with the effective sample size `(sum w)^2 / sum w^2`.
pub fn weighted_ks_statistic<F: Fn(f64) -> f64>(
    samples: &[f64],
    weights: &[f64],
    cdf: F,
) -> (f64, f64) {
    assert_eq!(samples.len(), weights.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].partial_cmp(&samples[b]).unwrap());
    let total: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    let mut acc = 0.0;
    let mut d: f64 = 0.0;
    for &i in &order {
        let c = cdf(samples[i]);
        d = d.max((c - acc / total).abs());
        acc += weights[i];
        d = d.max((acc / total - c).abs());
    }
    (d, total * total / sq)
}

/// 1%-level critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: f64) -> f64 {
    1.628 / n.sqrt()
}
