//! Sample statistics used by every Monte Carlo estimator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<CompensatedSum>().value() / xs.len() as f64
}

/// Unbiased sample standard deviation (`n - 1` denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss = xs
        .iter()
        .map(|x| (x - m) * (x - m))
        .collect::<CompensatedSum>()
        .value();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Monte Carlo aggregate: mean, standard error, sample count and the seed the
/// samples were derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
    pub seed: u64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64], seed: u64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InsufficientSamples {
                got: samples.len(),
                need: 2,
            });
        }
        let n = samples.len();
        Ok(Self {
            mean: mean(samples),
            stderr: sample_std(samples) / (n as f64).sqrt(),
            count: n,
            seed,
        })
    }

    /// Sample variance implied by the stored standard error.
    pub fn sample_variance(&self) -> f64 {
        self.stderr * self.stderr * self.count as f64
    }

    /// Pools two estimates of the same quantity as if their samples had been
    /// concatenated. The seed of the result is the seed of `self`.
    pub fn pool(&self, other: &Estimate) -> Estimate {
        let (n1, n2) = (self.count as f64, other.count as f64);
        let n = n1 + n2;
        let m = (n1 * self.mean + n2 * other.mean) / n;
        let ss1 = (n1 - 1.0) * self.sample_variance() + n1 * self.mean * self.mean;
        let ss2 = (n2 - 1.0) * other.sample_variance() + n2 * other.mean * other.mean;
        let var = ((ss1 + ss2 - n * m * m) / (n - 1.0)).max(0.0);
        Estimate {
            mean: m,
            stderr: (var / n).sqrt(),
            count: self.count + other.count,
            seed: self.seed,
        }
    }

    /// `|self - value| <= k * stderr`.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr
    }
}

/// Standard error of an empirical frequency `p_hat` from `n` Bernoulli trials.
pub fn binomial_stderr(p_hat: f64, n: usize) -> f64 {
    (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

/// Linear-interpolated quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, q)
}

/// Percentile bootstrap band `(lo, hi)` at the 2.5/97.5 levels for the sample
/// standard deviation.
pub fn bootstrap_std_band(xs: &[f64], reps: usize, seed: u64) -> (f64, f64) {
    let mut rng = stream_rng(seed);
    let n = xs.len();
    let mut stds = Vec::with_capacity(reps);
    let mut buf = vec![0.0; n];
    for _ in 0..reps {
        for b in buf.iter_mut() {
            *b = xs[rng.random_range(0..n)];
        }
        stds.push(sample_std(&buf));
    }
    stds.sort_by(|a, b| a.total_cmp(b));
    (quantile_sorted(&stds, 0.025), quantile_sorted(&stds, 0.975))
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
