//! Monte Carlo summaries: confidence intervals, censored bands, stabilization
//! diagnostics and a few small sample statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Result, RwreError};

pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiKind {
    /// Wilson score interval for a proportion.
    Wilson,
    /// Student-t interval for a mean.
    StudentT,
    /// Delta-method interval for a ratio of means.
    Delta,
    /// Deterministic value; zero-width interval.
    Exact,
}

/// Where the randomness of an estimate came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedProvenance {
    pub master_seed: u64,
    pub stream: String,
}

/// A point estimate with its confidence interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub kind: CiKind,
    pub replicas: u64,
    pub censored_fraction: f64,
    /// Standard error when meaningful (0 for exact values).
    pub std_error: f64,
    pub seed: Option<SeedProvenance>,
}

impl EstimateWithCI {
    pub fn exact(value: f64) -> Self {
        EstimateWithCI {
            estimate: value,
            lo: value,
            hi: value,
            level: 1.0,
            kind: CiKind::Exact,
            replicas: 0,
            censored_fraction: 0.0,
            std_error: 0.0,
            seed: None,
        }
    }

    pub fn with_seed(mut self, master_seed: u64, stream: impl Into<String>) -> Self {
        self.seed = Some(SeedProvenance { master_seed, stream: stream.into() });
        self
    }

    pub fn with_censored(mut self, fraction: f64) -> Self {
        self.censored_fraction = fraction.clamp(0.0, 1.0);
        self
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    /// Whether two independent estimates are consistent: the difference is
    /// within `z` combined standard errors (plus `slack`).
    pub fn agrees_with(&self, other: &EstimateWithCI, z: f64, slack: f64) -> bool {
        let se = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        (self.estimate - other.estimate).abs() <= z * se + slack
    }

    pub fn negated(&self) -> EstimateWithCI {
        EstimateWithCI { estimate: -self.estimate, lo: -self.hi, hi: -self.lo, ..self.clone() }
    }
}

pub fn z_value(level: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0)
}

fn t_value(level: f64, dof: f64) -> f64 {
    if dof < 1.0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof).expect("valid t").inverse_cdf(0.5 + level / 2.0)
}

/// Wilson score interval for `successes` out of `n`.
pub fn wilson(successes: u64, n: u64, level: f64) -> EstimateWithCI {
    if n == 0 {
        return EstimateWithCI {
            estimate: f64::NAN,
            lo: 0.0,
            hi: 1.0,
            level,
            kind: CiKind::Wilson,
            replicas: 0,
            censored_fraction: 0.0,
            std_error: f64::NAN,
            seed: None,
        };
    }
    let z = z_value(level);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    EstimateWithCI {
        estimate: p,
        lo: (center - half).max(0.0).min(p),
        hi: (center + half).min(1.0).max(p),
        level,
        kind: CiKind::Wilson,
        replicas: n,
        censored_fraction: 0.0,
        std_error: (p * (1.0 - p) / nf).sqrt(),
        seed: None,
    }
}

/// Streaming mean and variance (Welford).
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut m = Moments::new();
        xs.iter().for_each(|&x| m.push(x));
        m
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    /// Merge in a deterministic left-to-right order (Chan et al.).
    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64) * (o.n as f64) / n as f64;
        self.n = n;
    }

    pub fn estimate(&self, level: f64) -> EstimateWithCI {
        let se = self.std_error();
        let half = if self.n >= 2 { t_value(level, (self.n - 1) as f64) * se } else { f64::INFINITY };
        EstimateWithCI {
            estimate: self.mean,
            lo: self.mean - half,
            hi: self.mean + half,
            level,
            kind: CiKind::StudentT,
            replicas: self.n,
            censored_fraction: 0.0,
            std_error: if self.n >= 2 { se } else { f64::INFINITY },
            seed: None,
        }
    }
}

pub fn mean_ci(xs: &[f64], level: f64) -> EstimateWithCI {
    Moments::from_slice(xs).estimate(level)
}

/// Ratio of means `sum(num) / sum(den)` with a delta-method interval.
pub fn ratio_ci(num: &[f64], den: &[f64], level: f64) -> Result<EstimateWithCI> {
    if num.len() != den.len() || num.len() < 2 {
        return Err(RwreError::InsufficientData("ratio estimator needs at least 2 paired samples".into()));
    }
    let n = num.len() as f64;
    let mn = num.iter().sum::<f64>() / n;
    let md = den.iter().sum::<f64>() / n;
    if md == 0.0 {
        return Err(RwreError::domain("ratio estimator with zero mean denominator"));
    }
    let r = mn / md;
    let mut s = 0.0;
    for (a, b) in num.iter().zip(den) {
        let e = a - r * b;
        s += e * e;
    }
    let var = s / (n - 1.0) / (md * md) / n;
    let se = var.sqrt();
    let z = z_value(level);
    Ok(EstimateWithCI {
        estimate: r,
        lo: r - z * se,
        hi: r + z * se,
        level,
        kind: CiKind::Delta,
        replicas: num.len() as u64,
        censored_fraction: 0.0,
        std_error: se,
        seed: None,
    })
}

/// Two-sided report for events defined at infinite time: `lower` counts
/// outcomes confirmed within the horizon, `upper` adds the censored ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensoredBand {
    pub confirmed: u64,
    pub censored: u64,
    pub total: u64,
    pub lower: f64,
    pub upper: f64,
    /// Wilson lower end for the confirmed fraction.
    pub lower_ci: f64,
    /// Wilson upper end for the confirmed-plus-censored fraction.
    pub upper_ci: f64,
    pub level: f64,
}

impl CensoredBand {
    pub fn new(confirmed: u64, censored: u64, total: u64, level: f64) -> Self {
        let lo = wilson(confirmed, total, level);
        let hi = wilson(confirmed + censored, total, level);
        CensoredBand {
            confirmed,
            censored,
            total,
            lower: lo.estimate,
            upper: hi.estimate,
            lower_ci: lo.lo,
            upper_ci: hi.hi,
            level,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.censored as f64 / self.total as f64
        }
    }

    /// Whether `x` lies within the band widened by the sampling intervals.
    pub fn contains(&self, x: f64) -> bool {
        self.lower_ci <= x && x <= self.upper_ci
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Result of a budget-doubling stabilization test for a possibly infinite
/// expectation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stabilization {
    pub budgets: Vec<u64>,
    pub running_means: Vec<f64>,
    pub relative_change: f64,
    pub divergent: bool,
}

/// Flags a sample mean as divergent when it drifts upward by more than
/// `ratio` (relative) across the last three budget doublings.
///
/// The sample is split into nested prefixes of sizes `n/8, n/4, n/2, n`.
pub fn stabilization(samples: &[f64], ratio: f64) -> Stabilization {
    let n = samples.len();
    let budgets: Vec<u64> = [8usize, 4, 2, 1].iter().map(|k| (n / k) as u64).collect();
    let mut means = Vec::with_capacity(4);
    let mut acc = 0.0;
    let mut upto = 0usize;
    for &b in &budgets {
        let b = b as usize;
        acc += samples[upto..b].iter().sum::<f64>();
        upto = b;
        means.push(if b == 0 { f64::NAN } else { acc / b as f64 });
    }
    let first = means[0];
    let last = means[3];
    let rel = if first.is_finite() && first != 0.0 { (last - first) / first.abs() } else { f64::INFINITY };
    let divergent = !last.is_finite() || rel > ratio;
    Stabilization { budgets, running_means: means, relative_change: rel, divergent }
}

/// Sample autocorrelation at the given lag.
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    if n <= lag + 1 {
        return f64::NAN;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = (0..n - lag).map(|i| (xs[i] - m) * (xs[i + lag] - m)).sum();
    cov / var
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    d
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, se_b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let se = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some((a, b, se))
}

pub fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_known_value() {
        // 8/10 at 95%: Wilson interval (0.4902, 0.9433).
        let e = wilson(8, 10, 0.95);
        assert!((e.lo - 0.4902).abs() < 1e-3, "{}", e.lo);
        assert!((e.hi - 0.9433).abs() < 1e-3, "{}", e.hi);
        let z = wilson(0, 50, 0.95);
        assert_eq!(z.lo, 0.0);
        assert!(z.hi > 0.0 && z.contains(0.0));
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.5).collect();
        let all = Moments::from_slice(&xs);
        let mut a = Moments::from_slice(&xs[..33]);
        a.merge(&Moments::from_slice(&xs[33..]));
        assert!((a.mean - all.mean).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-10);
    }

    #[test]
    fn ks_and_fit() {
        assert_eq!(ks_distance(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_distance(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
        let (a, b, se) = linear_fit(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && se < 1e-12);
    }

    #[test]
    fn stabilization_detects_growth() {
        let finite: Vec<f64> = (0..4000).map(|i| 1.0 + ((i % 7) as f64 - 3.0) * 0.01).collect();
        assert!(!stabilization(&finite, 0.1).divergent);
        let growing: Vec<f64> = (1..=4000).map(|i| i as f64).collect();
        assert!(stabilization(&growing, 0.1).divergent);
    }
}
