//! Empirical quenched large-deviation rates `I(x) ~ -(1/n) log p_h^(n)(0, [nx])`
//! from a log-domain transition DP, with the checks that go with them:
//! superadditivity, convexity on a grid, the 1D symmetry relation and the
//! even/odd reconstruction for walks without holding.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::env_model::{Environment, EnvironmentLaw, TransitionKernel};
use crate::error::{Result, RwreError};
use crate::exact_quenched::{nstep_probabilities, DenseKernels};
use crate::lattice::{JumpSet, Site};
use crate::stats::Moments;

/// Cell cap of the log-domain DP box `(2n+1)^d`.
pub const LDP_CELL_CAP: usize = 10_000_000;

/// Slack of the superadditivity check, in log space.
pub const SUPERADDITIVITY_SLACK: f64 = 1e-12;

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Minkowski gauge of `B_1(1)`, the convex hull of the jump set.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaugeNorm {
    pub jumps: JumpSet,
}

impl GaugeNorm {
    pub fn new(jumps: JumpSet) -> Self {
        GaugeNorm { jumps }
    }

    /// Nearest-neighbour moves (with or without hold) span the l1 ball.
    pub fn eval(&self, x: &[f64]) -> f64 {
        x.iter().take(self.jumps.dim).map(|c| c.abs()).sum()
    }

    /// Fewest steps from 0 to `y`.
    pub fn min_steps(&self, y: Site) -> i64 {
        y.l1()
    }
}

/// `log p^(n)(start, .)` on the box `start + [-R, R]^d`.
#[derive(Clone, Debug)]
pub struct LogDistribution {
    pub dim: usize,
    pub n: u64,
    pub start: Site,
    radius: i64,
    side: usize,
    logp: Vec<f64>,
}

impl LogDistribution {
    fn offset(&self, y: Site) -> Option<usize> {
        let mut idx = 0usize;
        for a in (0..self.dim).rev() {
            let c = y.0[a] - self.start.0[a] + self.radius;
            if c < 0 || c > 2 * self.radius {
                return None;
            }
            idx = idx * self.side + c as usize;
        }
        Some(idx)
    }

    pub fn log_get(&self, y: Site) -> f64 {
        self.offset(y).map_or(f64::NEG_INFINITY, |i| self.logp[i])
    }

    /// Total mass reconstructed in the linear domain.
    pub fn total(&self) -> f64 {
        let m = self.logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = self.logp.iter().map(|l| (l - m).exp()).sum();
        s * m.exp()
    }

    /// Sites with positive mass.
    pub fn support(&self) -> Vec<Site> {
        (0..self.logp.len())
            .filter(|&i| self.logp[i] > f64::NEG_INFINITY)
            .map(|i| self.start + DenseKernels::site_of(self.dim, self.side, self.radius, i))
            .collect()
    }
}

/// Log-domain DP from `start`, returning a snapshot at each `n` in `ns`.
pub fn log_nstep_snapshots(env: &Environment, start: Site, ns: &[u64]) -> Result<Vec<LogDistribution>> {
    let nmax = ns.iter().copied().max().unwrap_or(0);
    let r = nmax as i64;
    let dk = DenseKernels::new(env, start, r, LDP_CELL_CAP)?;
    let jumps = env.jumps();
    let strides = dk.strides(&jumps);
    let nm = jumps.len();
    let cells = dk.kernels.len();
    let logk: Vec<f64> = dk.kernels.iter().flat_map(|k| (0..nm).map(move |m| k.prob(m).ln())).collect();
    let mut cur = vec![f64::NEG_INFINITY; cells];
    let center = (0..dk.dim).fold(0usize, |idx, _| idx * dk.side + r as usize);
    cur[center] = 0.0;
    let mut next = vec![f64::NEG_INFINITY; cells];
    let snap = |cur: &Vec<f64>, n: u64| LogDistribution { dim: dk.dim, n, start, radius: r, side: dk.side, logp: cur.clone() };
    let mut out: Vec<(u64, LogDistribution)> = Vec::new();
    if ns.contains(&0) {
        out.push((0, snap(&cur, 0)));
    }
    for t in 1..=nmax {
        next.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        for idx in 0..cells {
            let lp = cur[idx];
            if lp == f64::NEG_INFINITY {
                continue;
            }
            let lk = &logk[idx * nm..(idx + 1) * nm];
            for (m, s) in strides.iter().enumerate() {
                if lk[m] > f64::NEG_INFINITY {
                    let j = (idx as isize + s) as usize;
                    next[j] = log_add(next[j], lp + lk[m]);
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        if ns.contains(&t) {
            out.push((t, snap(&cur, t)));
        }
    }
    Ok(ns.iter().map(|n| out.iter().find(|(t, _)| t == n).expect("snapshot taken").1.clone()).collect())
}

/// `[nx]`, the componentwise integer part rounded toward zero.
pub fn scaled_point(x: &[f64], n: u64) -> Site {
    let mut s = Site::ORIGIN;
    for (a, c) in x.iter().enumerate() {
        s.0[a] = (c * n as f64).trunc() as i64;
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub x: Vec<f64>,
    pub n: u64,
    pub target: Site,
    /// `-(1/n) log p_h^(n)(0, [nx])`; `+inf` when flagged.
    pub i_hat: f64,
    pub infinite: bool,
    /// `|x|_1 > 1`.
    pub outside_ball: bool,
    pub env_seed: u64,
}

fn require_holding(env: &Environment) -> Result<()> {
    if env.jumps().hold_index().is_none() {
        return Err(RwreError::domain("rate estimates use the holding-time walk; call with_holding first"));
    }
    Ok(())
}

fn rate_from(dist: &LogDistribution, x: &[f64], env_seed: u64) -> RateEstimate {
    let target = scaled_point(x, dist.n);
    let outside_ball = x.iter().map(|c| c.abs()).sum::<f64>() > 1.0 + 1e-15;
    let lp = dist.log_get(target);
    let infinite = outside_ball || lp == f64::NEG_INFINITY;
    let i_hat = if infinite { f64::INFINITY } else { (-lp / dist.n as f64).max(0.0) };
    RateEstimate { x: x.to_vec(), n: dist.n, target, i_hat, infinite, outside_ball, env_seed }
}

pub fn empirical_rate(env: &Environment, x: &[f64], n: u64) -> Result<RateEstimate> {
    require_holding(env)?;
    if x.len() != env.dim() || n == 0 {
        return Err(RwreError::config("rate point must match the dimension and n >= 1"));
    }
    let d = log_nstep_snapshots(env, Site::ORIGIN, &[n])?;
    Ok(rate_from(&d[0], x, env.master_seed))
}

/// `sup_lambda (lambda . x - log sum_e p_e e^{lambda . e})` for a single
/// kernel, by damped Newton on the concave objective.
pub fn legendre_rate(kernel: &TransitionKernel, x: &[f64]) -> f64 {
    let j = kernel.jumps;
    let d = j.dim;
    let vecs: Vec<(Vec<f64>, f64)> = (0..j.len())
        .filter(|&m| kernel.prob(m) > 0.0)
        .map(|m| ((0..d).map(|a| j.vector(m).0[a] as f64).collect(), kernel.prob(m)))
        .collect();
    let objective = |lam: &[f64]| -> f64 {
        let z: f64 = vecs.iter().map(|(v, p)| p * v.iter().zip(lam).map(|(a, b)| a * b).sum::<f64>().exp()).sum();
        lam.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - z.ln()
    };
    let mut lam = vec![0.0; d];
    let mut f = objective(&lam);
    for _ in 0..500 {
        // Gradient and Hessian of Lambda at lam (tilted mean and covariance).
        let w: Vec<f64> = vecs.iter().map(|(v, p)| p * v.iter().zip(&lam).map(|(a, b)| a * b).sum::<f64>().exp()).collect();
        let z: f64 = w.iter().sum();
        let mean: Vec<f64> = (0..d).map(|a| vecs.iter().zip(&w).map(|((v, _), wi)| wi * v[a]).sum::<f64>() / z).collect();
        let grad: Vec<f64> = (0..d).map(|a| x[a] - mean[a]).collect();
        if grad.iter().map(|g| g.abs()).fold(0.0, f64::max) < 1e-13 {
            break;
        }
        let mut h = vec![vec![0.0; d]; d];
        for a in 0..d {
            for b in 0..d {
                h[a][b] = vecs.iter().zip(&w).map(|((v, _), wi)| wi * (v[a] - mean[a]) * (v[b] - mean[b])).sum::<f64>() / z
                    + if a == b { 1e-12 } else { 0.0 };
            }
        }
        let step = solve_small(&h, &grad).unwrap_or_else(|| grad.clone());
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = lam.iter().zip(&step).map(|(l, s)| l + t * s).collect();
            let fc = objective(&cand);
            if fc >= f || t < 1e-12 {
                if fc >= f {
                    lam = cand;
                    f = fc;
                }
                break;
            }
            t *= 0.5;
        }
        if t < 1e-12 || lam.iter().any(|l| l.abs() > 700.0) {
            break;
        }
    }
    f.max(0.0)
}

fn solve_small(h: &[Vec<f64>], g: &[f64]) -> Option<Vec<f64>> {
    let n = g.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| h[i][j]);
    let b = nalgebra::DVector::from_column_slice(g);
    m.lu().solve(&b).map(|v| v.iter().copied().collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuperadditivityCase {
    pub n: u64,
    pub m: u64,
    pub x: Site,
    pub y: Site,
    pub log_lhs: f64,
    pub log_rhs: f64,
    pub holds: bool,
}

/// `p^(n+m)(0, x+y) >= p^(n)(0, x) p^(m)(x, x+y)`.
pub fn superadditivity_check(env: &Environment, n: u64, m: u64, x: Site, y: Site) -> Result<SuperadditivityCase> {
    let a = log_nstep_snapshots(env, Site::ORIGIN, &[n, n + m])?;
    let b = log_nstep_snapshots(env, x, &[m])?;
    let log_lhs = a[1].log_get(x + y);
    let log_rhs = a[0].log_get(x) + b[0].log_get(x + y);
    let holds = log_rhs == f64::NEG_INFINITY || log_rhs - log_lhs <= SUPERADDITIVITY_SLACK;
    Ok(SuperadditivityCase { n, m, x, y, log_lhs, log_rhs, holds })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateRow {
    pub x: Vec<f64>,
    pub n: u64,
    pub i_hat: f64,
    pub infinite: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Extrapolated {
    pub x: Vec<f64>,
    pub i_hat_prev: f64,
    pub i_hat_last: f64,
    /// Richardson value under an error model `c ln n / n`.
    pub richardson: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateCurve {
    pub rows: Vec<RateRow>,
    pub extrapolated: Vec<Extrapolated>,
    /// Midpoint-convexity violations at the largest `n`, beyond
    /// `2 ln n / n`.
    pub convexity_violations: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    pub convexity_tolerance: f64,
    /// `max_x |I(n_last) - I(n_prev)|` over finite entries.
    pub max_drift: f64,
}

pub fn rate_curve(env: &Environment, n_grid: &[u64], x_grid: &[Vec<f64>]) -> Result<RateCurve> {
    require_holding(env)?;
    if env.dim() > 2 {
        return Err(RwreError::domain("rate curves are tabulated in d = 1 and d = 2"));
    }
    if n_grid.is_empty() || x_grid.iter().any(|x| x.len() != env.dim()) {
        return Err(RwreError::config("rate curve needs a non-empty n grid and points of the law's dimension"));
    }
    let mut ns = n_grid.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let snaps = log_nstep_snapshots(env, Site::ORIGIN, &ns)?;
    let mut rows = Vec::new();
    for s in &snaps {
        for x in x_grid {
            let r = rate_from(s, x, env.master_seed);
            rows.push(RateRow { x: x.clone(), n: s.n, i_hat: r.i_hat, infinite: r.infinite });
        }
    }
    let last = snaps.last().expect("non-empty grid");
    let at = |s: &LogDistribution, x: &[f64]| rate_from(s, x, env.master_seed).i_hat;
    let mut extrapolated = Vec::new();
    let mut max_drift: f64 = 0.0;
    if snaps.len() >= 2 {
        let prev = &snaps[snaps.len() - 2];
        let g = |n: u64| (n as f64).ln() / n as f64;
        for x in x_grid {
            let (a, b) = (at(prev, x), at(last, x));
            let rich = (b * g(prev.n) - a * g(last.n)) / (g(prev.n) - g(last.n));
            if a.is_finite() && b.is_finite() {
                max_drift = max_drift.max((b - a).abs());
            }
            extrapolated.push(Extrapolated { x: x.clone(), i_hat_prev: a, i_hat_last: b, richardson: rich });
        }
    }
    let tol = 2.0 * (last.n as f64).ln() / last.n as f64;
    let mut violations = Vec::new();
    for p in x_grid {
        for q in x_grid {
            if p >= q {
                continue;
            }
            let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
            if let Some(mx) = x_grid.iter().find(|z| z.iter().zip(&mid).all(|(a, b)| (a - b).abs() < 1e-12)) {
                let (ip, iq, im) = (at(last, p), at(last, q), at(last, mx));
                if ip.is_finite() && iq.is_finite() && im > 0.5 * (ip + iq) + tol {
                    violations.push((p.clone(), mx.clone(), q.clone()));
                }
            }
        }
    }
    Ok(RateCurve { rows, extrapolated, convexity_violations: violations, convexity_tolerance: tol, max_drift })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymmetryRow {
    pub x: f64,
    pub i_minus: f64,
    pub i_plus: f64,
    /// `I(-x) - I(x)`.
    pub lhs: f64,
    /// `-x E[log rho]`.
    pub rhs: f64,
    pub within: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub n: u64,
    pub e_log_rho: f64,
    pub tolerance: f64,
    pub rows: Vec<SymmetryRow>,
}

/// Finite-`n` band for the symmetry relation: `4 ln n / n` plus, for random
/// laws, `3 sd(log rho) |x| / sqrt(n)` for the potential fluctuation.
pub fn symmetry_tolerance(n: u64, x: f64, sd_log_rho: f64) -> f64 {
    let nf = n as f64;
    4.0 * nf.ln() / nf + 3.0 * sd_log_rho * x.abs() / nf.sqrt()
}

pub fn symmetry_check_1d(env: &Environment, x_grid: &[f64], n: u64) -> Result<SymmetryReport> {
    require_holding(env)?;
    let s = crate::oned::summary(&env.law)?;
    let snap = log_nstep_snapshots(env, Site::ORIGIN, &[n])?.remove(0);
    let sd = s.var_log_rho.sqrt();
    let rows = x_grid
        .iter()
        .map(|&x| {
            let ip = rate_from(&snap, &[x], env.master_seed).i_hat;
            let im = rate_from(&snap, &[-x], env.master_seed).i_hat;
            let lhs = im - ip;
            let rhs = -x * s.e_log_rho;
            SymmetryRow { x, i_minus: im, i_plus: ip, lhs, rhs, within: (lhs - rhs).abs() <= symmetry_tolerance(n, x, sd) }
        })
        .collect();
    Ok(SymmetryReport { n, e_log_rho: s.e_log_rho, tolerance: symmetry_tolerance(n, x_grid.iter().fold(0.0, |m, x| m.max(x.abs())), sd), rows })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvenOddReport {
    pub n: u64,
    /// `max_y |p^(2n+1)(0, y) - sum_i omega(0, e_i) p^(2n)(e_i, y)|`.
    pub residual: f64,
    pub direct_at_x: f64,
    pub reconstructed_at_x: f64,
    pub direct_mass: f64,
    pub reconstructed_mass: f64,
}

/// `P_0[X_{2n+1} = y] = sum_i omega(0, e_i) P_{e_i}[X_{2n} = y]` on all `y`.
pub fn even_odd_reconstruction(env: &Environment, n: u64, x: Site) -> Result<EvenOddReport> {
    if env.jumps().hold_index().is_some() {
        return Err(RwreError::domain("even/odd reconstruction is for the walk without holding"));
    }
    let direct = nstep_probabilities(env, Site::ORIGIN, 2 * n + 1, false, LDP_CELL_CAP)?;
    let k0 = env.kernel_at(Site::ORIGIN);
    let jumps = env.jumps();
    let parts: Vec<(f64, crate::exact_quenched::NStepDistribution)> = (0..jumps.len())
        .map(|m| Ok((k0.prob(m), nstep_probabilities(env, jumps.vector(m), 2 * n, false, LDP_CELL_CAP)?)))
        .collect::<Result<_>>()?;
    let recon = |y: Site| parts.iter().map(|(w, d)| w * d.get(y)).sum::<f64>();
    let r = (2 * n + 1) as i64;
    let mut residual: f64 = 0.0;
    let mut mass = 0.0;
    for y in crate::walk_sim::box_sites(env.dim(), r) {
        let v = recon(y);
        mass += v;
        residual = residual.max((direct.get(y) - v).abs());
    }
    Ok(EvenOddReport {
        n,
        residual,
        direct_at_x: direct.get(x),
        reconstructed_at_x: recon(x),
        direct_mass: direct.total(),
        reconstructed_mass: mass,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedSpread {
    pub x: Vec<f64>,
    pub n: u64,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
}

/// `I_hat` across independent environments: the limit is deterministic, so
/// the spread should shrink with `n`.
pub fn rate_seed_spread(law: &Arc<EnvironmentLaw>, hold: f64, x: &[f64], n: u64, seeds: &[u64]) -> Result<SeedSpread> {
    let per_seed: Vec<f64> = seeds
        .iter()
        .map(|&s| Ok(empirical_rate(&Environment::from_arc(law.clone(), s).with_holding(Some(hold))?, x, n)?.i_hat))
        .collect::<Result<_>>()?;
    let m = Moments::from_slice(&per_seed);
    Ok(SeedSpread { x: x.to_vec(), n, mean: m.mean, std_dev: m.variance().sqrt(), per_seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hold_env(law: EnvironmentLaw, h: f64, seed: u64) -> Environment {
        Environment::new(law, seed).with_holding(Some(h)).unwrap()
    }

    #[test]
    fn conservation_and_support() {
        let env = hold_env(EnvironmentLaw::two_point(0.3, 0.9).unwrap(), 0.2, 4);
        let s = log_nstep_snapshots(&env, Site::ORIGIN, &[1, 7, 60]).unwrap();
        for d in &s {
            assert!((d.total() - 1.0).abs() < 1e-12);
            let sup = d.support();
            assert_eq!(sup.len() as u64, 2 * d.n + 1);
            assert!(sup.iter().all(|y| y.l1() as u64 <= d.n));
        }
        let plain = Environment::new(EnvironmentLaw::two_point(0.3, 0.9).unwrap(), 4);
        let d = log_nstep_snapshots(&plain, Site::ORIGIN, &[5]).unwrap().remove(0);
        assert!(d.support().iter().all(|y| y.l1() % 2 == 1));
    }

    #[test]
    fn homogeneous_rate_matches_legendre() {
        let k = TransitionKernel::one_dim(0.6).unwrap().with_hold(0.2);
        assert!(legendre_rate(&k, &[0.16]) < 1e-12);
        let env = hold_env(EnvironmentLaw::homogeneous_1d(0.6).unwrap(), 0.2, 0);
        for x in [0.0, 0.2, 0.4] {
            let r = empirical_rate(&env, &[x], 400).unwrap();
            assert!((r.i_hat - legendre_rate(&k, &[x])).abs() < 0.05);
        }
        assert!(empirical_rate(&env, &[1.2], 50).unwrap().infinite);
    }

    #[test]
    fn legendre_two_dim_quadratic_near_mean() {
        let k = TransitionKernel::symmetric(2).unwrap().with_hold(0.2);
        // Covariance 0.4 per axis: I(x) ~ |x|^2 / 0.8 near 0.
        let v = legendre_rate(&k, &[0.01, 0.0]);
        assert!((v - 0.0001 / 0.8).abs() < 1e-6);
    }

    #[test]
    fn superadditivity_small_cases() {
        let env = hold_env(EnvironmentLaw::dirichlet(2, &[1.0; 4]).unwrap(), 0.1, 8);
        let c = superadditivity_check(&env, 2, 2, Site::ORIGIN, Site::ORIGIN).unwrap();
        assert!(c.holds && c.log_rhs < c.log_lhs);
    }

    #[test]
    fn even_odd_one_step() {
        let env = Environment::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap(), 0);
        let r = even_odd_reconstruction(&env, 1, Site::new(&[1])).unwrap();
        // P[X_3 = 1] = 3/8 for the simple walk.
        assert!((r.direct_at_x - 0.375).abs() < 1e-15);
        assert!(r.residual < 1e-15);
    }

    #[test]
    fn gauge_sandwich() {
        let g = GaugeNorm::new(JumpSet::new(2, true).unwrap());
        let y = Site::new(&[3, -4]);
        let norm = g.eval(&[3.0, -4.0]);
        assert!(norm <= g.min_steps(y) as f64 && g.min_steps(y) as f64 <= norm + 1.0);
    }
}
