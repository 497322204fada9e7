//! One-dimensional analysis: `rho = omega(x, -1) / omega(x, +1)`
//! statistics, transience classification, the moment conditions (B+) and
//! (B-), velocities, the invariant density of the environment seen from the
//! particle, the KKS exponent, Sinai scaling and the harmonic potential.

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::digamma;
use std::sync::Arc;

use crate::env_model::{Environment, EnvironmentLaw, LawVariant, TransitionKernel};
use crate::error::{Result, RwreError};
use crate::lattice::{Direction, Site};
use crate::renewal::{estimate_velocity, simulate_records};
use crate::rng::StreamKey;
use crate::stats::{median, EstimateWithCI, Moments, DEFAULT_LEVEL};
use crate::walk_sim::{apply_r, par_replicas, replica_env, replica_rng, EnvWindow, LocalFunctional, WalkState, Walker};

/// Law of `rho_0` under an i.i.d. one-dimensional environment law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RhoLaw {
    /// Atoms `(rho, weight)`; `rho` may be `0` or `+inf`.
    Atoms(Vec<(f64, f64)>),
    /// `omega(0, +1) ~ Beta(a_right, a_left)`, so `rho` is beta-prime.
    BetaPrime { a_right: f64, a_left: f64 },
}

fn rho_of(p_right: f64) -> f64 {
    (1.0 - p_right) / p_right
}

impl RhoLaw {
    pub fn from_law(law: &EnvironmentLaw) -> Result<Self> {
        if law.dim() != 1 {
            return Err(RwreError::domain("one-dimensional analysis needs a d = 1 law"));
        }
        let atoms = match &law.variant {
            LawVariant::Homogeneous(k) => vec![(rho_of(k.prob(0)), 1.0)],
            LawVariant::OneDimDiscrete { atoms } => atoms.iter().map(|(p, w)| (rho_of(*p), *w)).collect(),
            LawVariant::KernelMixture { kernels } => kernels.iter().map(|(k, w)| (rho_of(k.prob(0)), *w)).collect(),
            LawVariant::DirichletIid { alpha, .. } => {
                return Ok(RhoLaw::BetaPrime { a_right: alpha[0], a_left: alpha[1] });
            }
            LawVariant::BalancedIid { .. } => vec![(1.0, 1.0)],
            _ => return Err(RwreError::domain("law has no one-dimensional rho representation")),
        };
        Ok(RhoLaw::Atoms(atoms))
    }

    /// `E[rho^s]` (may be `+inf`).
    pub fn mean_pow(&self, s: f64) -> f64 {
        match self {
            RhoLaw::Atoms(a) => a
                .iter()
                .map(|(r, w)| {
                    if s == 0.0 {
                        *w
                    } else {
                        w * r.powf(s)
                    }
                })
                .sum(),
            RhoLaw::BetaPrime { a_right, a_left } => {
                if s <= -a_left || s >= *a_right {
                    f64::INFINITY
                } else {
                    (ln_beta(a_left + s, a_right - s) - ln_beta(*a_left, *a_right)).exp()
                }
            }
        }
    }

    pub fn mean_log(&self) -> f64 {
        match self {
            RhoLaw::Atoms(a) => a.iter().map(|(r, w)| w * r.ln()).sum(),
            RhoLaw::BetaPrime { a_right, a_left } => digamma(*a_left) - digamma(*a_right),
        }
    }

    pub fn var_log(&self) -> f64 {
        match self {
            RhoLaw::Atoms(a) => {
                let m = self.mean_log();
                if !m.is_finite() {
                    return 0.0;
                }
                a.iter().map(|(r, w)| w * (r.ln() - m).powi(2)).sum()
            }
            RhoLaw::BetaPrime { a_right, a_left } => trigamma(*a_left) + trigamma(*a_right),
        }
    }

    /// Largest value of `rho` in the support.
    pub fn sup(&self) -> f64 {
        match self {
            RhoLaw::Atoms(a) => a.iter().map(|(r, _)| *r).fold(0.0, f64::max),
            RhoLaw::BetaPrime { .. } => f64::INFINITY,
        }
    }

    pub fn prob_above_one(&self) -> f64 {
        match self {
            RhoLaw::Atoms(a) => a.iter().filter(|(r, _)| *r > 1.0).map(|(_, w)| w).sum(),
            RhoLaw::BetaPrime { .. } => 0.5, // any positive value: the support is (0, inf)
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, RhoLaw::Atoms(a) if a.len() == 1 || a.windows(2).all(|w| w[0].0 == w[1].0))
    }

    /// Law of `rho` is invariant under `rho -> 1/rho`.
    pub fn symmetric_by_construction(&self) -> bool {
        match self {
            RhoLaw::Atoms(a) => a.iter().all(|(r, w)| {
                a.iter().any(|(s, v)| ((r * s) - 1.0).abs() < 1e-12 && (w - v).abs() < 1e-12)
            }),
            RhoLaw::BetaPrime { a_right, a_left } => a_right == a_left,
        }
    }
}

/// Derivative of the digamma function by central differences.
fn trigamma(x: f64) -> f64 {
    let h = 1e-5 * x.max(1.0);
    (digamma(x + h) - digamma(x - h)) / (2.0 * h)
}

/// The mirrored law, `omega(x, +1) <-> omega(x, -1)`.
pub fn mirror_law(law: &EnvironmentLaw) -> Result<EnvironmentLaw> {
    let swap = |k: &TransitionKernel| TransitionKernel::one_dim(k.prob(1));
    let out = match &law.variant {
        LawVariant::Homogeneous(k) => EnvironmentLaw::homogeneous(swap(k)?)?,
        LawVariant::OneDimDiscrete { atoms } => {
            EnvironmentLaw::one_dim_discrete(&atoms.iter().map(|(p, w)| (1.0 - p, *w)).collect::<Vec<_>>())?
        }
        LawVariant::KernelMixture { kernels } if law.dim() == 1 => EnvironmentLaw::mixture(
            &kernels.iter().map(|(k, w)| Ok((swap(k)?, *w))).collect::<Result<Vec<_>>>()?,
        )?,
        LawVariant::DirichletIid { dim: 1, alpha } => EnvironmentLaw::dirichlet(1, &[alpha[1], alpha[0]])?,
        _ => return Err(RwreError::domain("mirror is defined for one-dimensional laws")),
    };
    Ok(out.with_kappa(law.declared_kappa))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneDimSummary {
    pub e_log_rho: f64,
    pub e_rho: f64,
    pub e_inv_rho: f64,
    pub var_log_rho: f64,
}

pub fn summary(law: &EnvironmentLaw) -> Result<OneDimSummary> {
    let r = RhoLaw::from_law(law)?;
    let s = OneDimSummary { e_log_rho: r.mean_log(), e_rho: r.mean_pow(1.0), e_inv_rho: r.mean_pow(-1.0), var_log_rho: r.var_log() };
    // Jensen: E[rho] >= exp(E[log rho]).
    assert!(
        !(s.e_rho.is_finite() && s.e_log_rho.is_finite()) || s.e_rho >= s.e_log_rho.exp() * (1.0 - 1e-12),
        "Jensen inequality violated: {s:?}"
    );
    Ok(s)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeClass {
    TransientRight,
    TransientLeft,
    RecurrentSinai,
    DegenerateSimple,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: RegimeClass,
    /// `|E[log rho]|`; closed forms have no sampling error, so this is the
    /// distance from the recurrent case itself.
    pub margin: f64,
    /// `E[log rho]` vanishes to tolerance but the law is not symmetric by
    /// construction.
    pub undecided: bool,
    pub summary: OneDimSummary,
}

pub const LOG_RHO_TOL: f64 = 1e-12;

/// Transience classification by the sign of `E[log rho]`.
pub fn classify(law: &EnvironmentLaw) -> Result<Classification> {
    let r = RhoLaw::from_law(law)?;
    let s = summary(law)?;
    let m = s.e_log_rho;
    let (class, undecided) = if m < -LOG_RHO_TOL {
        (RegimeClass::TransientRight, false)
    } else if m > LOG_RHO_TOL {
        (RegimeClass::TransientLeft, false)
    } else if s.var_log_rho == 0.0 {
        (RegimeClass::DegenerateSimple, false)
    } else {
        (RegimeClass::RecurrentSinai, !r.symmetric_by_construction())
    };
    Ok(Classification { class, margin: m.abs(), undecided, summary: s })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BReport {
    pub b_plus: bool,
    pub b_minus: bool,
    pub e_rho: f64,
    pub e_inv_rho: f64,
}

pub fn check_b(law: &EnvironmentLaw) -> Result<BReport> {
    let r = RhoLaw::from_law(law)?;
    let (e, ei) = (r.mean_pow(1.0), r.mean_pow(-1.0));
    Ok(BReport { b_plus: e < 1.0, b_minus: ei < 1.0, e_rho: e, e_inv_rho: ei })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityMethod {
    /// `E[(1 - rho_0) sum_{j<=J} prod_{k=1}^{j} rho_k]`, the displayed series
    /// truncated after `J` terms.
    SeriesFormula { j: usize },
    SolomonOracle,
    RenewalMc,
    DirectMc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VelocityBudget {
    pub n: u64,
    pub replicas: u64,
    pub window: u64,
}

impl Default for VelocityBudget {
    fn default() -> Self {
        VelocityBudget { n: 100_000, replicas: 500, window: 2_000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VelocityReport {
    pub method: VelocityMethod,
    pub estimate: EstimateWithCI,
    pub truncation_bound: Option<f64>,
    pub note: Option<String>,
}

pub const SERIES_FORMULA_NOTE: &str =
    "series value E[(1-rho_0) sum_j prod rho]; it equals 1 for every homogeneous law with p > 1/2, where the speed is 2p-1";

pub fn velocity(
    law: &Arc<EnvironmentLaw>,
    method: VelocityMethod,
    budget: &VelocityBudget,
    key: &StreamKey,
) -> Result<VelocityReport> {
    let r = RhoLaw::from_law(law)?;
    let e = r.mean_pow(1.0);
    let ei = r.mean_pow(-1.0);
    match method {
        VelocityMethod::SeriesFormula { j } => {
            if !(e < 1.0) {
                return Err(RwreError::domain(format!("series formula needs E[rho] < 1, got {e}")));
            }
            // i.i.d.: the expectation of each product factorizes.
            let series: f64 = (0..=j).map(|i| e.powi(i as i32)).sum();
            let v = (1.0 - e) * series;
            Ok(VelocityReport {
                method,
                estimate: EstimateWithCI::exact(v),
                truncation_bound: Some(e.powi(j as i32) / (1.0 - e)),
                note: Some(SERIES_FORMULA_NOTE.into()),
            })
        }
        VelocityMethod::SolomonOracle => {
            let v = if e < 1.0 {
                (1.0 - e) / (1.0 + e)
            } else if ei < 1.0 {
                -(1.0 - ei) / (1.0 + ei)
            } else {
                0.0
            };
            Ok(VelocityReport { method, estimate: EstimateWithCI::exact(v), truncation_bound: None, note: None })
        }
        VelocityMethod::DirectMc => {
            let xs = par_replicas(budget.replicas, |i| {
                let env = replica_env(law, key, i);
                let s = Walker::new(&env).run(WalkState::default(), budget.n, &mut replica_rng(key, i));
                s.position.0[0] as f64 / budget.n as f64
            });
            let m = Moments::from_slice(&xs);
            let mut est = m.estimate(DEFAULT_LEVEL).with_seed(key.master_seed, "velocity_direct");
            if m.variance() == 0.0 {
                (est.lo, est.hi) = (est.estimate, est.estimate);
            }
            Ok(VelocityReport { method, estimate: est, truncation_bound: None, note: None })
        }
        VelocityMethod::RenewalMc => {
            let class = classify(law)?.class;
            let sign = if class == RegimeClass::TransientLeft { -1 } else { 1 };
            let l = Direction::axis(1, 0, sign);
            let recs: Vec<_> =
                simulate_records(law, &l, budget.n, budget.window, budget.replicas, key).into_iter().map(|(r, _)| r).collect();
            let v = estimate_velocity(&recs, 1)?.remove(0).with_seed(key.master_seed, "velocity_renewal");
            Ok(VelocityReport { method, estimate: v, truncation_bound: None, note: None })
        }
    }
}

/// Unnormalized invariant density at the environment seen from site `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityValue {
    /// `(1 + rho_0) sum_{j=0}^{J} prod_{k=1}^{j} rho_k` (or the mirrored
    /// version under (B-)).
    pub unnormalized: f64,
    /// `C` times the above, with `C = (1 - E rho) / (1 + E rho)`.
    pub normalized: f64,
    /// Bound on the mean of the dropped tail, normalized.
    pub truncation_bound: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensitySide {
    Plus,
    Minus,
}

fn density_side(law: &EnvironmentLaw) -> Result<(DensitySide, f64)> {
    let b = check_b(law)?;
    if b.b_plus {
        Ok((DensitySide::Plus, b.e_rho))
    } else if b.b_minus {
        Ok((DensitySide::Minus, b.e_inv_rho))
    } else {
        Err(RwreError::domain("invariant probability density needs (B+) or (B-)"))
    }
}

pub fn invariant_density(env: &Environment, x: Site, j: usize) -> Result<DensityValue> {
    let (side, e) = density_side(&env.law)?;
    let step: i64 = if side == DensitySide::Plus { 1 } else { -1 };
    let rho = |y: i64| {
        let k = env.kernel_at(Site::new(&[x.0[0] + y]));
        let r = k.prob(1) / k.prob(0);
        if side == DensitySide::Plus {
            r
        } else {
            1.0 / r
        }
    };
    let mut prod = 1.0;
    let mut sum = 1.0;
    for k in 1..=j as i64 {
        prod *= rho(step * k);
        sum += prod;
    }
    let un = (1.0 + rho(0)) * sum;
    let c = (1.0 - e) / (1.0 + e);
    Ok(DensityValue { unnormalized: un, normalized: c * un, truncation_bound: e.powi(j as i32 + 1) })
}

/// Monte Carlo of `int f dP` for the truncated unnormalized density, with
/// its closed-form value `(1 + E rho)(1 - E rho^{J+1}) / (1 - E rho)`.
pub fn density_normalizer(law: &Arc<EnvironmentLaw>, j: usize, replicas: u64, key: &StreamKey) -> Result<(EstimateWithCI, f64)> {
    let (_, e) = density_side(law)?;
    let xs = par_replicas(replicas, |r| {
        invariant_density(&replica_env(law, key, r), Site::ORIGIN, j).map(|d| d.unnormalized).unwrap_or(f64::NAN)
    });
    let closed = (1.0 + e) * (1.0 - e.powi(j as i32 + 1)) / (1.0 - e);
    Ok((Moments::from_slice(&xs).estimate(DEFAULT_LEVEL), closed))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvarianceReport {
    /// Monte Carlo of `int (Rg - g) dnu`.
    pub discrepancy: f64,
    pub std_error: f64,
    pub truncation_bound: f64,
    /// `3 * std_error + truncation_bound`.
    pub tolerance: f64,
    pub passes: bool,
    pub replicas: u64,
}

/// Check `int Rg dnu = int g dnu` for the density of `nu`, truncated at `J`,
/// with one environment window per replica. `g_bound` bounds `|g|`.
pub fn check_invariance(
    law: &Arc<EnvironmentLaw>,
    g: &LocalFunctional,
    g_bound: f64,
    j: usize,
    replicas: u64,
    key: &StreamKey,
) -> Result<InvarianceReport> {
    let (_, e) = density_side(law)?;
    if replicas < 2 {
        return Err(RwreError::config("invariance check needs replicas >= 2"));
    }
    let radius = g.radius + 1;
    let xs: Vec<f64> = par_replicas(replicas, |r| -> Result<f64> {
        let env = replica_env(law, key, r);
        let d = invariant_density(&env, Site::ORIGIN, j)?;
        let w = EnvWindow::from_env(&env, Site::ORIGIN, radius);
        let rg = apply_r(&w, g)?;
        let g0 = g.eval_window(&w, Site::ORIGIN)?;
        Ok(d.normalized * (rg - g0))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let m = Moments::from_slice(&xs);
    let se = m.std_error();
    let bound = 2.0 * g_bound * e.powi(j as i32 + 1);
    let tol = 3.0 * se + bound;
    Ok(InvarianceReport {
        discrepancy: m.mean,
        std_error: se,
        truncation_bound: bound,
        tolerance: tol,
        passes: m.mean.abs() <= tol,
        replicas,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaRoot {
    pub kks_kappa: f64,
    pub bracket: (f64, f64),
    /// `|E[rho^kappa] - 1|`.
    pub residual: f64,
    /// `kappa < 1`: the walk is transient but sub-ballistic.
    pub sub_ballistic: bool,
}

pub const KKS_TOL: f64 = 1e-10;

/// The positive root of `E[rho^kappa] = 1`.
pub fn kks_exponent(law: &EnvironmentLaw) -> Result<KappaRoot> {
    let r = RhoLaw::from_law(law)?;
    let m = r.mean_log();
    if !(m < 0.0) {
        return Err(RwreError::domain(format!("KKS exponent needs E[log rho] < 0, got {m}")));
    }
    if !(r.prob_above_one() > 0.0) {
        return Err(RwreError::domain("KKS exponent needs P[rho > 1] > 0: E[rho^s] < 1 for every s > 0"));
    }
    let phi = |s: f64| r.mean_pow(s) - 1.0;
    // phi(0) = 0, phi'(0) = E log rho < 0; find a < b with phi(a) < 0 < phi(b).
    let mut a = 1e-3;
    while !(phi(a) < 0.0) {
        a *= 0.5;
        if a < 1e-300 {
            return Err(RwreError::Numerical { msg: "no negative value of E[rho^s] - 1 near 0".into(), residual: phi(a) });
        }
    }
    let mut b = 1.0;
    while !(phi(b) > 0.0) {
        if phi(b) < 0.0 {
            a = b;
        }
        b *= 2.0;
        if b > 1e6 {
            return Err(RwreError::Numerical { msg: "no bracket for the KKS root".into(), residual: phi(b) });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let v = phi(mid);
        if v < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let (ra, rb) = (phi(a).abs(), phi(b).abs());
    let root = if ra <= rb { a } else { b };
    let residual = ra.min(rb);
    if residual > KKS_TOL {
        return Err(RwreError::Numerical { msg: "KKS bisection did not reach tolerance".into(), residual });
    }
    Ok(KappaRoot { kks_kappa: root, bracket: (a, b), residual, sub_ballistic: root < 1.0 })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SinaiRow {
    pub n: u64,
    pub median_abs: f64,
    /// `median |X_n| / (log n)^2`, absent for `n = 1`.
    pub normalized: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SinaiReport {
    pub rows: Vec<SinaiRow>,
    pub max_min_ratio: f64,
    /// Normalized medians increase along the whole grid and end more than
    /// five times above their start.
    pub growing: bool,
}

pub fn sinai_diagnostic(law: &Arc<EnvironmentLaw>, n_grid: &[u64], replicas: u64, key: &StreamKey) -> Result<SinaiReport> {
    if n_grid.is_empty() || replicas == 0 {
        return Err(RwreError::config("Sinai diagnostic needs a non-empty grid and replicas >= 1"));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    let per: Vec<Vec<f64>> = par_replicas(replicas, |r| {
        let env = replica_env(law, key, r);
        let mut w = Walker::new(&env);
        let mut rng = replica_rng(key, r);
        let mut s = WalkState::default();
        grid.iter()
            .map(|&n| {
                s = w.run(s, n - s.time, &mut rng);
                s.position.0[0].abs() as f64
            })
            .collect()
    });
    let rows: Vec<SinaiRow> = grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut col: Vec<f64> = per.iter().map(|v| v[i]).collect();
            let med = median(&mut col);
            let normalized = (n >= 2).then(|| med / (n as f64).ln().powi(2));
            SinaiRow { n, median_abs: med, normalized }
        })
        .collect();
    let norm: Vec<f64> = rows.iter().filter_map(|r| r.normalized).collect();
    let max = norm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = norm.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = if norm.is_empty() { f64::NAN } else if min > 0.0 { max / min } else { f64::INFINITY };
    let growing = norm.len() >= 2 && norm.windows(2).all(|w| w[1] > w[0]) && norm[norm.len() - 1] > 5.0 * norm[0];
    Ok(SinaiReport { rows, max_min_ratio: ratio, growing })
}

/// `f(x)` on `lo..=hi` with `f(0) = 0` and increments
/// `Delta_j = f(j+1) - f(j) = -prod_{i=1}^{j} rho_i` for `j >= 0` and
/// `Delta_j = -prod_{i=j+1}^{0} rho_i^{-1}` for `j < 0`, so that
/// `Delta_y = rho_y Delta_{y-1}` and `f` is harmonic for the walk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialTable {
    pub lo: i64,
    pub hi: i64,
    /// `f(lo), ..., f(hi)`; entries overflow to `-inf`/`+inf` on long
    /// windows, in which case `log_abs` is authoritative.
    pub values: Vec<f64>,
    /// `ln |f(x)|`, computed by log-sum-exp over the increments.
    pub log_abs: Vec<f64>,
    pub overflow: bool,
}

impl PotentialTable {
    pub fn f(&self, x: i64) -> f64 {
        self.values[(x - self.lo) as usize]
    }

    /// `max_y |p(y) f(y+1) + q(y) f(y-1) - f(y)| / max(1, |f(y)|)` over
    /// interior sites.
    pub fn harmonic_residual(&self, env: &Environment) -> f64 {
        let mut worst: f64 = 0.0;
        for y in self.lo + 1..self.hi {
            let k = env.kernel_at(Site::new(&[y]));
            let (fp, fm, f0) = (self.f(y + 1), self.f(y - 1), self.f(y));
            if !(fp.is_finite() && fm.is_finite()) {
                continue;
            }
            let r = (k.prob(0) * fp + k.prob(1) * fm - f0).abs() / f0.abs().max(fp.abs()).max(1.0);
            worst = worst.max(r);
        }
        worst
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn potential(env: &Environment, lo: i64, hi: i64) -> Result<PotentialTable> {
    if env.dim() != 1 {
        return Err(RwreError::domain("potential is defined for d = 1"));
    }
    if !(lo <= 0 && hi >= 0) {
        return Err(RwreError::config("potential window must contain 0"));
    }
    let ln_rho = |y: i64| {
        let k = env.kernel_at(Site::new(&[y]));
        k.prob(1).ln() - k.prob(0).ln()
    };
    let len = (hi - lo + 1) as usize;
    let mut values = vec![0.0; len];
    let mut log_abs = vec![f64::NEG_INFINITY; len];
    // x > 0: f(x) = -sum_{j=0}^{x-1} exp(L_j), L_j = sum_{i=1}^{j} ln rho_i.
    let mut lj = 0.0;
    let mut acc = 0.0;
    let mut lacc = f64::NEG_INFINITY;
    for x in 1..=hi {
        let j = x - 1;
        if j >= 1 {
            lj += ln_rho(j);
        }
        acc -= lj.exp();
        lacc = log_add(lacc, lj);
        values[(x - lo) as usize] = acc;
        log_abs[(x - lo) as usize] = lacc;
    }
    // x < 0: f(x) = sum_{j=x}^{-1} exp(M_j), M_j = -sum_{i=j+1}^{0} ln rho_i.
    let mut mj = 0.0;
    let mut acc = 0.0;
    let mut lacc = f64::NEG_INFINITY;
    for x in (lo..0).rev() {
        mj -= ln_rho(x + 1);
        acc += mj.exp();
        lacc = log_add(lacc, mj);
        values[(x - lo) as usize] = acc;
        log_abs[(x - lo) as usize] = lacc;
    }
    let overflow = values.iter().any(|v| !v.is_finite());
    Ok(PotentialTable { lo, hi, values, log_abs, overflow })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_examples() {
        let c = classify(&EnvironmentLaw::two_point(0.3, 0.9).unwrap()).unwrap();
        assert_eq!(c.class, RegimeClass::TransientRight);
        let expect = 0.5 * ((7.0f64 / 3.0).ln() + (1.0f64 / 9.0).ln());
        assert!((c.summary.e_log_rho - expect).abs() < 1e-14 && (expect + 0.675).abs() < 1e-3);
        let c = classify(&EnvironmentLaw::two_point(0.3, 0.7).unwrap()).unwrap();
        assert_eq!(c.class, RegimeClass::RecurrentSinai);
        assert!(!c.undecided);
        let c = classify(&EnvironmentLaw::homogeneous_1d(0.5).unwrap()).unwrap();
        assert_eq!(c.class, RegimeClass::DegenerateSimple);
        let m = classify(&mirror_law(&EnvironmentLaw::two_point(0.3, 0.9).unwrap()).unwrap()).unwrap();
        assert_eq!(m.class, RegimeClass::TransientLeft);
    }

    #[test]
    fn b_conditions() {
        let b = check_b(&EnvironmentLaw::two_point(0.8, 0.4).unwrap()).unwrap();
        assert!(b.b_plus && !b.b_minus && (b.e_rho - 0.875).abs() < 1e-15);
        let h = check_b(&EnvironmentLaw::homogeneous_1d(0.5).unwrap()).unwrap();
        assert!(!h.b_plus && !h.b_minus);
        let m = check_b(&mirror_law(&EnvironmentLaw::two_point(0.8, 0.4).unwrap()).unwrap()).unwrap();
        assert!(!m.b_plus && m.b_minus);
    }

    #[test]
    fn oracle_velocities() {
        let key = StreamKey::new(1, "oned", "v");
        let law = Arc::new(EnvironmentLaw::two_point(0.8, 0.4).unwrap());
        let v = velocity(&law, VelocityMethod::SolomonOracle, &VelocityBudget::default(), &key).unwrap();
        assert!((v.estimate.estimate - 1.0 / 15.0).abs() < 1e-15);
        let h = Arc::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap());
        let p = velocity(&h, VelocityMethod::SeriesFormula { j: 60 }, &VelocityBudget::default(), &key).unwrap();
        assert!((p.estimate.estimate - 1.0).abs() < 1e-12);
        let sym = Arc::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap());
        assert!(velocity(&sym, VelocityMethod::SeriesFormula { j: 60 }, &VelocityBudget::default(), &key).is_err());
    }

    #[test]
    fn kks_examples() {
        // rho in {2, 1/4}: p = 1/3 and p = 4/5.
        let law = EnvironmentLaw::two_point(1.0 / 3.0, 0.8).unwrap();
        let k = kks_exponent(&law).unwrap();
        assert!(k.kks_kappa > 0.68 && k.kks_kappa < 0.71, "{k:?}");
        assert!(k.residual <= KKS_TOL);
        let f = |s: f64| 0.5 * (2f64.powf(s) + 4f64.powf(-s)) - 1.0;
        assert!(f(k.bracket.0) <= 1e-12 && f(k.bracket.1) >= -1e-12);
        assert!(kks_exponent(&EnvironmentLaw::homogeneous_1d(0.75).unwrap()).is_err());
    }

    #[test]
    fn dirichlet_rho_moments() {
        let law = EnvironmentLaw::dirichlet(1, &[3.0, 2.0]).unwrap();
        let r = RhoLaw::from_law(&law).unwrap();
        // rho ~ BetaPrime(2, 3): mean 2 / (3 - 1) = 1.
        assert!((r.mean_pow(1.0) - 1.0).abs() < 1e-12);
        assert!(r.mean_pow(3.0).is_infinite());
    }

    #[test]
    fn potential_examples() {
        let env = Environment::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap(), 0);
        let t = potential(&env, -5, 8).unwrap();
        for x in 0..=8 {
            let expect: f64 = -(0..x).map(|j| 3f64.powi(-(j as i32))).sum::<f64>();
            assert!((t.f(x as i64) - expect).abs() < 1e-12);
        }
        assert!(t.harmonic_residual(&env) < 1e-12);
        let sym = Environment::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap(), 0);
        let t = potential(&sym, -3, 6).unwrap();
        for x in -3..=6 {
            assert!((t.f(x) + x as f64).abs() < 1e-12);
        }
        let rnd = Environment::new(EnvironmentLaw::two_point(0.3, 0.9).unwrap(), 9);
        let t = potential(&rnd, -40, 40).unwrap();
        assert!(t.harmonic_residual(&rnd) < 1e-12);
        let k = rnd.kernel_at(Site::ORIGIN);
        assert!((k.prob(0) * t.f(1) + k.prob(1) * t.f(-1) - t.f(0)).abs() < 1e-12);
    }

    #[test]
    fn density_homogeneous_is_one() {
        let env = Environment::new(EnvironmentLaw::homogeneous_1d(0.7).unwrap(), 0);
        let d = invariant_density(&env, Site::ORIGIN, 200).unwrap();
        assert!((d.normalized - 1.0).abs() < 1e-12);
    }
}
