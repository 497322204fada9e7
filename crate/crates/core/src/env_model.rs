//! Transition kernels, environment laws and reproducible environments, plus
//! the ellipticity, trap and nestling diagnostics computed from a law.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Result, RwreError};
use crate::lattice::{JumpSet, Site, MAX_DIM, MAX_MOVES};
use crate::rng::{site_stream, StreamKey};
use crate::stats::{stabilization, EstimateWithCI, Moments, Stabilization, DEFAULT_LEVEL};

const SIMPLEX_TOL: f64 = 1e-12;

/// Probabilities of the moves of a [`JumpSet`] at one site.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernel {
    pub jumps: JumpSet,
    probs: [f64; MAX_MOVES],
}

impl TransitionKernel {
    pub fn new(jumps: JumpSet, probs: &[f64]) -> Result<Self> {
        if probs.len() != jumps.len() {
            return Err(RwreError::config(format!(
                "kernel has {} entries, jump set needs {}",
                probs.len(),
                jumps.len()
            )));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(RwreError::config(format!("kernel entries must be finite and >= 0: {probs:?}")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(RwreError::config(format!("kernel entries sum to {s}, expected 1")));
        }
        let mut p = [0.0; MAX_MOVES];
        p[..probs.len()].copy_from_slice(probs);
        Ok(Self::renormalized(jumps, p))
    }

    fn renormalized(jumps: JumpSet, mut p: [f64; MAX_MOVES]) -> Self {
        let s: f64 = p[..jumps.len()].iter().sum();
        p[..jumps.len()].iter_mut().for_each(|x| *x /= s);
        TransitionKernel { jumps, probs: p }
    }

    /// 1D kernel `(p, 1 - p)` on `(+1, -1)`.
    pub fn one_dim(p_right: f64) -> Result<Self> {
        Self::new(JumpSet::new(1, false)?, &[p_right, 1.0 - p_right])
    }

    /// Simple symmetric random walk kernel.
    pub fn symmetric(dim: usize) -> Result<Self> {
        let j = JumpSet::new(dim, false)?;
        Self::new(j, &vec![1.0 / j.len() as f64; j.len()])
    }

    #[inline]
    pub fn prob(&self, idx: usize) -> f64 {
        self.probs[idx]
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs[..self.jumps.len()]
    }

    pub fn dim(&self) -> usize {
        self.jumps.dim
    }

    /// `sum_e omega(0, e) e`.
    pub fn local_drift(&self) -> [f64; MAX_DIM] {
        let mut d = [0.0; MAX_DIM];
        for axis in 0..self.jumps.dim {
            d[axis] = self.probs[2 * axis] - self.probs[2 * axis + 1];
        }
        d
    }

    /// Smallest probability among the non-hold moves.
    pub fn min_step_entry(&self) -> f64 {
        self.probs[..2 * self.jumps.dim].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_balanced(&self) -> bool {
        (0..self.jumps.dim).all(|a| self.probs[2 * a] == self.probs[2 * a + 1])
    }

    /// `(1 - h) * self + h * delta_0`, on the jump set with hold.
    pub fn with_hold(&self, h: f64) -> TransitionKernel {
        let j = self.jumps.with_hold();
        let mut p = [0.0; MAX_MOVES];
        let base_hold = if self.jumps.include_hold { self.probs[2 * self.jumps.dim] } else { 0.0 };
        for i in 0..2 * j.dim {
            p[i] = (1.0 - h) * self.probs[i];
        }
        p[2 * j.dim] = (1.0 - h) * base_hold + h;
        TransitionKernel { jumps: j, probs: p }
    }

    /// Index of the move selected by a uniform `u` in `[0, 1)`.
    #[inline]
    pub fn select(&self, u: f64) -> usize {
        let n = self.jumps.len();
        let mut acc = 0.0;
        for i in 0..n - 1 {
            acc += self.probs[i];
            if u < acc {
                return i;
            }
        }
        n - 1
    }

    pub fn check_simplex(&self) -> bool {
        let p = self.probs();
        p.iter().all(|x| *x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
    }
}

/// Law of the per-axis weights of a balanced environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BalancedWeights {
    /// Deterministic weights `w_1..w_d` with `2 sum w = 1`.
    Fixed(Vec<f64>),
    /// `u_j` i.i.d. uniform on `[lo, hi]`, then `w_j = u_j / (2 sum u)`.
    UniformNormalized { lo: f64, hi: f64 },
}

/// Law of the trap parameter `phi` in `(0, 1/4)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PhiLaw {
    /// `phi = c V^2` with `V` uniform on `(0, 1)`; `E[phi^{-1/2}] = inf`
    /// while `E[phi^{-s}] < inf` for every `s < 1/2`.
    ScaledSquaredUniform { c: f64 },
    /// `phi` uniform on `[lo, hi]` (bounded away from 0).
    Uniform { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LawVariant {
    Homogeneous(TransitionKernel),
    /// 1D i.i.d. law of `omega(0, +1)`: atoms `(p_right, weight)`.
    OneDimDiscrete { atoms: Vec<(f64, f64)> },
    /// I.i.d. Dirichlet kernels with parameters indexed by move.
    DirichletIid { dim: usize, alpha: Vec<f64> },
    /// I.i.d. balanced kernels: `omega(0, e_j) = omega(0, -e_j) = w_j`.
    BalancedIid { dim: usize, weights: BalancedWeights },
    /// The 2D edge-trap law: `omega = Z omega_1 + (1 - Z) omega_2`.
    TrapLaw { phi: PhiLaw },
    /// 2D: i.i.d. along `e_1`, constant along `e_2`; `omega(x, +-e_2) = 1/4`,
    /// `omega(x, e_1) = q`, `omega(x, -e_1) = p = 1/2 - q`. Atoms are
    /// `(p / q, weight)`.
    AnisotropicProduct { ratio_atoms: Vec<(f64, f64)> },
    /// I.i.d. finite mixture of kernels `(kernel, weight)`.
    KernelMixture { kernels: Vec<(TransitionKernel, f64)> },
}

/// A probability law on kernels, i.i.d. over sites unless the variant says
/// otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentLaw {
    pub variant: LawVariant,
    /// Uniform-ellipticity constant asserted for the law, if any.
    pub declared_kappa: Option<f64>,
}

fn normalize_weights<T: Clone>(items: &[(T, f64)], what: &str) -> Result<Vec<(T, f64)>> {
    if items.is_empty() {
        return Err(RwreError::config(format!("{what}: at least one atom required")));
    }
    if items.iter().any(|(_, w)| !(w.is_finite() && *w > 0.0)) {
        return Err(RwreError::config(format!("{what}: weights must be positive")));
    }
    let s: f64 = items.iter().map(|(_, w)| w).sum();
    Ok(items.iter().map(|(a, w)| (a.clone(), w / s)).collect())
}

#[inline]
fn pick_atom<T>(atoms: &[(T, f64)], u: f64) -> &T {
    let mut acc = 0.0;
    for (a, w) in &atoms[..atoms.len() - 1] {
        acc += w;
        if u < acc {
            return a;
        }
    }
    &atoms[atoms.len() - 1].0
}

impl EnvironmentLaw {
    fn with_default_kappa(variant: LawVariant) -> Result<Self> {
        let mut law = EnvironmentLaw { variant, declared_kappa: None };
        law.declared_kappa = law.support_kappa();
        Ok(law)
    }

    pub fn homogeneous(kernel: TransitionKernel) -> Result<Self> {
        Self::with_default_kappa(LawVariant::Homogeneous(kernel))
    }

    pub fn homogeneous_1d(p_right: f64) -> Result<Self> {
        Self::homogeneous(TransitionKernel::one_dim(p_right)?)
    }

    pub fn one_dim_discrete(atoms: &[(f64, f64)]) -> Result<Self> {
        if atoms.iter().any(|(p, _)| !(*p >= 0.0 && *p <= 1.0)) {
            return Err(RwreError::config("one-dimensional atoms need p_right in [0, 1]"));
        }
        Self::with_default_kappa(LawVariant::OneDimDiscrete { atoms: normalize_weights(atoms, "1D law")? })
    }

    /// Two equally likely values of `omega(0, +1)`.
    pub fn two_point(p1: f64, p2: f64) -> Result<Self> {
        Self::one_dim_discrete(&[(p1, 0.5), (p2, 0.5)])
    }

    pub fn dirichlet(dim: usize, alpha: &[f64]) -> Result<Self> {
        let j = JumpSet::new(dim, false)?;
        if alpha.len() != j.len() {
            return Err(RwreError::config(format!("dirichlet needs {} parameters", j.len())));
        }
        if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(RwreError::config(format!("dirichlet parameters must be > 0, got {alpha:?}")));
        }
        Self::with_default_kappa(LawVariant::DirichletIid { dim, alpha: alpha.to_vec() })
    }

    pub fn balanced(dim: usize, weights: BalancedWeights) -> Result<Self> {
        JumpSet::new(dim, false)?;
        match &weights {
            BalancedWeights::Fixed(w) => {
                if w.len() != dim || w.iter().any(|x| !(*x >= 0.0)) {
                    return Err(RwreError::config("balanced weights: need d non-negative values"));
                }
                if (2.0 * w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(RwreError::config("balanced weights must satisfy 2 * sum(w) = 1"));
                }
            }
            BalancedWeights::UniformNormalized { lo, hi } => {
                if !(*lo > 0.0 && lo <= hi) {
                    return Err(RwreError::config("balanced weight range needs 0 < lo <= hi"));
                }
            }
        }
        Self::with_default_kappa(LawVariant::BalancedIid { dim, weights })
    }

    pub fn trap(phi: PhiLaw) -> Result<Self> {
        match &phi {
            PhiLaw::ScaledSquaredUniform { c } if !(*c > 0.0 && *c <= 0.25) => {
                return Err(RwreError::config("trap law scale c must lie in (0, 1/4]"))
            }
            PhiLaw::Uniform { lo, hi } if !(*lo > 0.0 && lo <= hi && *hi < 0.25) => {
                return Err(RwreError::config("trap law phi range must lie in (0, 1/4)"))
            }
            _ => {}
        }
        Self::with_default_kappa(LawVariant::TrapLaw { phi })
    }

    pub fn anisotropic(ratio_atoms: &[(f64, f64)]) -> Result<Self> {
        if ratio_atoms.iter().any(|(r, _)| !(r.is_finite() && *r > 0.0)) {
            return Err(RwreError::config("anisotropic ratios p/q must be positive"));
        }
        Self::with_default_kappa(LawVariant::AnisotropicProduct {
            ratio_atoms: normalize_weights(ratio_atoms, "anisotropic law")?,
        })
    }

    /// Default marginal for the anisotropic product: `p/q` in `{0.02, 1.98}`
    /// with equal weights, so `E[p/q] = 1` and `E[log(p/q)] = ln(0.0396)/2`.
    ///
    /// With `E[p/q] = 1` the horizontal displacement grows like `n / log n`.
    /// A strongly negative `E[log(p/q)]` keeps most paths above their start
    /// at moderate horizons; `{0.2, 1.8}` leaves a third of them below at
    /// `n = 10^4`.
    pub fn anisotropic_default() -> Result<Self> {
        Self::anisotropic(&[(0.02, 0.5), (1.98, 0.5)])
    }

    pub fn mixture(kernels: &[(TransitionKernel, f64)]) -> Result<Self> {
        let k = normalize_weights(kernels, "kernel mixture")?;
        let j = k[0].0.jumps;
        if k.iter().any(|(x, _)| x.jumps != j) {
            return Err(RwreError::config("kernel mixture: all kernels need the same jump set"));
        }
        Self::with_default_kappa(LawVariant::KernelMixture { kernels: k })
    }

    pub fn with_kappa(mut self, kappa: Option<f64>) -> Self {
        self.declared_kappa = kappa;
        self
    }

    pub fn dim(&self) -> usize {
        match &self.variant {
            LawVariant::Homogeneous(k) => k.dim(),
            LawVariant::OneDimDiscrete { .. } => 1,
            LawVariant::DirichletIid { dim, .. } | LawVariant::BalancedIid { dim, .. } => *dim,
            LawVariant::TrapLaw { .. } | LawVariant::AnisotropicProduct { .. } => 2,
            LawVariant::KernelMixture { kernels } => kernels[0].0.dim(),
        }
    }

    pub fn jumps(&self) -> JumpSet {
        match &self.variant {
            LawVariant::Homogeneous(k) => k.jumps,
            LawVariant::KernelMixture { kernels } => kernels[0].0.jumps,
            _ => JumpSet { dim: self.dim(), include_hold: false },
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match &self.variant {
            LawVariant::Homogeneous(_) => true,
            LawVariant::OneDimDiscrete { atoms } => atoms.len() == 1,
            LawVariant::KernelMixture { kernels } => kernels.len() == 1,
            LawVariant::BalancedIid { weights: BalancedWeights::Fixed(_), .. } => true,
            _ => false,
        }
    }

    /// Every sampled kernel is balanced.
    pub fn is_balanced(&self) -> bool {
        match &self.variant {
            LawVariant::BalancedIid { .. } => true,
            LawVariant::Homogeneous(k) => k.is_balanced(),
            LawVariant::OneDimDiscrete { atoms } => atoms.iter().all(|(p, _)| *p == 0.5),
            LawVariant::KernelMixture { kernels } => kernels.iter().all(|(k, _)| k.is_balanced()),
            _ => false,
        }
    }

    /// Whether the site field varies only along `e_1`.
    pub fn constant_off_axis(&self) -> bool {
        matches!(self.variant, LawVariant::AnisotropicProduct { .. })
    }

    /// The essential infimum of the non-hold entries, when it is positive and
    /// known from the support of the law.
    fn support_kappa(&self) -> Option<f64> {
        let k = match &self.variant {
            LawVariant::Homogeneous(k) => k.min_step_entry(),
            LawVariant::OneDimDiscrete { atoms } => {
                atoms.iter().map(|(p, _)| p.min(1.0 - p)).fold(f64::INFINITY, f64::min)
            }
            LawVariant::KernelMixture { kernels } => {
                kernels.iter().map(|(k, _)| k.min_step_entry()).fold(f64::INFINITY, f64::min)
            }
            LawVariant::BalancedIid { dim, weights } => match weights {
                BalancedWeights::Fixed(w) => w.iter().copied().fold(f64::INFINITY, f64::min),
                BalancedWeights::UniformNormalized { lo, hi } => lo / (2.0 * (lo + (*dim as f64 - 1.0) * hi)),
            },
            LawVariant::AnisotropicProduct { ratio_atoms } => ratio_atoms
                .iter()
                .map(|(r, _)| {
                    let q = 0.5 / (1.0 + r);
                    q.min(0.5 - q).min(0.25)
                })
                .fold(f64::INFINITY, f64::min),
            LawVariant::DirichletIid { .. } => return None,
            LawVariant::TrapLaw { phi } => match phi {
                PhiLaw::ScaledSquaredUniform { .. } => return None,
                PhiLaw::Uniform { lo, hi } => lo.min(1.0 - 4.0 * hi),
            },
        };
        (k > 0.0).then_some(k)
    }

    /// Draw one kernel from the law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TransitionKernel {
        match &self.variant {
            LawVariant::Homogeneous(k) => *k,
            LawVariant::OneDimDiscrete { atoms } => {
                let p = if atoms.len() == 1 { atoms[0].0 } else { *pick_atom(atoms, rng.random::<f64>()) };
                let mut probs = [0.0; MAX_MOVES];
                probs[0] = p;
                probs[1] = 1.0 - p;
                TransitionKernel { jumps: JumpSet { dim: 1, include_hold: false }, probs }
            }
            LawVariant::KernelMixture { kernels } => {
                if kernels.len() == 1 {
                    kernels[0].0
                } else {
                    *pick_atom(kernels, rng.random::<f64>())
                }
            }
            LawVariant::DirichletIid { dim, alpha } => {
                let mut probs = [0.0; MAX_MOVES];
                for (p, a) in probs.iter_mut().zip(alpha) {
                    *p = Gamma::new(*a, 1.0).expect("validated alpha").sample(rng);
                }
                let s: f64 = probs.iter().sum();
                if s > 0.0 {
                    TransitionKernel::renormalized(JumpSet { dim: *dim, include_hold: false }, probs)
                } else {
                    // All gammas underflowed (tiny alpha): put the mass on one move.
                    let i = rng.random_range(0..alpha.len());
                    probs[i] = 1.0;
                    TransitionKernel { jumps: JumpSet { dim: *dim, include_hold: false }, probs }
                }
            }
            LawVariant::BalancedIid { dim, weights } => {
                let mut w = [0.0; MAX_DIM];
                match weights {
                    BalancedWeights::Fixed(v) => w[..*dim].copy_from_slice(v),
                    BalancedWeights::UniformNormalized { lo, hi } => {
                        for x in w.iter_mut().take(*dim) {
                            *x = lo + (hi - lo) * rng.random::<f64>();
                        }
                        let s: f64 = 2.0 * w.iter().sum::<f64>();
                        w.iter_mut().for_each(|x| *x /= s);
                    }
                }
                let mut probs = [0.0; MAX_MOVES];
                for a in 0..*dim {
                    probs[2 * a] = w[a];
                    probs[2 * a + 1] = w[a];
                }
                TransitionKernel { jumps: JumpSet { dim: *dim, include_hold: false }, probs }
            }
            LawVariant::TrapLaw { phi } => {
                let f = match phi {
                    PhiLaw::ScaledSquaredUniform { c } => {
                        let v: f64 = rng.random::<f64>();
                        // Open interval (0, 1): reject the zero draw.
                        let v = if v == 0.0 { f64::MIN_POSITIVE } else { v };
                        c * v * v
                    }
                    PhiLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
                };
                let z = rng.random::<bool>();
                let probs = if z {
                    [2.0 * f, f, 1.0 - 4.0 * f, f, 0.0, 0.0, 0.0]
                } else {
                    [2.0 * f, f, f, 1.0 - 4.0 * f, 0.0, 0.0, 0.0]
                };
                TransitionKernel { jumps: JumpSet { dim: 2, include_hold: false }, probs }
            }
            LawVariant::AnisotropicProduct { ratio_atoms } => {
                let r = *pick_atom(ratio_atoms, rng.random::<f64>());
                let q = 0.5 / (1.0 + r);
                let probs = [q, 0.5 - q, 0.25, 0.25, 0.0, 0.0, 0.0];
                TransitionKernel { jumps: JumpSet { dim: 2, include_hold: false }, probs }
            }
        }
    }
}

/// A realized environment: `kernel_at(site)` is a pure function of the
/// master seed and the site coordinates.
#[derive(Clone, Debug)]
pub struct Environment {
    pub law: Arc<EnvironmentLaw>,
    pub master_seed: u64,
    /// Hold probability mixed into every kernel (holding-time walk).
    pub hold: Option<f64>,
}

impl Environment {
    pub fn new(law: EnvironmentLaw, master_seed: u64) -> Self {
        Environment { law: Arc::new(law), master_seed, hold: None }
    }

    pub fn from_arc(law: Arc<EnvironmentLaw>, master_seed: u64) -> Self {
        Environment { law, master_seed, hold: None }
    }

    /// The holding-time version of this environment with hold probability
    /// `h`. With `h = None` the declared kappa of the law is used.
    pub fn with_holding(&self, h: Option<f64>) -> Result<Environment> {
        let h = match h.or(self.law.declared_kappa) {
            Some(h) if h > 0.0 && h < 1.0 => h,
            Some(h) => return Err(RwreError::config(format!("hold probability must be in (0, 1), got {h}"))),
            None => {
                return Err(RwreError::domain(
                    "holding walk needs a hold probability: the law declares no kappa",
                ))
            }
        };
        Ok(Environment { hold: Some(h), ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.law.dim()
    }

    pub fn jumps(&self) -> JumpSet {
        let j = self.law.jumps();
        if self.hold.is_some() {
            j.with_hold()
        } else {
            j
        }
    }

    pub fn kernel_at(&self, site: Site) -> TransitionKernel {
        let key = if self.law.constant_off_axis() { Site::on_axis(0, site.0[0]) } else { site };
        let k = match &self.law.variant {
            LawVariant::Homogeneous(k) => *k,
            _ => self.law.sample(&mut site_stream(self.master_seed, key)),
        };
        match self.hold {
            Some(h) => k.with_hold(h),
            None => k,
        }
    }
}

/// Per-law ellipticity summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticityReport {
    /// Per-move minimum over the samples.
    pub min_entry_estimate: Vec<f64>,
    /// Minimum over samples and moves.
    pub kappa_hat: f64,
    pub alpha: f64,
    /// `sup_e E[omega(0, e)^{-alpha}]` (the move with the largest estimate).
    pub inverse_moment: EstimateWithCI,
    pub per_move: Vec<EstimateWithCI>,
    pub stabilization: Vec<Stabilization>,
    /// Dirichlet laws only: `sup_e E[omega(0, e)^{-alpha}]` from the Beta
    /// marginals, `+inf` when some `alpha_e <= alpha`.
    pub exact_inverse_moment: Option<f64>,
    pub divergent: bool,
}

pub const DEFAULT_DIVERGENCE_RATIO: f64 = 0.1;

/// `E[prod_e omega(0, e)^{-beta_e}]` for a Dirichlet law, `+inf` when some
/// `alpha_e <= beta_e`. `None` for other laws.
pub fn dirichlet_negative_moment(law: &EnvironmentLaw, betas: &[f64]) -> Option<f64> {
    let LawVariant::DirichletIid { alpha, .. } = &law.variant else {
        return None;
    };
    if alpha.iter().zip(betas).any(|(a, b)| a <= b) {
        return Some(f64::INFINITY);
    }
    let (sa, sb): (f64, f64) = (alpha.iter().sum(), betas.iter().sum());
    let log: f64 = alpha.iter().zip(betas).map(|(a, b)| ln_gamma(a - b) - ln_gamma(*a)).sum::<f64>() + ln_gamma(sa)
        - ln_gamma(sa - sb);
    Some(log.exp())
}

fn sample_kernels(law: &EnvironmentLaw, n: usize, key: &StreamKey) -> Vec<TransitionKernel> {
    let mut rng = key.rng(0);
    (0..n).map(|_| law.sample(&mut rng)).collect()
}

pub fn ellipticity_report(
    law: &EnvironmentLaw,
    n_samples: usize,
    alpha: f64,
    key: &StreamKey,
) -> Result<EllipticityReport> {
    if n_samples < 1 {
        return Err(RwreError::config("ellipticity report needs n_samples >= 1"));
    }
    let ks = sample_kernels(law, n_samples, key);
    let moves = 2 * law.dim();
    let mut mins = vec![f64::INFINITY; moves];
    let mut per_move = Vec::with_capacity(moves);
    let mut stab = Vec::with_capacity(moves);
    for e in 0..moves {
        let xs: Vec<f64> = ks
            .iter()
            .map(|k| {
                mins[e] = mins[e].min(k.prob(e));
                k.prob(e).powf(-alpha)
            })
            .collect();
        per_move.push(Moments::from_slice(&xs).estimate(DEFAULT_LEVEL));
        stab.push(stabilization(&xs, DEFAULT_DIVERGENCE_RATIO));
    }
    let kappa_hat = mins.iter().copied().fold(f64::INFINITY, f64::min);
    let sup = per_move
        .iter()
        .cloned()
        .max_by(|a, b| a.estimate.total_cmp(&b.estimate))
        .expect("at least two moves");
    let exact = (0..moves)
        .filter_map(|e| {
            let mut b = vec![0.0; moves];
            b[e] = alpha;
            dirichlet_negative_moment(law, &b)
        })
        .reduce(f64::max);
    let divergent = stab.iter().any(|s| s.divergent) || exact == Some(f64::INFINITY);
    Ok(EllipticityReport {
        min_entry_estimate: mins,
        kappa_hat,
        alpha,
        inverse_moment: sup.with_seed(key.master_seed, "ellipticity"),
        per_move,
        stabilization: stab,
        exact_inverse_moment: exact,
        divergent,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EBetaReport {
    /// `2 sum_e beta_e - sup_e' (beta_e' + beta_{-e'})`.
    pub combinatorial_quantity: f64,
    /// Combinatorial quantity minus the threshold `beta`.
    pub combinatorial_margin: f64,
    /// `E[prod_e omega(0, e)^{-beta_e}]`.
    pub moment_estimate: EstimateWithCI,
    pub stabilization: Stabilization,
    /// Closed form for Dirichlet laws.
    pub exact_moment: Option<f64>,
    /// Empirical drift of the running mean, or an infinite closed form.
    pub divergent: bool,
    pub satisfied: bool,
}

/// The `(E)_beta` ellipticity check for per-move exponents `betas`.
pub fn check_e_beta(
    law: &EnvironmentLaw,
    betas: &[f64],
    beta: f64,
    n_samples: usize,
    key: &StreamKey,
) -> Result<EBetaReport> {
    let moves = 2 * law.dim();
    if betas.len() != moves || betas.iter().any(|b| !(*b > 0.0)) {
        return Err(RwreError::config(format!("need {moves} positive per-move exponents")));
    }
    let total: f64 = betas.iter().sum();
    let pair_max = (0..law.dim()).map(|a| betas[2 * a] + betas[2 * a + 1]).fold(f64::NEG_INFINITY, f64::max);
    let quantity = 2.0 * total - pair_max;
    let ks = sample_kernels(law, n_samples.max(8), key);
    let xs: Vec<f64> = ks
        .iter()
        .map(|k| (0..moves).map(|e| -betas[e] * k.prob(e).ln()).sum::<f64>().exp())
        .collect();
    let est = Moments::from_slice(&xs).estimate(DEFAULT_LEVEL).with_seed(key.master_seed, "e_beta");
    let stab = stabilization(&xs, DEFAULT_DIVERGENCE_RATIO);
    let margin = quantity - beta;
    let exact = dirichlet_negative_moment(law, betas);
    let divergent = stab.divergent || exact == Some(f64::INFINITY);
    Ok(EBetaReport {
        combinatorial_quantity: quantity,
        combinatorial_margin: margin,
        satisfied: margin > 0.0 && !divergent,
        exact_moment: exact,
        divergent,
        moment_estimate: est,
        stabilization: stab,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrapReport {
    pub moves: Vec<String>,
    /// `E[1 / (1 - omega(0, e) omega(e, -e))]` per move.
    pub estimates: Vec<EstimateWithCI>,
    pub stabilization: Vec<Stabilization>,
    pub divergent: Vec<bool>,
    /// Largest product `omega(0, e) omega(e, -e)` seen in the samples.
    pub max_product: f64,
}

/// Edge-trap integrability: for each move `e`, the expected number of
/// two-step returns across the edge `{0, e}`, using independent kernels at
/// `0` and at `e`.
pub fn trap_criterion(law: &EnvironmentLaw, n_samples: usize, key: &StreamKey) -> Result<TrapReport> {
    if n_samples < 1 {
        return Err(RwreError::config("trap criterion needs n_samples >= 1"));
    }
    let j = law.jumps().without_hold();
    let mut rng = key.rng(0);
    let pairs: Vec<(TransitionKernel, TransitionKernel)> =
        (0..n_samples).map(|_| (law.sample(&mut rng), law.sample(&mut rng))).collect();
    let mut estimates = Vec::new();
    let mut stab = Vec::new();
    let mut max_product: f64 = 0.0;
    for e in 0..j.len() {
        let xs: Vec<f64> = pairs
            .iter()
            .map(|(here, there)| {
                let prod = here.prob(e) * there.prob(j.opposite(e));
                max_product = max_product.max(prod);
                1.0 / (1.0 - prod)
            })
            .collect();
        estimates.push(Moments::from_slice(&xs).estimate(DEFAULT_LEVEL).with_seed(key.master_seed, "trap"));
        stab.push(stabilization(&xs, DEFAULT_DIVERGENCE_RATIO));
    }
    Ok(TrapReport {
        moves: (0..j.len()).map(|e| j.label(e)).collect(),
        divergent: stab.iter().map(|s| s.divergent).collect(),
        estimates,
        stabilization: stab,
        max_product,
    })
}

pub fn local_drift(kernel: &TransitionKernel) -> Vec<f64> {
    kernel.local_drift()[..kernel.dim()].to_vec()
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NestlingClass {
    NonNestling,
    MarginallyNestling,
    PlainNestling,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NestlingReport {
    pub class: NestlingClass,
    /// All sampled drifts coincide (the hull is a point).
    pub degenerate: bool,
    /// Signed distance from 0 to the hull boundary: positive inside,
    /// negative outside.
    pub signed_depth: f64,
    pub distinct_drifts: usize,
}

pub const HULL_TOL: f64 = 1e-9;

/// Position of the origin relative to the convex hull of sampled drifts.
pub fn nestling_class(law: &EnvironmentLaw, n_samples: usize, key: &StreamKey) -> Result<NestlingReport> {
    if n_samples < 2 {
        return Err(RwreError::config("nestling classification needs n_samples >= 2"));
    }
    let dim = law.dim();
    let mut drifts: Vec<[f64; MAX_DIM]> =
        sample_kernels(law, n_samples, key).iter().map(|k| k.local_drift()).collect();
    drifts.sort_by(|a, b| a.partial_cmp(b).expect("finite drifts"));
    drifts.dedup();
    let depth = hull_signed_depth(&drifts, dim);
    let class = if depth < -HULL_TOL {
        NestlingClass::NonNestling
    } else if depth <= HULL_TOL {
        NestlingClass::MarginallyNestling
    } else {
        NestlingClass::PlainNestling
    };
    Ok(NestlingReport { class, degenerate: drifts.len() == 1, signed_depth: depth, distinct_drifts: drifts.len() })
}

/// `min_{|u| = 1} max_i u . p_i`: the signed distance from the origin to the
/// boundary of `conv{p_i}` (positive inside). A hull with empty interior has
/// non-positive depth.
pub(crate) fn hull_signed_depth(points: &[[f64; MAX_DIM]], dim: usize) -> f64 {
    match dim {
        1 => {
            let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            (-lo).min(hi)
        }
        2 => depth_2d(points),
        _ => depth_sampled(points, dim),
    }
}

fn depth_2d(points: &[[f64; MAX_DIM]]) -> f64 {
    let support = |ux: f64, uy: f64| points.iter().map(|p| ux * p[0] + uy * p[1]).fold(f64::NEG_INFINITY, f64::max);
    let hull = convex_hull_2d(points);
    if hull.len() < 3 {
        // Segment or point: the origin is never interior. The depth is minus
        // the distance to the segment.
        let (a, b) = (hull[0], *hull.last().expect("non-empty"));
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 { (-(a[0] * dx + a[1] * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
        return -(cx * cx + cy * cy).sqrt();
    }
    // Inside: min over edge outward normals of the support value.
    let mut inside = true;
    let mut min_edge = f64::INFINITY;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let n = (ex * ex + ey * ey).sqrt();
        // Counter-clockwise hull: outward normal is (ey, -ex).
        let (nx, ny) = (ey / n, -ex / n);
        let h = nx * a[0] + ny * a[1];
        min_edge = min_edge.min(h);
        if h < 0.0 {
            inside = false;
        }
    }
    if inside {
        return min_edge;
    }
    // Outside: distance to the polygon.
    let mut best = f64::INFINITY;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = (-(a[0] * dx + a[1] * dy) / len2).clamp(0.0, 1.0);
        let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
        best = best.min((cx * cx + cy * cy).sqrt());
    }
    let _ = support;
    -best
}

fn convex_hull_2d(points: &[[f64; MAX_DIM]]) -> Vec<[f64; MAX_DIM]> {
    let mut pts: Vec<[f64; MAX_DIM]> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: &[f64; MAX_DIM], a: &[f64; MAX_DIM], b: &[f64; MAX_DIM]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; MAX_DIM]> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<[f64; MAX_DIM]> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        // Collinear input: return the two extreme points.
        return vec![pts[0], pts[pts.len() - 1]];
    }
    lower
}

fn depth_sampled(points: &[[f64; MAX_DIM]], dim: usize) -> f64 {
    // Fibonacci sphere directions (d = 3).
    assert_eq!(dim, 3);
    let n = 20_000;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut best = f64::INFINITY;
    for i in 0..n {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - y * y).sqrt();
        let th = golden * i as f64;
        let u = [r * th.cos(), y, r * th.sin()];
        let h = points.iter().map(|p| u[0] * p[0] + u[1] * p[1] + u[2] * p[2]).fold(f64::NEG_INFINITY, f64::max);
        best = best.min(h);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(s: u64) -> StreamKey {
        StreamKey::new(s, "env_model_test", "k")
    }

    #[test]
    fn dirichlet_uniform_mean_is_quarter() {
        let law = EnvironmentLaw::dirichlet(2, &[1.0; 4]).unwrap();
        let mut rng = key(1).rng(0);
        let n = 100_000;
        let mut m: Vec<Moments> = vec![Moments::new(); 4];
        for _ in 0..n {
            let k = law.sample(&mut rng);
            assert!(k.check_simplex());
            for (e, mm) in m.iter_mut().enumerate() {
                mm.push(k.prob(e));
            }
        }
        for mm in &m {
            assert!((mm.mean - 0.25).abs() <= 3.0 * mm.std_error(), "{} +- {}", mm.mean, mm.std_error());
        }
    }

    #[test]
    fn homogeneous_and_balanced_samples() {
        let law = EnvironmentLaw::homogeneous_1d(0.75).unwrap();
        let mut rng = key(2).rng(0);
        for _ in 0..10 {
            assert_eq!(law.sample(&mut rng).probs(), &[0.75, 0.25]);
        }
        let b = EnvironmentLaw::balanced(3, BalancedWeights::UniformNormalized { lo: 0.1, hi: 0.4 }).unwrap();
        for _ in 0..1000 {
            let k = b.sample(&mut rng);
            assert!(k.is_balanced() && k.check_simplex());
            assert_eq!(local_drift(&k), vec![0.0; 3]);
        }
    }

    #[test]
    fn invalid_laws_rejected() {
        assert!(EnvironmentLaw::dirichlet(2, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(EnvironmentLaw::dirichlet(2, &[1.0, 1.0]).is_err());
        assert!(EnvironmentLaw::balanced(2, BalancedWeights::Fixed(vec![0.3, 0.3])).is_err());
        assert!(EnvironmentLaw::trap(PhiLaw::ScaledSquaredUniform { c: 0.5 }).is_err());
        assert!(TransitionKernel::new(JumpSet::new(1, false).unwrap(), &[0.6, 0.6]).is_err());
    }

    #[test]
    fn kernel_at_is_deterministic_and_order_free() {
        let env = Environment::new(EnvironmentLaw::dirichlet(2, &[0.5, 1.0, 2.0, 1.0]).unwrap(), 42);
        let sites: Vec<Site> = (0..50).map(|i| Site::new(&[i % 7 - 3, i / 7 - 3])).collect();
        let fwd: Vec<_> = sites.iter().map(|s| env.kernel_at(*s)).collect();
        let back: Vec<_> = sites.iter().rev().map(|s| env.kernel_at(*s)).collect();
        for (a, b) in fwd.iter().zip(back.iter().rev()) {
            assert_eq!(a, b);
        }
        let other = Environment::new((*env.law).clone(), 43);
        assert!(sites.iter().any(|s| other.kernel_at(*s) != env.kernel_at(*s)));
    }

    #[test]
    fn anisotropic_constant_along_e2() {
        let env = Environment::new(EnvironmentLaw::anisotropic_default().unwrap(), 9);
        assert_eq!(env.kernel_at(Site::new(&[3, 7])), env.kernel_at(Site::new(&[3, 0])));
        let k = env.kernel_at(Site::new(&[5, -2]));
        assert_eq!(k.prob(2), 0.25);
        assert!((k.prob(0) + k.prob(1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn drift_examples() {
        assert_eq!(local_drift(&TransitionKernel::symmetric(2).unwrap()), vec![0.0, 0.0]);
        assert_eq!(local_drift(&TransitionKernel::one_dim(0.75).unwrap()), vec![0.5]);
    }

    #[test]
    fn hold_mixing() {
        let k = TransitionKernel::one_dim(0.6).unwrap().with_hold(0.25);
        assert_eq!(k.jumps.len(), 3);
        assert!((k.prob(0) - 0.45).abs() < 1e-15 && (k.prob(2) - 0.25).abs() < 1e-15);
        assert!(k.check_simplex());
    }

    #[test]
    fn nestling_examples() {
        let nn = EnvironmentLaw::mixture(&[
            (TransitionKernel::new(JumpSet::new(2, false).unwrap(), &[0.3, 0.2, 0.25, 0.25]).unwrap(), 0.5),
            (TransitionKernel::new(JumpSet::new(2, false).unwrap(), &[0.4, 0.1, 0.3, 0.2]).unwrap(), 0.5),
        ])
        .unwrap();
        assert_eq!(nestling_class(&nn, 100, &key(3)).unwrap().class, NestlingClass::NonNestling);
        let plain = EnvironmentLaw::two_point(0.75, 0.4).unwrap();
        assert_eq!(nestling_class(&plain, 100, &key(3)).unwrap().class, NestlingClass::PlainNestling);
        let bal = EnvironmentLaw::balanced(2, BalancedWeights::UniformNormalized { lo: 0.1, hi: 0.4 }).unwrap();
        let r = nestling_class(&bal, 100, &key(3)).unwrap();
        assert_eq!(r.class, NestlingClass::MarginallyNestling);
        assert!(r.degenerate);
        let p2 = EnvironmentLaw::mixture(&[
            (TransitionKernel::new(JumpSet::new(2, false).unwrap(), &[0.6, 0.2, 0.1, 0.1]).unwrap(), 0.6),
            (TransitionKernel::new(JumpSet::new(2, false).unwrap(), &[0.2, 0.4, 0.3, 0.1]).unwrap(), 0.2),
            (TransitionKernel::new(JumpSet::new(2, false).unwrap(), &[0.2, 0.4, 0.1, 0.3]).unwrap(), 0.2),
        ])
        .unwrap();
        assert_eq!(nestling_class(&p2, 200, &key(4)).unwrap().class, NestlingClass::PlainNestling);
    }

    #[test]
    fn hull_depth_3d_sampled() {
        let pts = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];
        let d = hull_signed_depth(&pts, 3);
        assert!((d - 1.0 / 3f64.sqrt()).abs() < 1e-2, "{d}");
        let shifted: Vec<[f64; 3]> = pts.iter().map(|p| [p[0] + 3.0, p[1], p[2]]).collect();
        assert!(hull_signed_depth(&shifted, 3) < -1.9);
    }
}
