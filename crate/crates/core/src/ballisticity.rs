//! Finite-box estimators for the ballisticity conditions: slab exits for
//! `(T)_gamma` and `(P*)_M`, the `(P)_M` box check, the effective
//! criterion, the `E_j` decomposition of `E[rho^a]`, atypical quenched exit
//! probabilities and exits from the domains `D_L`.
//!
//! The theoretical constants are astronomically large or unspecified, so
//! every report carries a list of [`Override`] records next to its verdict.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::sync::Arc;

use crate::env_model::EnvironmentLaw;
use crate::error::{Result, RwreError};
use crate::exact_quenched::{front_and_rest, solve_dirichlet, FiniteDomain, QuenchedField, SolveMethod};
use crate::lattice::{Direction, Site};
use crate::rng::StreamKey;
use crate::stats::{linear_fit, wilson, CensoredBand, EstimateWithCI, Moments, DEFAULT_LEVEL};
use crate::walk_sim::{par_replicas, replica_env, replica_rng, WalkState, Walker};

pub use crate::renewal::transience_probe;

/// Largest box (in lattice sites) built without an explicit lateral
/// override.
pub const SITE_CAP: f64 = 400_000.0;

/// A constant or geometric parameter used in place of its theoretical value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub name: String,
    /// `NaN` (serialized as `null`) when theory leaves the value unspecified.
    pub theoretical: f64,
    pub used: f64,
    pub note: String,
}

impl Override {
    fn new(name: &str, theoretical: f64, used: f64, note: &str) -> Self {
        Override { name: name.into(), theoretical, used, note: note.into() }
    }
}

/// An orthonormal basis of the hyperplane orthogonal to `l`.
pub fn orthogonal_frame(l: &Direction) -> Vec<Vec<f64>> {
    let u = l.unit();
    let d = u.len();
    let mut out: Vec<Vec<f64>> = Vec::new();
    // Gram-Schmidt on the coordinate vectors, least aligned with l first.
    let mut axes: Vec<usize> = (0..d).collect();
    axes.sort_by(|a, b| u[*a].abs().total_cmp(&u[*b].abs()));
    for a in axes {
        if out.len() == d - 1 {
            break;
        }
        let mut v = vec![0.0; d];
        v[a] = 1.0;
        for w in std::iter::once(&u).chain(out.iter()) {
            let c: f64 = v.iter().zip(w).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(w) {
                *x -= c * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

fn dot(x: Site, v: &[f64]) -> f64 {
    x.dot(v)
}

/// `|pi_{l^perp}(x)|_inf`.
fn lateral_inf(x: Site, u: &[f64]) -> f64 {
    let h = dot(x, u);
    (0..u.len()).map(|a| (x.0[a] as f64 - h * u[a]).abs()).fold(0.0, f64::max)
}

/// `l` and `2(d-1)` perturbations of it, tilted by `angle` radians along
/// each direction of an orthonormal frame of `l^perp`.
pub fn cone_directions(l: &Direction, angle: f64) -> Result<Vec<Direction>> {
    let u = l.unit();
    let mut out = vec![l.clone()];
    for f in orthogonal_frame(l) {
        for s in [1.0, -1.0] {
            let v: Vec<f64> = u.iter().zip(&f).map(|(a, b)| a * angle.cos() + s * b * angle.sin()).collect();
            out.push(Direction::real(v)?);
        }
    }
    Ok(out)
}

/// Bounding box of `{x : lo < x.l < hi, |x.f_j| < lat}`.
fn bounding_box(u: &[f64], frame: &[Vec<f64>], lo: f64, hi: f64, lat: f64) -> (Vec<i64>, Vec<i64>) {
    let d = u.len();
    let h = lo.abs().max(hi.abs());
    (0..d)
        .map(|a| {
            let r = u[a].abs() * h + frame.iter().map(|f| f[a].abs() * lat).sum::<f64>();
            let r = r.ceil() as i64 + 1;
            (-r, r)
        })
        .unzip()
}

fn front_piece(front: bool) -> String {
    if front {
        "front".into()
    } else {
        "rest".into()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlabSpec {
    pub l_prime: Direction,
    pub b: f64,
    pub length: f64,
    /// Lateral half-width for exact solves (`None`: start at `4 L`).
    pub lateral_bound: Option<i64>,
}

impl SlabSpec {
    pub fn new(l_prime: Direction, b: f64, length: f64) -> Result<Self> {
        if !(b > 0.0 && length > 0.0) {
            return Err(RwreError::config("slab needs b > 0 and L > 0"));
        }
        Ok(SlabSpec { l_prime, b, length, lateral_bound: None })
    }

    /// The truncated slab `-bL < x.l' < L`, lateral sup-norm `< w`, with
    /// boundary pieces `back` (`x.l' <= -bL`), `front` (`x.l' >= L`) and
    /// `side`.
    pub fn domain(&self, w: i64) -> Result<FiniteDomain> {
        let u = self.l_prime.unit();
        let d = u.len();
        let (lo_h, hi_h) = (-self.b * self.length, self.length);
        let back = move |y: Site, u: &[f64]| dot(y, u) <= lo_h;
        let front = move |y: Site, u: &[f64]| dot(y, u) >= hi_h;
        if d == 1 {
            let uu = u.clone();
            let sites: Vec<Site> = (lo_h.floor() as i64 - 1..=hi_h.ceil() as i64 + 1)
                .map(|x| Site::new(&[x]))
                .filter(|y| !back(*y, &uu) && !front(*y, &uu))
                .collect();
            return FiniteDomain::new(1, sites, move |y| if back(y, &u) { "back".into() } else { "front".into() });
        }
        let frame = orthogonal_frame(&self.l_prime);
        let (lo, hi) = bounding_box(&u, &frame, lo_h, hi_h, (w as f64) * (d as f64).sqrt());
        let u2 = u.clone();
        FiniteDomain::from_predicate(
            d,
            &lo,
            &hi,
            |y| !back(y, &u) && !front(y, &u) && lateral_inf(y, &u) < w as f64,
            move |y| {
                if back(y, &u2) {
                    "back".into()
                } else if front(y, &u2) {
                    "front".into()
                } else {
                    "side".into()
                }
            },
        )
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlabMethod {
    WalkMc,
    ExactEnvMc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlabBudget {
    /// Walks (`WalkMc`) or environments (`ExactEnvMc`).
    pub replicas: u64,
    pub horizon: u64,
    /// Stop doubling the lateral bound once the domain would exceed this.
    pub max_sites: usize,
}

impl Default for SlabBudget {
    fn default() -> Self {
        SlabBudget { replicas: 10_000, horizon: 1_000_000, max_sites: 200_000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LateralSensitivity {
    /// `(lateral bound, estimate)` for each bound tried.
    pub history: Vec<(i64, f64)>,
    /// Change between the last two bounds.
    pub delta: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlabReport {
    pub method: SlabMethod,
    pub b: f64,
    pub length: f64,
    pub estimate: EstimateWithCI,
    pub band: Option<CensoredBand>,
    /// Horizon censoring leaves a band wider than 0.5.
    pub inconclusive: bool,
    pub lateral: Option<LateralSensitivity>,
}

/// `P_0[H^{-l'}_{bL} < H^{l'}_L]`, where the back side is reached at
/// `X.l' <= -bL` and the front at `X.l' >= L`.
pub fn slab_exit_probability(
    law: &Arc<EnvironmentLaw>,
    spec: &SlabSpec,
    method: SlabMethod,
    budget: &SlabBudget,
    key: &StreamKey,
) -> Result<SlabReport> {
    if budget.replicas == 0 {
        return Err(RwreError::config("slab exit needs replicas >= 1"));
    }
    if spec.l_prime.dim() != law.dim() {
        return Err(RwreError::config("slab direction and law dimension differ"));
    }
    match method {
        SlabMethod::WalkMc => slab_walk_mc(law, spec, budget, key),
        SlabMethod::ExactEnvMc => slab_exact(law, spec, budget, key),
    }
}

fn slab_walk_mc(law: &Arc<EnvironmentLaw>, spec: &SlabSpec, budget: &SlabBudget, key: &StreamKey) -> Result<SlabReport> {
    let (lo, hi) = (-spec.b * spec.length, spec.length);
    // Some(true): back exit, Some(false): front exit, None: censored.
    let out = par_replicas(budget.replicas, |r| {
        let env = replica_env(law, key, r);
        let mut w = Walker::new(&env);
        let mut rng = replica_rng(key, r);
        let mut s = WalkState::default();
        while s.time < budget.horizon {
            s = w.step(s, &mut rng);
            let h = spec.l_prime.height(s.position);
            if h <= lo {
                return Some(true);
            }
            if h >= hi {
                return Some(false);
            }
        }
        None
    });
    let back = out.iter().filter(|o| **o == Some(true)).count() as u64;
    let censored = out.iter().filter(|o| o.is_none()).count() as u64;
    let band = CensoredBand::new(back, censored, budget.replicas, DEFAULT_LEVEL);
    let estimate = wilson(back, budget.replicas, DEFAULT_LEVEL)
        .with_censored(band.censored_fraction())
        .with_seed(key.master_seed, "slab_walk");
    Ok(SlabReport {
        method: SlabMethod::WalkMc,
        b: spec.b,
        length: spec.length,
        inconclusive: band.width() > 0.5,
        estimate,
        band: Some(band),
        lateral: None,
    })
}

fn slab_back_estimate(law: &Arc<EnvironmentLaw>, dom: FiniteDomain, replicas: u64, key: &StreamKey) -> Result<EstimateWithCI> {
    let dom = Arc::new(dom);
    let back = dom.piece_id("back")?;
    let data: Vec<f64> = (0..dom.boundary().len()).map(|b| if dom.piece_of_boundary(b) == back { 1.0 } else { 0.0 }).collect();
    let i0 = dom.index_of(Site::ORIGIN).ok_or_else(|| RwreError::config("origin outside the slab"))?;
    let n = if law.is_deterministic() { 1 } else { replicas };
    let xs = par_replicas(n, |r| -> Result<f64> {
        let field = QuenchedField::from_env(dom.clone(), &replica_env(law, key, r));
        Ok(solve_dirichlet(&field, std::slice::from_ref(&data), &[0.0], SolveMethod::Auto)?.values[0][i0].clamp(0.0, 1.0))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    if n == 1 {
        return Ok(EstimateWithCI::exact(xs[0]));
    }
    Ok(Moments::from_slice(&xs).estimate(DEFAULT_LEVEL).with_seed(key.master_seed, "slab_exact"))
}

fn slab_exact(law: &Arc<EnvironmentLaw>, spec: &SlabSpec, budget: &SlabBudget, key: &StreamKey) -> Result<SlabReport> {
    let report = |estimate, lateral| SlabReport {
        method: SlabMethod::ExactEnvMc,
        b: spec.b,
        length: spec.length,
        estimate,
        band: None,
        inconclusive: false,
        lateral,
    };
    if law.dim() == 1 {
        return Ok(report(slab_back_estimate(law, spec.domain(1)?, budget.replicas, key)?, None));
    }
    let mut w = spec.lateral_bound.unwrap_or((4.0 * spec.length).ceil() as i64).max(1);
    let mut history: Vec<(i64, f64)> = Vec::new();
    let mut last: Option<EstimateWithCI> = None;
    let mut converged = false;
    loop {
        let dom = spec.domain(w)?;
        if dom.len() > budget.max_sites && last.is_some() {
            break;
        }
        let est = slab_back_estimate(law, dom, budget.replicas, key)?;
        history.push((w, est.estimate));
        if let Some(prev) = &last {
            let change = (est.estimate - prev.estimate).abs();
            if change <= 0.01 * est.estimate.abs() || change < 1e-14 {
                converged = true;
                last = Some(est);
                break;
            }
        }
        last = Some(est);
        w *= 2;
    }
    let delta = match history.as_slice() {
        [.., a, b] => (b.1 - a.1).abs(),
        _ => f64::NAN,
    };
    Ok(report(last.expect("at least one lateral bound"), Some(LateralSensitivity { history, delta, converged })))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaFit {
    pub gamma_hat: f64,
    pub std_error: f64,
    pub intercept: f64,
    pub used: Vec<f64>,
    /// Scales with `p = 0` (Monte Carlo floor) or `p >= 1`.
    pub excluded: Vec<f64>,
    /// The estimates decrease strictly along the grid.
    pub decreasing: bool,
    /// No decay: `gamma_hat <= 2 se` or the estimates do not decrease.
    pub rejected: bool,
    pub verdict: String,
}

/// Regress `log(-log p)` on `log L`.
pub fn fit_t_gamma(points: &[(f64, EstimateWithCI)]) -> Result<GammaFit> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|(l, e)| (*l, e.estimate)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (used, excluded): (Vec<(f64, f64)>, Vec<(f64, f64)>) = pts.iter().partition(|(_, p)| *p > 0.0 && *p < 1.0);
    if used.len() < 4 {
        return Err(RwreError::InsufficientData(format!(
            "gamma fit needs 4 scales with 0 < p < 1, got {} (excluded {:?})",
            used.len(),
            excluded.iter().map(|p| p.0).collect::<Vec<_>>()
        )));
    }
    let x: Vec<f64> = used.iter().map(|(l, _)| l.ln()).collect();
    let y: Vec<f64> = used.iter().map(|(_, p)| (-p.ln()).ln()).collect();
    let (a, b, se) = linear_fit(&x, &y).ok_or_else(|| RwreError::InsufficientData("degenerate L grid".into()))?;
    let decreasing = used.windows(2).all(|w| w[1].1 < w[0].1);
    let rejected = !decreasing || b <= 2.0 * se;
    let verdict = if rejected {
        "no decay detected: fit rejected".to_string()
    } else {
        format!("consistent with (T)_gamma for gamma near {b:.3}")
    };
    Ok(GammaFit {
        gamma_hat: b,
        std_error: se,
        intercept: a,
        used: used.iter().map(|p| p.0).collect(),
        excluded: excluded.iter().map(|p| p.0).collect(),
        decreasing,
        rejected,
        verdict,
    })
}

/// Geometry of the `(P)_M` box at `x = 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PBoxSpec {
    pub n0: i64,
    pub l: Direction,
    /// Lateral half-width of `B` (theory: `25 N_0^3`).
    pub lateral_b: f64,
    /// Lateral half-width of the frontal part (theory: `N_0^3`).
    pub lateral_tilde: f64,
    pub reduced_lateral: bool,
}

impl PBoxSpec {
    pub fn new(n0: i64, l: Direction) -> Result<Self> {
        if n0 < 2 || n0 % 2 != 0 {
            return Err(RwreError::config(format!("N_0 must be an even integer >= 2, got {n0}")));
        }
        let c = (n0 as f64).powi(3);
        Ok(PBoxSpec { n0, l, lateral_b: 25.0 * c, lateral_tilde: c, reduced_lateral: false })
    }

    pub fn with_reduced_lateral(mut self, lateral_b: f64, lateral_tilde: f64) -> Result<Self> {
        if !(lateral_tilde > 0.0 && lateral_tilde <= lateral_b) {
            return Err(RwreError::config("reduced lateral sizes need 0 < tilde <= B"));
        }
        self.lateral_b = lateral_b;
        self.lateral_tilde = lateral_tilde;
        self.reduced_lateral = true;
        Ok(self)
    }

    pub fn n_minus_1(&self) -> f64 {
        2.0 * self.n0 as f64 / 3.0
    }

    pub fn estimated_sites(&self) -> f64 {
        let d = self.l.dim() as i32;
        1.5 * self.n0 as f64 * (2.0 * self.lateral_b).powi(d - 1)
    }

    pub fn in_box(&self, y: Site) -> bool {
        let u = self.l.unit();
        let h = dot(y, &u);
        -(self.n0 as f64) / 2.0 < h && h < self.n0 as f64 && lateral_inf(y, &u) < self.lateral_b
    }

    pub fn in_tilde(&self, y: Site) -> bool {
        let u = self.l.unit();
        let h = dot(y, &u);
        let n0 = self.n0 as f64;
        n0 - self.n_minus_1() <= h && h < n0 && lateral_inf(y, &u) < self.lateral_tilde
    }

    pub fn in_front(&self, y: Site) -> bool {
        dot(y, &self.l.unit()) >= self.n0 as f64
    }

    pub fn domain(&self) -> Result<FiniteDomain> {
        if self.estimated_sites() > SITE_CAP {
            return Err(RwreError::Resource(format!(
                "(P)_M box with N_0 = {} has about {:.3e} sites; pass a reduced-lateral override",
                self.n0,
                self.estimated_sites()
            )));
        }
        let u = self.l.unit();
        let frame = orthogonal_frame(&self.l);
        let d = u.len();
        let lat = self.lateral_b * (d as f64).sqrt();
        let (lo, hi) = bounding_box(&u, &frame, -(self.n0 as f64), self.n0 as f64, lat);
        FiniteDomain::from_predicate(d, &lo, &hi, |y| self.in_box(y), |y| front_piece(self.in_front(y)))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub n0: i64,
    pub m: f64,
    /// `N_0^{-M}`.
    pub threshold: f64,
    /// Environment-averaged non-front exit probability at the worst sampled
    /// start, with its CI over environment replicas.
    pub sup_estimate: EstimateWithCI,
    pub argmax_start: Site,
    pub starts_sampled: usize,
    pub holds: bool,
    /// `ln c_3 = 100 + 4 d (ln kappa)^2` when kappa is declared.
    pub ln_c3: Option<f64>,
    pub n0_meets_c3: bool,
    pub overrides: Vec<Override>,
    pub caveat: String,
}

pub const SUP_CAVEAT: &str = "sup over a uniform subsample of the frontal part plus its center: a lower bound on the true sup";

/// `(P)_M`: `sup_{x in B~_0} P_x[H_{dB_0} != H_{d+B_0}] < N_0^{-M}` under the
/// averaged law, with environment averaging done before the sup.
pub fn check_p_m(
    law: &Arc<EnvironmentLaw>,
    spec: &PBoxSpec,
    m: f64,
    replicas: u64,
    start_sample: usize,
    key: &StreamKey,
) -> Result<ConditionReport> {
    if spec.l.dim() != law.dim() {
        return Err(RwreError::config("box direction and law dimension differ"));
    }
    if replicas == 0 {
        return Err(RwreError::config("(P)_M check needs replicas >= 1"));
    }
    let dom = Arc::new(spec.domain()?);
    let tilde: Vec<usize> = (0..dom.len()).filter(|&i| spec.in_tilde(dom.interior()[i])).collect();
    if tilde.is_empty() {
        return Err(RwreError::config("frontal part of the box is empty"));
    }
    let u = spec.l.unit();
    let mid = spec.n0 as f64 - spec.n_minus_1() / 2.0;
    let center = *tilde
        .iter()
        .min_by(|&&a, &&b| {
            let da = (dot(dom.interior()[a], &u) - mid).abs() + lateral_inf(dom.interior()[a], &u);
            let db = (dot(dom.interior()[b], &u) - mid).abs() + lateral_inf(dom.interior()[b], &u);
            da.total_cmp(&db)
        })
        .expect("non-empty");
    let mut starts: Vec<usize> = if start_sample >= tilde.len() {
        tilde.clone()
    } else {
        let mut rng = key.child("starts", 0).rng(0);
        sample(&mut rng, tilde.len(), start_sample).into_iter().map(|i| tilde[i]).collect()
    };
    if !starts.contains(&center) {
        starts.push(center);
    }
    let front = dom.piece_id("front")?;
    let rest: Vec<f64> = (0..dom.boundary().len()).map(|b| if dom.piece_of_boundary(b) == front { 0.0 } else { 1.0 }).collect();
    let n = if law.is_deterministic() { 1 } else { replicas };
    let per: Vec<Vec<f64>> = par_replicas(n, |r| -> Result<Vec<f64>> {
        let field = QuenchedField::from_env(dom.clone(), &replica_env(law, key, r));
        let v = solve_dirichlet(&field, std::slice::from_ref(&rest), &[0.0], SolveMethod::Auto)?;
        Ok(starts.iter().map(|&i| v.values[0][i].clamp(0.0, 1.0)).collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let means: Vec<Moments> = (0..starts.len()).map(|k| Moments::from_slice(&per.iter().map(|v| v[k]).collect::<Vec<_>>())).collect();
    let (kmax, _) = means.iter().enumerate().max_by(|a, b| a.1.mean.total_cmp(&b.1.mean)).expect("non-empty");
    let sup_estimate = if n == 1 {
        EstimateWithCI::exact(means[kmax].mean)
    } else {
        means[kmax].estimate(DEFAULT_LEVEL).with_seed(key.master_seed, "p_m")
    };
    let threshold = (spec.n0 as f64).powf(-m);
    let d = law.dim() as f64;
    let ln_c3 = law.declared_kappa.map(|k| 100.0 + 4.0 * d * k.ln().powi(2));
    let n0_meets_c3 = ln_c3.is_some_and(|c| (spec.n0 as f64).ln() >= c);
    let mut overrides = Vec::new();
    if !n0_meets_c3 {
        overrides.push(Override::new(
            "N_0",
            ln_c3.map(f64::exp).unwrap_or(f64::NAN),
            spec.n0 as f64,
            "N_0 below c_3 = exp(100 + 4 d (ln kappa)^2); theoretical value is ln-reported in ln_c3",
        ));
    }
    if spec.reduced_lateral {
        let c = (spec.n0 as f64).powi(3);
        overrides.push(Override::new("lateral_B", 25.0 * c, spec.lateral_b, "reduced lateral size of B"));
        overrides.push(Override::new("lateral_B_tilde", c, spec.lateral_tilde, "reduced lateral size of the frontal part"));
    }
    Ok(ConditionReport {
        condition: "(P)_M".into(),
        n0: spec.n0,
        m,
        threshold,
        holds: sup_estimate.estimate < threshold,
        sup_estimate,
        argmax_start: dom.interior()[starts[kmax]],
        starts_sampled: starts.len(),
        ln_c3,
        n0_meets_c3,
        overrides,
        caveat: SUP_CAVEAT.into(),
    })
}

/// The box `R((-(L-2), L+2) x (-L~, L~)^{d-1})` with `R e_1 = l`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EcBoxSpec {
    pub l: Direction,
    pub length: f64,
    pub lateral: f64,
}

impl EcBoxSpec {
    pub fn new(l: Direction, length: f64, lateral: f64) -> Result<Self> {
        if !(length > 2.0 && lateral > 0.0) {
            return Err(RwreError::config("box specification needs L > 2 and L~ > 0"));
        }
        Ok(EcBoxSpec { l, length, lateral })
    }

    pub fn back(&self) -> f64 {
        self.length - 2.0
    }

    pub fn front(&self) -> f64 {
        self.length + 2.0
    }

    pub fn estimated_sites(&self) -> f64 {
        2.0 * self.length * (2.0 * self.lateral).powi(self.l.dim() as i32 - 1)
    }

    /// Interior sites, with boundary pieces `front` (`x.l >= L+2` and every
    /// lateral coordinate `< L~`) and `rest`.
    pub fn domain(&self) -> Result<FiniteDomain> {
        if self.estimated_sites() > SITE_CAP {
            return Err(RwreError::Resource(format!(
                "box with L = {}, L~ = {} has about {:.3e} sites; pass a smaller lateral override",
                self.length,
                self.lateral,
                self.estimated_sites()
            )));
        }
        let u = self.l.unit();
        let frame = orthogonal_frame(&self.l);
        let lat_ok = |y: Site| frame.iter().all(|f| dot(y, f).abs() < self.lateral);
        let (lo, hi) = bounding_box(&u, &frame, -self.back(), self.front(), self.lateral);
        FiniteDomain::from_predicate(
            u.len(),
            &lo,
            &hi,
            |y| {
                let h = dot(y, &u);
                -self.back() < h && h < self.front() && lat_ok(y)
            },
            |y| front_piece(dot(y, &u) >= self.front() && lat_ok(y)),
        )
    }
}

/// Quenched `(front, rest)` exit probabilities from the origin, one pair per
/// environment replica.
pub fn box_exit_replicas(
    law: &Arc<EnvironmentLaw>,
    spec: &EcBoxSpec,
    replicas: u64,
    key: &StreamKey,
) -> Result<Vec<(f64, f64)>> {
    if spec.l.dim() != law.dim() {
        return Err(RwreError::config("box direction and law dimension differ"));
    }
    let dom = Arc::new(spec.domain()?);
    let n = if law.is_deterministic() { 1 } else { replicas };
    let out = par_replicas(n, |r| {
        let field = QuenchedField::from_env(dom.clone(), &replica_env(law, key, r));
        front_and_rest(&field, "front", Site::ORIGIN, SolveMethod::Auto)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(if n == 1 { vec![out[0]; replicas as usize] } else { out })
}

/// `rho_B^a = (rest / front)^a`, with `rho^0 = 1` also when the front
/// probability vanishes.
pub fn rho_pow(front: f64, rest: f64, a: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else if front <= 0.0 {
        f64::INFINITY
    } else if rest <= 0.0 {
        0.0
    } else {
        (a * (rest.ln() - front.ln())).exp()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EcRow {
    pub a: f64,
    pub mean_rho_a: EstimateWithCI,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffectiveCriterionReport {
    pub length: f64,
    pub lateral: f64,
    pub kappa: f64,
    pub c1: f64,
    pub c2: f64,
    /// `c_2 (ln 1/kappa)^{3(d-1)} L~^{d-1} L^{3(d-1)+1}`.
    pub prefactor: f64,
    pub rows: Vec<EcRow>,
    pub best_a: f64,
    pub best_value: f64,
    pub satisfied: bool,
    pub overrides: Vec<Override>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EcConstants {
    pub c1: f64,
    pub c2: f64,
}

impl Default for EcConstants {
    fn default() -> Self {
        EcConstants { c1: 1.0, c2: 1.0 }
    }
}

pub fn effective_criterion(
    law: &Arc<EnvironmentLaw>,
    spec: &EcBoxSpec,
    a_grid: &[f64],
    replicas: u64,
    constants: &EcConstants,
    key: &StreamKey,
) -> Result<EffectiveCriterionReport> {
    let kappa = law.declared_kappa.ok_or_else(|| RwreError::domain("the effective criterion needs a declared kappa"))?;
    let d = law.dim() as i32;
    if !(spec.length > constants.c1) {
        return Err(RwreError::config(format!("effective criterion needs L > c_1 = {}", constants.c1)));
    }
    if !(spec.lateral >= 3.0 * (d as f64).sqrt() && spec.lateral < spec.length.powi(3)) {
        return Err(RwreError::config("effective criterion needs L~ in [3 sqrt(d), L^3)"));
    }
    if a_grid.is_empty() || a_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(RwreError::config("a grid must be a non-empty subset of [0, 1]"));
    }
    let pairs = box_exit_replicas(law, spec, replicas.max(1), key)?;
    let prefactor = constants.c2
        * (1.0 / kappa).ln().powi(3 * (d - 1))
        * spec.lateral.powi(d - 1)
        * spec.length.powi(3 * (d - 1) + 1);
    let exact = law.is_deterministic();
    let rows: Vec<EcRow> = a_grid
        .iter()
        .map(|&a| {
            let xs: Vec<f64> = pairs.iter().map(|(f, r)| rho_pow(*f, *r, a)).collect();
            let est = if exact {
                EstimateWithCI::exact(xs[0])
            } else {
                Moments::from_slice(&xs).estimate(DEFAULT_LEVEL).with_seed(key.master_seed, "effective_criterion")
            };
            EcRow { a, value: prefactor * est.estimate, mean_rho_a: est }
        })
        .collect();
    let best = rows.iter().min_by(|x, y| x.value.total_cmp(&y.value)).expect("non-empty grid");
    let overrides = vec![
        Override::new("c_1", f64::NAN, constants.c1, "dimension dependent constant left unspecified by theory"),
        Override::new("c_2", f64::NAN, constants.c2, "dimension dependent constant left unspecified by theory"),
    ];
    Ok(EffectiveCriterionReport {
        length: spec.length,
        lateral: spec.lateral,
        kappa,
        c1: constants.c1,
        c2: constants.c2,
        prefactor,
        best_a: best.a,
        best_value: best.value,
        satisfied: best.value < 1.0,
        rows,
        overrides,
    })
}

/// Parameters of the `E_j` split at scale `L`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecompositionParams {
    pub gamma_l: f64,
    pub a: f64,
    pub n: usize,
    /// `beta_1, ..., beta_n`.
    pub betas: Vec<f64>,
    pub c4: f64,
    /// `1/2 exp(-c_4 L^{beta_j})` for `j = 1..n`, decreasing.
    pub thresholds: Vec<f64>,
}

pub fn decomposition_params(length: f64, kappa: f64, dim: usize) -> Result<DecompositionParams> {
    if !(length > std::f64::consts::E.powf(std::f64::consts::E)) {
        return Err(RwreError::config("decomposition needs L > e^e"));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(RwreError::domain("decomposition needs 0 < kappa < 1"));
    }
    let gamma_l = 2f64.ln() / length.ln().ln();
    let beta1 = gamma_l / 2.0;
    let a = length.powf(-gamma_l / 3.0);
    let n = (4.0 * (1.0 - gamma_l / 2.0) / gamma_l).ceil() as usize + 1;
    let betas: Vec<f64> = (1..=n).map(|j| beta1 + (j - 1) as f64 * gamma_l / 4.0).collect();
    let c4 = -2.0 * dim as f64 * kappa.ln();
    let thresholds = betas.iter().map(|b| 0.5 * (-c4 * length.powf(*b)).exp()).collect();
    Ok(DecompositionParams { gamma_l, a, n, betas, c4, thresholds })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub params: DecompositionParams,
    /// `E_0, ..., E_n`.
    pub e: Vec<f64>,
    /// Replica counts per bin.
    pub counts: Vec<u64>,
    pub sum: f64,
    pub mean_rho_a: f64,
    /// `|sum_j E_j - E[rho^a]|`.
    pub partition_error: f64,
    /// Smallest quenched front probability across replicas.
    pub min_front: f64,
    /// `e^{-c_4 L}`, the ellipticity floor of the front probability.
    pub ellipticity_floor: f64,
    pub e_n_vanishes: bool,
    pub overrides: Vec<Override>,
}

fn lateral_spec(law: &EnvironmentLaw, length: f64, lateral: Option<f64>, overrides: &mut Vec<Override>) -> Result<EcBoxSpec> {
    let theory = length.powi(3) - 1.0;
    let used = lateral.unwrap_or(theory);
    if lateral.is_some() {
        overrides.push(Override::new("L_tilde", theory, used, "reduced lateral size of the box"));
    }
    EcBoxSpec::new(Direction::axis(law.dim(), 0, 1), length, used)
}

/// Bin environment replicas by their quenched front probability against
/// the thresholds and split `E[rho^a]` accordingly; boxes use `e_1`.
pub fn decomposition_diagnostic(
    law: &Arc<EnvironmentLaw>,
    length: f64,
    lateral: Option<f64>,
    replicas: u64,
    key: &StreamKey,
) -> Result<DecompositionReport> {
    let kappa = law.declared_kappa.ok_or_else(|| RwreError::domain("decomposition needs a declared kappa"))?;
    let params = decomposition_params(length, kappa, law.dim())?;
    let mut overrides = Vec::new();
    let spec = lateral_spec(law, length, lateral, &mut overrides)?;
    let pairs = box_exit_replicas(law, &spec, replicas.max(1), key)?;
    let nrep = pairs.len() as f64;
    let mut e = vec![0.0; params.n + 1];
    let mut counts = vec![0u64; params.n + 1];
    let mut total = 0.0;
    for (f, r) in &pairs {
        let x = rho_pow(*f, *r, params.a);
        total += x;
        let t = &params.thresholds;
        let j = if *f > t[0] {
            0
        } else {
            (1..params.n).find(|&j| t[j] < *f && *f <= t[j - 1]).unwrap_or(params.n)
        };
        e[j] += x;
        counts[j] += 1;
    }
    for v in e.iter_mut() {
        *v /= nrep;
    }
    let mean = total / nrep;
    let sum: f64 = e.iter().sum();
    let min_front = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    Ok(DecompositionReport {
        e_n_vanishes: counts[params.n] == 0,
        ellipticity_floor: (-params.c4 * length).exp(),
        params,
        partition_error: (sum - mean).abs(),
        e,
        counts,
        sum,
        mean_rho_a: mean,
        min_front,
        overrides,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtypicalReport {
    pub beta: f64,
    /// `1/2 exp(-c_4 L^beta)`.
    pub threshold: f64,
    pub estimate: EstimateWithCI,
    /// `5^d e / ceil(L^{beta - eps} / 5^d)!` with `eps = (ln ln L)^{-2}`.
    pub bound: f64,
    pub epsilon: f64,
    pub overrides: Vec<Override>,
}

/// `(bound, eps)`; the bound is evaluated through `ln Gamma` and may
/// exceed 1 at small `L`.
pub fn atypical_bound(length: f64, beta: f64, dim: usize) -> (f64, f64) {
    let eps = 1.0 / length.ln().ln().powi(2);
    let five_d = 5f64.powi(dim as i32);
    let k = (length.powf(beta - eps) / five_d).ceil().max(0.0);
    (((five_d * std::f64::consts::E).ln() - ln_gamma(k + 1.0)).exp(), eps)
}

/// `P[P_{0,omega}[front exit] <= 1/2 exp(-c_4 L^beta)]` for each `beta`, on
/// shared environment replicas so that the estimates are monotone in `beta`.
pub fn atypical_quenched_exit(
    law: &Arc<EnvironmentLaw>,
    length: f64,
    betas: &[f64],
    lateral: Option<f64>,
    replicas: u64,
    key: &StreamKey,
) -> Result<Vec<AtypicalReport>> {
    let kappa = law.declared_kappa.ok_or_else(|| RwreError::domain("atypical exits need a declared kappa"))?;
    if !(length > std::f64::consts::E) {
        return Err(RwreError::config("atypical exit bound needs L > e"));
    }
    let c4 = -2.0 * law.dim() as f64 * kappa.ln();
    let mut overrides = Vec::new();
    let spec = lateral_spec(law, length, lateral, &mut overrides)?;
    let pairs = box_exit_replicas(law, &spec, replicas.max(1), key)?;
    Ok(betas
        .iter()
        .map(|&beta| {
            let threshold = 0.5 * (-c4 * length.powf(beta)).exp();
            let hits = pairs.iter().filter(|(f, _)| *f <= threshold).count() as u64;
            let estimate = if law.is_deterministic() {
                EstimateWithCI::exact(if hits > 0 { 1.0 } else { 0.0 })
            } else {
                wilson(hits, pairs.len() as u64, DEFAULT_LEVEL).with_seed(key.master_seed, "atypical")
            };
            let (bound, epsilon) = atypical_bound(length, beta, law.dim());
            AtypicalReport { beta, threshold, estimate, bound, epsilon, overrides: overrides.clone() }
        })
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DlExitReport {
    pub length: f64,
    /// `L^3 ln ln L / ln L`.
    pub lateral_bound: f64,
    /// Non-front exits (confirmed), horizon-censored walks (censored).
    pub band: CensoredBand,
    pub estimate: EstimateWithCI,
    /// `exp(-L^{ln 2 / ln ln L})`.
    pub reference: f64,
    pub below_reference: bool,
}

/// `P_0[H_{dD_L} < H_{d+D_L}]` for `D_L = {-L <= x.l <= 10 L, lateral <
/// L^3 ln ln L / ln L}`; the frontal boundary is `x.l > 10 L`.
pub fn dl_exit_estimate(
    law: &Arc<EnvironmentLaw>,
    l: &Direction,
    length: f64,
    replicas: u64,
    horizon: u64,
    key: &StreamKey,
) -> Result<DlExitReport> {
    if !(length >= 20.0) {
        return Err(RwreError::config("D_L exits need L >= 20"));
    }
    if replicas == 0 {
        return Err(RwreError::config("D_L exit needs replicas >= 1"));
    }
    let u = l.unit();
    let lateral = length.powi(3) * length.ln().ln() / length.ln();
    let out = par_replicas(replicas, |r| {
        let env = replica_env(law, key, r);
        let mut w = Walker::new(&env);
        let mut rng = replica_rng(key, r);
        let mut s = WalkState::default();
        while s.time < horizon {
            s = w.step(s, &mut rng);
            let h = dot(s.position, &u);
            if h > 10.0 * length {
                return Some(false);
            }
            if h < -length || (u.len() > 1 && lateral_inf(s.position, &u) >= lateral) {
                return Some(true);
            }
        }
        None
    });
    let bad = out.iter().filter(|o| **o == Some(true)).count() as u64;
    let censored = out.iter().filter(|o| o.is_none()).count() as u64;
    let band = CensoredBand::new(bad, censored, replicas, DEFAULT_LEVEL);
    let reference = (-length.powf(2f64.ln() / length.ln().ln())).exp();
    Ok(DlExitReport {
        length,
        lateral_bound: lateral,
        estimate: wilson(bad, replicas, DEFAULT_LEVEL).with_censored(band.censored_fraction()).with_seed(key.master_seed, "dl_exit"),
        below_reference: band.upper < reference,
        band,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::TransitionKernel;

    fn key() -> StreamKey {
        StreamKey::new(5, "ballisticity", "unit")
    }

    #[test]
    fn slab_closed_forms() {
        let law = Arc::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap());
        let spec = SlabSpec::new(Direction::axis(1, 0, 1), 1.0, 10.0).unwrap();
        let r = slab_exit_probability(&law, &spec, SlabMethod::ExactEnvMc, &SlabBudget::default(), &key()).unwrap();
        let rho: f64 = 1.0 / 3.0;
        let closed = (rho.powi(10) - rho.powi(20)) / (1.0 - rho.powi(20));
        assert!(((r.estimate.estimate - closed) / closed).abs() < 1e-10);
        let sym = Arc::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap());
        let s = SlabSpec::new(Direction::axis(1, 0, 1), 0.5, 8.0).unwrap();
        let r = slab_exit_probability(&sym, &s, SlabMethod::ExactEnvMc, &SlabBudget::default(), &key()).unwrap();
        assert!((r.estimate.estimate - 1.0 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn gamma_fit_exponential_decay() {
        let law = Arc::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap());
        let pts: Vec<(f64, EstimateWithCI)> = [5.0, 10.0, 20.0, 40.0]
            .iter()
            .map(|&l| {
                let s = SlabSpec::new(Direction::axis(1, 0, 1), 1.0, l).unwrap();
                (l, slab_exit_probability(&law, &s, SlabMethod::ExactEnvMc, &SlabBudget::default(), &key()).unwrap().estimate)
            })
            .collect();
        let f = fit_t_gamma(&pts).unwrap();
        assert!((f.gamma_hat - 1.0).abs() < 0.1, "{f:?}");
        assert!(!f.rejected);
        let flat: Vec<(f64, EstimateWithCI)> = [5.0, 10.0, 20.0, 40.0].iter().map(|&l| (l, EstimateWithCI::exact(0.5))).collect();
        assert!(fit_t_gamma(&flat).unwrap().rejected);
    }

    #[test]
    fn frame_is_orthonormal() {
        let l = Direction::real(vec![1.0, 2.0, 0.5]).unwrap();
        let f = orthogonal_frame(&l);
        let u = l.unit();
        assert_eq!(f.len(), 2);
        for a in &f {
            assert!(a.iter().zip(&u).map(|(x, y)| x * y).sum::<f64>().abs() < 1e-12);
            assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(cone_directions(&Direction::axis(2, 0, 1), 0.1).unwrap().len(), 3);
    }

    #[test]
    fn effective_criterion_one_dim_hand_arithmetic() {
        let law = Arc::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap());
        let spec = EcBoxSpec::new(Direction::axis(1, 0, 1), 10.0, 3.0).unwrap();
        let r = effective_criterion(&law, &spec, &[0.0, 1.0], 4, &EcConstants::default(), &key()).unwrap();
        let rho: f64 = 1.0 / 3.0;
        let front = (1.0 - rho.powi(8)) / (1.0 - rho.powi(20));
        let hand = 10.0 * (1.0 - front) / front;
        assert!((r.rows[1].value - hand).abs() < 1e-10 * hand);
        assert!((r.rows[0].value - r.prefactor).abs() < 1e-15);
        assert!(r.overrides.iter().any(|o| o.name == "c_2"));
    }

    #[test]
    fn decomposition_partition() {
        let k1 = TransitionKernel::new(crate::lattice::JumpSet::new(2, false).unwrap(), &[0.4, 0.1, 0.25, 0.25]).unwrap();
        let k2 = TransitionKernel::new(crate::lattice::JumpSet::new(2, false).unwrap(), &[0.1, 0.4, 0.25, 0.25]).unwrap();
        let law = Arc::new(EnvironmentLaw::mixture(&[(k1, 0.7), (k2, 0.3)]).unwrap());
        let r = decomposition_diagnostic(&law, 16.0, Some(6.0), 12, &key()).unwrap();
        assert!(r.partition_error <= 1e-12 * r.mean_rho_a.max(1.0));
        assert!(r.e_n_vanishes && r.min_front > r.ellipticity_floor);
        assert_eq!(r.params.n + 1, r.e.len());
        assert!(r.params.betas[r.params.n - 1] > 1.0);
    }

    #[test]
    fn p_m_threshold_and_resource_guard() {
        let spec = PBoxSpec::new(30, Direction::axis(2, 0, 1)).unwrap();
        assert!(matches!(spec.domain(), Err(RwreError::Resource(_))));
        assert!(((30f64).powf(-2.0) - 1.0 / 900.0).abs() < 1e-18);
        assert!(PBoxSpec::new(31, Direction::axis(2, 0, 1)).is_err());
    }
}
