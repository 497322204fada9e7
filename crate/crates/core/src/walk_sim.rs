//! Quenched walk simulation, stopping rules, the environment seen from the
//! particle and Cesàro means along the walk.

use rand::Rng;
use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::env_model::{Environment, EnvironmentLaw, LawVariant, TransitionKernel};
use crate::error::{Result, RwreError};
use crate::lattice::{Direction, Site};
use crate::rng::{StreamKey, WalkRng};
use crate::stats::{CensoredBand, EstimateWithCI, Moments, DEFAULT_LEVEL};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WalkState {
    pub position: Site,
    pub time: u64,
}

impl WalkState {
    pub fn at(position: Site) -> Self {
        WalkState { position, time: 0 }
    }
}

/// One step of the quenched walk, querying the environment directly.
pub fn step<R: Rng + ?Sized>(env: &Environment, state: WalkState, rng: &mut R) -> WalkState {
    let k = env.kernel_at(state.position);
    let m = k.select(rng.random::<f64>());
    WalkState { position: state.position + k.jumps.vector(m), time: state.time + 1 }
}

#[derive(Clone, Debug, Default)]
struct LineCache {
    pos: Vec<Option<TransitionKernel>>,
    neg: Vec<Option<TransitionKernel>>,
}

impl LineCache {
    #[inline]
    fn slot(&mut self, x: i64) -> &mut Option<TransitionKernel> {
        let (v, i) = if x >= 0 { (&mut self.pos, x as usize) } else { (&mut self.neg, (-x - 1) as usize) };
        if i >= v.len() {
            v.resize((i + 1).max(2 * v.len()), None);
        }
        &mut v[i]
    }
}

/// A walker bound to one environment, caching the kernels of visited sites.
/// One-dimensional environments use a dense cache, higher dimensions a hash
/// map.
#[derive(Clone, Debug)]
pub struct Walker<'e> {
    env: &'e Environment,
    fixed: Option<TransitionKernel>,
    line: LineCache,
    map: FxHashMap<Site, TransitionKernel>,
}

impl<'e> Walker<'e> {
    pub fn new(env: &'e Environment) -> Self {
        let fixed = match &env.law.variant {
            LawVariant::Homogeneous(_) => Some(env.kernel_at(Site::ORIGIN)),
            _ => None,
        };
        Walker { env, fixed, line: LineCache::default(), map: FxHashMap::default() }
    }

    pub fn env(&self) -> &'e Environment {
        self.env
    }

    #[inline]
    pub fn kernel(&mut self, x: Site) -> TransitionKernel {
        if let Some(k) = self.fixed {
            return k;
        }
        if self.env.dim() == 1 {
            let env = self.env;
            *self.line.slot(x.0[0]).get_or_insert_with(|| env.kernel_at(x))
        } else {
            *self.map.entry(x).or_insert_with(|| self.env.kernel_at(x))
        }
    }

    #[inline]
    pub fn step<R: Rng + ?Sized>(&mut self, state: WalkState, rng: &mut R) -> WalkState {
        let k = self.kernel(state.position);
        let m = k.select(rng.random::<f64>());
        WalkState { position: state.position + k.jumps.vector(m), time: state.time + 1 }
    }

    /// Walk `n` steps and return the final state.
    pub fn run<R: Rng + ?Sized>(&mut self, mut state: WalkState, n: u64, rng: &mut R) -> WalkState {
        for _ in 0..n {
            state = self.step(state, rng);
        }
        state
    }

    /// The path `X_0, ..., X_n`.
    pub fn path<R: Rng + ?Sized>(&mut self, start: Site, n: u64, rng: &mut R) -> Vec<Site> {
        let mut out = Vec::with_capacity(n as usize + 1);
        let mut s = WalkState::at(start);
        out.push(start);
        for _ in 0..n {
            s = self.step(s, rng);
            out.push(s.position);
        }
        out
    }
}

/// A stopping rule, checked at times `n >= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StopRule {
    /// First `n >= 1` with `X_n . l > u` (`strict`) or `X_n . l >= u`.
    Level { l: Direction, u: f64, strict: bool },
    /// `D`: first time the height drops below the starting height.
    BelowStart { l: Direction },
    EnterSet(Vec<Site>),
}

impl StopRule {
    /// `H^l_u`.
    pub fn above(l: Direction, u: f64) -> Self {
        StopRule::Level { l, u, strict: true }
    }

    /// Reaching height `u` or more in direction `l`.
    pub fn reach(l: Direction, u: f64) -> Self {
        StopRule::Level { l, u, strict: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingSpec {
    pub rules: Vec<StopRule>,
    pub horizon: u64,
    /// Direction for the running maximum height (defaults to the first rule
    /// that has one).
    pub track: Option<Direction>,
    pub record_trajectory: bool,
    pub record_visits: bool,
}

impl StoppingSpec {
    pub fn new(rules: Vec<StopRule>, horizon: u64) -> Self {
        StoppingSpec { rules, horizon, track: None, record_trajectory: false, record_visits: false }
    }

    pub fn with_trajectory(mut self) -> Self {
        self.record_trajectory = true;
        self
    }

    pub fn with_visits(mut self) -> Self {
        self.record_visits = true;
        self
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Triggered {
    Rule(usize),
    HorizonCensored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub triggered: Triggered,
    pub final_state: WalkState,
    pub max_height: Option<f64>,
    pub visits: Option<Vec<(Site, u64)>>,
    pub trajectory: Option<Vec<Site>>,
}

enum Compiled {
    Level { l: Direction, u: f64, strict: bool },
    Below { l: Direction, h0: f64 },
    Set(FxHashSet<Site>),
}

pub fn run_until<R: Rng + ?Sized>(walker: &mut Walker<'_>, start: Site, spec: &StoppingSpec, rng: &mut R) -> RunOutcome {
    let rules: Vec<Compiled> = spec
        .rules
        .iter()
        .map(|r| match r {
            StopRule::Level { l, u, strict } => Compiled::Level { l: l.clone(), u: *u, strict: *strict },
            StopRule::BelowStart { l } => Compiled::Below { l: l.clone(), h0: l.height(start) },
            StopRule::EnterSet(s) => Compiled::Set(s.iter().copied().collect()),
        })
        .collect();
    let track = spec.track.clone().or_else(|| {
        spec.rules.iter().find_map(|r| match r {
            StopRule::Level { l, .. } | StopRule::BelowStart { l } => Some(l.clone()),
            StopRule::EnterSet(_) => None,
        })
    });
    let mut max_h = track.as_ref().map(|l| l.height(start));
    let mut visits: Option<FxHashMap<Site, u64>> = spec.record_visits.then(FxHashMap::default);
    let mut traj = spec.record_trajectory.then(|| vec![start]);
    if let Some(v) = visits.as_mut() {
        v.insert(start, 1);
    }
    let mut s = WalkState::at(start);
    let mut triggered = Triggered::HorizonCensored;
    while s.time < spec.horizon {
        s = walker.step(s, rng);
        if let (Some(l), Some(m)) = (&track, max_h.as_mut()) {
            *m = m.max(l.height(s.position));
        }
        if let Some(v) = visits.as_mut() {
            *v.entry(s.position).or_insert(0) += 1;
        }
        if let Some(t) = traj.as_mut() {
            t.push(s.position);
        }
        let hit = rules.iter().position(|r| match r {
            Compiled::Level { l, u, strict } => {
                let h = l.height(s.position);
                if *strict {
                    h > *u
                } else {
                    h >= *u
                }
            }
            Compiled::Below { l, h0 } => l.height(s.position) < *h0,
            Compiled::Set(set) => set.contains(&s.position),
        });
        if let Some(i) = hit {
            triggered = Triggered::Rule(i);
            break;
        }
    }
    let visits = visits.map(|v| {
        let mut v: Vec<(Site, u64)> = v.into_iter().collect();
        v.sort();
        v
    });
    RunOutcome { triggered, final_state: s, max_height: max_h, visits, trajectory: traj }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DOutcome {
    Finite(u64),
    /// Still at or above the starting height at the horizon; carries the
    /// final height gain.
    CensoredAlive { gain: i64 },
}

/// `D = inf{n >= 0 : X_n . l < X_0 . l}` up to a horizon.
pub fn first_hit_d<R: Rng + ?Sized>(walker: &mut Walker<'_>, start: Site, l: &Direction, horizon: u64, rng: &mut R) -> DOutcome {
    let h0 = l.height(start);
    let mut s = WalkState::at(start);
    while s.time < horizon {
        s = walker.step(s, rng);
        if l.height(s.position) < h0 {
            return DOutcome::Finite(s.time);
        }
    }
    DOutcome::CensoredAlive { gain: (l.height(s.position) - h0).floor() as i64 }
}

/// Run `n` independent replicas in parallel; results come back in replica
/// order, so sequential reductions over them are deterministic.
pub fn par_replicas<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Environment for replica `r`: the seed comes from the `env` child stream.
pub fn replica_env(law: &Arc<EnvironmentLaw>, key: &StreamKey, r: u64) -> Environment {
    Environment::from_arc(law.clone(), key.child("env", 0).seed(r))
}

/// Walk generator for replica `r`.
pub fn replica_rng(key: &StreamKey, r: u64) -> WalkRng {
    key.child("walk", 0).rng(r)
}

/// Annealed estimate of `P_0[D = inf]` as a censored band.
///
/// Walks with `D` finite are failures. Walks alive at the horizon count as
/// confirmed escapes when their height gain is at least `sqrt(horizon)`
/// and as censored otherwise.
pub fn escape_probability(
    law: &Arc<EnvironmentLaw>,
    l: &Direction,
    horizon: u64,
    replicas: u64,
    hold: Option<f64>,
    key: &StreamKey,
) -> Result<CensoredBand> {
    if replicas == 0 {
        return Err(RwreError::config("escape probability needs replicas >= 1"));
    }
    let margin = (horizon as f64).sqrt().ceil() as i64;
    let outcomes = par_replicas(replicas, |r| {
        let mut env = replica_env(law, key, r);
        env.hold = hold;
        let mut w = Walker::new(&env);
        first_hit_d(&mut w, Site::ORIGIN, l, horizon, &mut replica_rng(key, r))
    });
    let (mut confirmed, mut censored) = (0u64, 0u64);
    for o in outcomes {
        if let DOutcome::CensoredAlive { gain } = o {
            if gain >= margin {
                confirmed += 1;
            } else {
                censored += 1;
            }
        }
    }
    Ok(CensoredBand::new(confirmed, censored, replicas, DEFAULT_LEVEL))
}

/// Kernels of an environment on the box `|x - center|_inf <= radius`,
/// addressed relative to `center`.
#[derive(Clone, Debug)]
pub struct EnvWindow {
    pub dim: usize,
    pub radius: i64,
    kernels: FxHashMap<Site, TransitionKernel>,
}

impl EnvWindow {
    pub fn from_env(env: &Environment, center: Site, radius: i64) -> Self {
        let dim = env.dim();
        let mut kernels = FxHashMap::default();
        for y in box_sites(dim, radius) {
            kernels.insert(y, env.kernel_at(center + y));
        }
        EnvWindow { dim, radius, kernels }
    }

    /// Window from explicit kernels; sites outside the map are treated as
    /// missing.
    pub fn from_kernels(dim: usize, radius: i64, kernels: impl IntoIterator<Item = (Site, TransitionKernel)>) -> Self {
        EnvWindow { dim, radius, kernels: kernels.into_iter().collect() }
    }

    pub fn get(&self, y: Site) -> Result<TransitionKernel> {
        self.kernels
            .get(&y)
            .copied()
            .ok_or_else(|| RwreError::Contract(format!("site {y:?} outside the environment window")))
    }
}

/// All sites of `{-r..r}^dim`.
pub fn box_sites(dim: usize, r: i64) -> Vec<Site> {
    let mut out = vec![Site::ORIGIN];
    for axis in 0..dim {
        let mut next = Vec::with_capacity(out.len() * (2 * r as usize + 1));
        for s in &out {
            for v in -r..=r {
                let mut t = *s;
                t.0[axis] = v;
                next.push(t);
            }
        }
        out = next;
    }
    out
}

type KernelView<'a> = &'a dyn Fn(Site) -> TransitionKernel;

/// A function of the environment that only looks at kernels within
/// l-infinity distance `radius` of the origin.
#[derive(Clone)]
pub struct LocalFunctional {
    pub radius: i64,
    f: Arc<dyn Fn(KernelView<'_>) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for LocalFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LocalFunctional(radius = {})", self.radius)
    }
}

impl LocalFunctional {
    pub fn new(radius: i64, f: impl Fn(KernelView<'_>) -> f64 + Send + Sync + 'static) -> Self {
        LocalFunctional { radius, f: Arc::new(f) }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(0, move |_| c)
    }

    /// `omega(site, e_move)`.
    pub fn kernel_entry(site: Site, mv: usize) -> Self {
        Self::new(site.linf(), move |w| w(site).prob(mv))
    }

    /// `f(t_x omega)` in the environment `env`.
    pub fn eval_at(&self, env: &Environment, x: Site) -> f64 {
        (self.f)(&|y| env.kernel_at(x + y))
    }

    /// `f(t_shift omega)` using only the kernels of a window.
    pub fn eval_window(&self, w: &EnvWindow, shift: Site) -> Result<f64> {
        if shift.linf() + self.radius > w.radius {
            return Err(RwreError::Contract(format!(
                "window radius {} cannot hold a radius-{} functional shifted by {:?}",
                w.radius, self.radius, shift
            )));
        }
        Ok((self.f)(&|y| w.get(shift + y).expect("checked radius")))
    }
}

/// `Rf(omega) = sum_e omega(0, e) f(t_e omega)` on a window.
pub fn apply_r(window: &EnvWindow, f: &LocalFunctional) -> Result<f64> {
    if window.radius < f.radius + 1 {
        return Err(RwreError::Contract(format!(
            "apply_R needs window radius >= {}, got {}",
            f.radius + 1,
            window.radius
        )));
    }
    let k = window.get(Site::ORIGIN)?;
    let mut acc = 0.0;
    for e in 0..k.jumps.len() {
        let p = k.prob(e);
        if p != 0.0 {
            acc += p * f.eval_window(window, k.jumps.vector(e))?;
        }
    }
    Ok(acc)
}

/// Monte Carlo of `(1/(n+1)) sum_{i<=n} E[f(omega_bar_i)]`, the annealed
/// Cesàro mean of `f` along the environment seen from the particle, one
/// environment and one walk per replica.
pub fn cesaro_mean(
    law: &Arc<EnvironmentLaw>,
    f: &LocalFunctional,
    n: u64,
    replicas: u64,
    key: &StreamKey,
) -> Result<EstimateWithCI> {
    if replicas < 2 {
        return Err(RwreError::config("cesaro mean needs replicas >= 2"));
    }
    let vals = par_replicas(replicas, |r| {
        let env = replica_env(law, key, r);
        let mut w = Walker::new(&env);
        let mut rng = replica_rng(key, r);
        let mut s = WalkState::at(Site::ORIGIN);
        let mut acc = f.eval_at(&env, s.position);
        for _ in 0..n {
            s = w.step(s, &mut rng);
            acc += f.eval_at(&env, s.position);
        }
        acc / (n + 1) as f64
    });
    let m = Moments::from_slice(&vals);
    let mut est = m.estimate(DEFAULT_LEVEL).with_seed(key.master_seed, "cesaro");
    if m.variance() == 0.0 {
        est.lo = est.estimate;
        est.hi = est.estimate;
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::EnvironmentLaw;

    fn key() -> StreamKey {
        StreamKey::new(11, "walk_sim_test", "t")
    }

    #[test]
    fn homogeneous_increment_mean() {
        let env = Environment::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap(), 1);
        let mut w = Walker::new(&env);
        let s = w.run(WalkState::default(), 100_000, &mut key().rng(0));
        assert_eq!(s.time, 100_000);
        assert!((s.position.0[0] as f64 / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn holding_fraction() {
        let base = Environment::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap(), 1);
        let env = base.with_holding(Some(1.0 / 3.0)).unwrap();
        let mut w = Walker::new(&env);
        let mut rng = key().rng(1);
        let n = 60_000;
        let mut s = WalkState::default();
        let mut holds = 0u64;
        for _ in 0..n {
            let t = w.step(s, &mut rng);
            if t.position == s.position {
                holds += 1;
            }
            s = t;
        }
        let f = holds as f64 / n as f64;
        let se = (f * (1.0 - f) / n as f64).sqrt();
        assert!((f - 1.0 / 3.0).abs() < 3.0 * se);
    }

    #[test]
    fn gamblers_ruin_first_exit() {
        let env = Environment::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap(), 1);
        let l = Direction::axis(1, 0, 1);
        let spec = StoppingSpec::new(vec![StopRule::reach(l.clone(), 1.0), StopRule::reach(l.negated(), 1.0)], 1000);
        let mut w = Walker::new(&env);
        let mut rng = key().rng(2);
        let n = 20_000;
        let ups = (0..n).filter(|_| run_until(&mut w, Site::ORIGIN, &spec, &mut rng).triggered == Triggered::Rule(0)).count();
        let f = ups as f64 / n as f64;
        assert!((f - 0.75).abs() < 3.0 * (0.75 * 0.25 / n as f64).sqrt());
    }

    #[test]
    fn horizon_censoring() {
        let env = Environment::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap(), 1);
        let spec = StoppingSpec::new(vec![StopRule::reach(Direction::axis(1, 0, 1), 1e6)], 10);
        let out = run_until(&mut Walker::new(&env), Site::ORIGIN, &spec, &mut key().rng(3));
        assert_eq!(out.triggered, Triggered::HorizonCensored);
        assert_eq!(out.final_state.time, 10);
    }

    #[test]
    fn deterministic_right_mover_never_drops() {
        let env = Environment::new(EnvironmentLaw::homogeneous_1d(1.0).unwrap(), 1);
        let d = first_hit_d(&mut Walker::new(&env), Site::ORIGIN, &Direction::axis(1, 0, 1), 1000, &mut key().rng(4));
        assert_eq!(d, DOutcome::CensoredAlive { gain: 1000 });
    }

    #[test]
    fn apply_r_examples() {
        let env = Environment::new(EnvironmentLaw::two_point(0.8, 0.4).unwrap(), 5);
        let w = EnvWindow::from_env(&env, Site::ORIGIN, 1);
        assert!((apply_r(&w, &LocalFunctional::constant(1.0)).unwrap() - 1.0).abs() < 1e-15);
        // f = omega(0, +1): Rf = p(0) p(1) + q(0) p(-1).
        let f = LocalFunctional::kernel_entry(Site::ORIGIN, 0);
        let p = |x: i64| env.kernel_at(Site::new(&[x])).prob(0);
        let hand = p(0) * p(1) + (1.0 - p(0)) * p(-1);
        assert_eq!(apply_r(&w, &f).unwrap(), hand);
        let too_small = EnvWindow::from_env(&env, Site::ORIGIN, 0);
        assert!(matches!(apply_r(&too_small, &f), Err(RwreError::Contract(_))));
    }

    #[test]
    fn parity_and_reachability() {
        let env = Environment::new(EnvironmentLaw::dirichlet(2, &[1.0; 4]).unwrap(), 3);
        let path = Walker::new(&env).path(Site::ORIGIN, 500, &mut key().rng(5));
        for (n, x) in path.iter().enumerate() {
            assert_eq!(x.l1() % 2, (n % 2) as i64);
        }
        let held = env.with_holding(Some(0.2)).unwrap();
        let path = Walker::new(&held).path(Site::ORIGIN, 500, &mut key().rng(5));
        for (n, x) in path.iter().enumerate() {
            assert!(x.l1() <= n as i64);
        }
    }

    #[test]
    fn box_sites_count() {
        assert_eq!(box_sites(2, 2).len(), 25);
        assert_eq!(box_sites(3, 1).len(), 27);
    }
}
