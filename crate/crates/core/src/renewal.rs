//! Renewal (regeneration) times of a walk path in a direction `l`, block
//! statistics built on them, and directional transience probes.
//!
//! A time `n >= 1` is a renewal when `max_{m<n} X_m.l < X_n.l <= inf_{m>=n}
//! X_m.l`. On a finite path the infimum only runs over observed times, so a
//! candidate is *confirmed* once `window` further steps have been seen and
//! is otherwise reported as censored.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::env_model::EnvironmentLaw;
use crate::error::{Result, RwreError};
use crate::lattice::{Direction, Site};
use crate::rng::StreamKey;
use crate::stats::{
    autocorrelation, ks_distance, linear_fit, ratio_ci, stabilization, CensoredBand, EstimateWithCI, Moments,
    Stabilization, DEFAULT_LEVEL,
};
use crate::walk_sim::{escape_probability, par_replicas, replica_env, replica_rng, Walker};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Renewal {
    pub time: u64,
    pub position: Site,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KOutcome {
    /// `K = k`: the first renewal was found at the `k`-th ladder attempt.
    Finite(u64),
    CensoredUnconfirmed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalRecord {
    pub direction: Direction,
    pub renewals: Vec<Renewal>,
    /// Candidates that satisfy the renewal property on the observed path but
    /// lie within `window` of its end.
    pub censored: Vec<u64>,
    pub k_outcome: KOutcome,
    pub horizon: u64,
    pub window: u64,
    /// Per block, `max |X_i - X_start|_1` over the block; block 0 runs from
    /// time 0 to the first renewal.
    pub radii: Vec<i64>,
    /// Height gap required between renewals for real directions (0 for
    /// integer directions).
    pub gap: f64,
}

impl RenewalRecord {
    /// `(tau_i - tau_{i-1}, X_{tau_i} - X_{tau_{i-1}})` for `i >= 2`.
    pub fn increments(&self) -> Vec<(u64, Site)> {
        self.renewals.windows(2).map(|w| (w[1].time - w[0].time, w[1].position - w[0].position)).collect()
    }

    /// The first block `(tau_1, X_{tau_1} - X_0)`, if confirmed.
    pub fn first_block(&self, start: Site) -> Option<(u64, Site)> {
        self.renewals.first().map(|r| (r.time, r.position - start))
    }

    /// Renewal radii of the blocks `i >= 2`.
    pub fn later_radii(&self) -> &[i64] {
        if self.radii.len() > 1 {
            &self.radii[1..]
        } else {
            &[]
        }
    }
}

fn heights(path: &[Site], l: &Direction) -> Vec<f64> {
    path.iter().map(|x| l.height(*x)).collect()
}

/// Default gap for real directions: half the smallest positive height
/// increment of a single step.
pub fn default_gap(l: &Direction) -> f64 {
    match l {
        Direction::Integer(_) => 0.0,
        Direction::Real(v) => {
            let m = v.iter().map(|c| c.abs()).filter(|c| *c > 1e-12).fold(f64::INFINITY, f64::min);
            0.5 * m
        }
    }
}

/// Renewal decomposition of an observed path by a single scan over prefix
/// maxima and suffix minima.
///
/// Real directions use the gap variant (a nonstandard definition): a
/// renewal must also exceed the previous renewal height by at least `gap`.
pub fn decompose(path: &[Site], l: &Direction, window: u64) -> RenewalRecord {
    decompose_with_gap(path, l, window, default_gap(l))
}

pub fn decompose_with_gap(path: &[Site], l: &Direction, window: u64, gap: f64) -> RenewalRecord {
    let h = heights(path, l);
    let t = path.len().saturating_sub(1) as u64;
    let mut suffix_min = vec![f64::INFINITY; h.len() + 1];
    for i in (0..h.len()).rev() {
        suffix_min[i] = suffix_min[i + 1].min(h[i]);
    }
    let mut renewals = Vec::new();
    let mut censored = Vec::new();
    let mut prefix_max = h.first().copied().unwrap_or(0.0);
    let mut last_level = f64::NEG_INFINITY;
    for n in 1..h.len() {
        if prefix_max < h[n] && h[n] <= suffix_min[n] && h[n] >= last_level + gap {
            if n as u64 + window <= t {
                renewals.push(Renewal { time: n as u64, position: path[n] });
                last_level = h[n];
            } else {
                censored.push(n as u64);
            }
        }
        prefix_max = prefix_max.max(h[n]);
    }
    let k_outcome = ladder_k(&h, t, window).map_or(KOutcome::CensoredUnconfirmed, KOutcome::Finite);
    let radii = block_radii(path, &renewals);
    RenewalRecord { direction: l.clone(), renewals, censored, k_outcome, horizon: t, window, radii, gap }
}

/// `K` from the ladder recursion, when the first renewal is confirmed.
fn ladder_k(h: &[f64], t: u64, window: u64) -> Option<u64> {
    let mut r = h[0];
    let mut k = 0u64;
    let mut from = 1usize;
    loop {
        k += 1;
        let s = (from..h.len()).find(|&n| h[n] > r)?;
        match (s + 1..h.len()).find(|&n| h[n] < h[s]) {
            None => return (s as u64 + window <= t).then_some(k),
            Some(d) => {
                // Heights before `from` are at most `r`.
                r = h[from..=d].iter().copied().fold(r, f64::max);
                from = d + 1;
            }
        }
    }
}

fn block_radii(path: &[Site], renewals: &[Renewal]) -> Vec<i64> {
    let mut out = Vec::with_capacity(renewals.len());
    let mut start = 0usize;
    for r in renewals {
        let end = r.time as usize;
        let base = path[start];
        out.push(path[start..=end].iter().map(|x| (*x - base).l1()).max().unwrap_or(0));
        start = end;
    }
    out
}

/// The same decomposition obtained from the stopping-time recursion
/// `S_k = H^l_{R_{k-1}}`, `D_k = D o theta_{S_k} + S_k`,
/// `R_k = sup_{m <= D_k} X_m.l`, `tau_1 = S_K`, then shifting by `tau_1`.
/// Integer directions only.
pub fn decompose_recursive(path: &[Site], l: &Direction, window: u64) -> Result<RenewalRecord> {
    if matches!(l, Direction::Real(_)) {
        return Err(RwreError::domain("the recursive decomposition is exact only for integer directions"));
    }
    let h = heights(path, l);
    let t = path.len().saturating_sub(1) as u64;
    let mut renewals = Vec::new();
    let mut censored = Vec::new();
    let mut origin = 0usize;
    let mut first_k = None;
    'outer: loop {
        // One application of tau_1 to the path shifted to `origin`.
        let mut r = h[origin];
        let mut from = origin + 1;
        let mut k = 0u64;
        loop {
            k += 1;
            let Some(s) = (from..h.len()).find(|&n| h[n] > r) else { break 'outer };
            match (s + 1..h.len()).find(|&n| h[n] < h[s]) {
                None => {
                    if s as u64 + window <= t {
                        renewals.push(Renewal { time: s as u64, position: path[s] });
                        first_k.get_or_insert(k);
                        origin = s;
                        continue 'outer;
                    }
                    censored.push(s as u64);
                    // Later candidates are censored as well; collect them by
                    // continuing the ladder on the observed path.
                    let mut prev = s;
                    while let Some(n) = (prev + 1..h.len()).find(|&n| h[n] > h[prev]) {
                        if (n + 1..h.len()).all(|m| h[m] >= h[n]) {
                            censored.push(n as u64);
                        }
                        prev = n;
                    }
                    break 'outer;
                }
                Some(d) => {
                    r = h[origin..=d].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    from = d + 1;
                }
            }
        }
    }
    censored.sort_unstable();
    censored.dedup();
    let k_outcome = first_k.map_or(KOutcome::CensoredUnconfirmed, KOutcome::Finite);
    let radii = block_radii(path, &renewals);
    Ok(RenewalRecord { direction: l.clone(), renewals, censored, k_outcome, horizon: t, window, radii, gap: 0.0 })
}

/// Checks the defining property of every confirmed renewal on the path.
pub fn verify_record(path: &[Site], rec: &RenewalRecord) -> bool {
    let h = heights(path, &rec.direction);
    let times: Vec<u64> = rec.renewals.iter().map(|r| r.time).collect();
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return false;
    }
    rec.renewals.iter().all(|r| {
        let n = r.time as usize;
        let before = h[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let after = h[n..].iter().copied().fold(f64::INFINITY, f64::min);
        path[n] == r.position && before < h[n] && h[n] <= after
    })
}

/// Simulate one path per replica (fresh environment each) and decompose it.
pub fn simulate_records(
    law: &Arc<EnvironmentLaw>,
    l: &Direction,
    horizon: u64,
    window: u64,
    replicas: u64,
    key: &StreamKey,
) -> Vec<(RenewalRecord, Site)> {
    par_replicas(replicas, |r| {
        let env = replica_env(law, key, r);
        let path = Walker::new(&env).path(Site::ORIGIN, horizon, &mut replica_rng(key, r));
        let end = *path.last().expect("non-empty path");
        (decompose(&path, l, window), end)
    })
}

/// Velocity from renewal blocks `i >= 2`, pooled over records:
/// `sum (X_{tau_i} - X_{tau_{i-1}}) / sum (tau_i - tau_{i-1})` per
/// coordinate, with a delta-method interval.
pub fn estimate_velocity(records: &[RenewalRecord], dim: usize) -> Result<Vec<EstimateWithCI>> {
    let inc: Vec<(u64, Site)> = records.iter().flat_map(|r| r.increments()).collect();
    if inc.len() < 30 {
        return Err(RwreError::InsufficientData(format!("{} renewal blocks, need at least 30", inc.len())));
    }
    let den: Vec<f64> = inc.iter().map(|(dt, _)| *dt as f64).collect();
    (0..dim)
        .map(|a| {
            let num: Vec<f64> = inc.iter().map(|(_, dx)| dx.0[a] as f64).collect();
            ratio_ci(&num, &den, DEFAULT_LEVEL)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IidReport {
    pub blocks: usize,
    /// Lags 1..=3.
    pub tau_autocorrelation: Vec<f64>,
    pub height_autocorrelation: Vec<f64>,
    /// `3 / sqrt(blocks)`.
    pub band: f64,
    pub within_band: bool,
    /// Kolmogorov distance between first-block durations and the durations
    /// of blocks `i >= 2`.
    pub ks_first_vs_rest: Option<f64>,
}

/// Lag correlations of `(tau-increment, height-increment)` sequences and a
/// block-1-versus-rest comparison. Correlations are computed within each
/// record and averaged weighting by block count.
pub fn check_iid(increments: &[Vec<(f64, f64)>], first_blocks: &[f64]) -> Result<IidReport> {
    let blocks: usize = increments.iter().map(|v| v.len()).sum();
    if blocks < 100 {
        return Err(RwreError::InsufficientData(format!("{blocks} blocks, need at least 100")));
    }
    let mut tau = vec![0.0; 3];
    let mut hgt = vec![0.0; 3];
    let mut weight = [0.0; 3];
    for v in increments {
        let ts: Vec<f64> = v.iter().map(|x| x.0).collect();
        let hs: Vec<f64> = v.iter().map(|x| x.1).collect();
        for lag in 1..=3 {
            if v.len() > lag + 10 {
                let w = (v.len() - lag) as f64;
                let ct = autocorrelation(&ts, lag);
                let ch = autocorrelation(&hs, lag);
                if ct.is_finite() {
                    tau[lag - 1] += w * ct;
                }
                if ch.is_finite() {
                    hgt[lag - 1] += w * ch;
                }
                weight[lag - 1] += w;
            }
        }
    }
    for lag in 0..3 {
        if weight[lag] > 0.0 {
            tau[lag] /= weight[lag];
            hgt[lag] /= weight[lag];
        }
    }
    let band = 3.0 / (blocks as f64).sqrt();
    let within = tau.iter().chain(hgt.iter()).all(|c| c.abs() <= band);
    let rest: Vec<f64> = increments.iter().flatten().map(|x| x.0).collect();
    let ks = (!first_blocks.is_empty()).then(|| ks_distance(first_blocks, &rest));
    Ok(IidReport {
        blocks,
        tau_autocorrelation: tau,
        height_autocorrelation: hgt,
        band,
        within_band: within,
        ks_first_vs_rest: ks,
    })
}

/// Increments of a record as `(duration, height)` pairs.
pub fn block_pairs(rec: &RenewalRecord) -> Vec<(f64, f64)> {
    rec.increments().iter().map(|(dt, dx)| (*dt as f64, rec.direction.height(*dx))).collect()
}

/// Negative control: height increments over windows of `width` steps
/// starting every `width / 2` steps. Neighboring windows share half their
/// steps, so the lag-1 correlation of the heights is about 1/2. Durations
/// are constant here, so only the height column carries the signal.
pub fn overlapping_control(path: &[Site], l: &Direction, width: usize) -> Vec<(f64, f64)> {
    let h = heights(path, l);
    let stride = (width / 2).max(1);
    (0..)
        .map(|i| i * stride)
        .take_while(|s| s + width < h.len())
        .map(|s| {
            (width as f64, h[s + width] - h[s])
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LemmaReport {
    /// Mean height of blocks `i >= 2` (law of `X_{tau_1}.l` given `D = inf`).
    pub lhs: EstimateWithCI,
    pub p_d_infinite: CensoredBand,
    pub p_transient: CensoredBand,
    /// Per level `i`, the band for `P[H_{i-1} < inf, X_{H_{i-1}}.l = i]`.
    pub level_hit: Vec<(u64, CensoredBand)>,
    /// `1 / (P[D=inf | A_l] * level_hit(i_max))`: point value and interval
    /// from the band endpoints.
    pub rhs: f64,
    pub rhs_lo: f64,
    pub rhs_hi: f64,
    pub consistent: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LemmaBudget {
    pub horizon: u64,
    pub replicas: u64,
    pub i_max: u64,
    pub window: u64,
}

/// Both sides of the renewal expectation identity for an integer direction.
///
/// The level-hit factor is read as `P[H_{i-1} < inf, X_{H_{i-1}}.l = i]`:
/// the first passage above level `i - 1` lands exactly on level `i`.
pub fn lemma_expectation_identity(
    law: &Arc<EnvironmentLaw>,
    l: &Direction,
    budget: &LemmaBudget,
    key: &StreamKey,
) -> Result<LemmaReport> {
    if !matches!(l, Direction::Integer(_)) {
        return Err(RwreError::domain("the expectation identity needs an integer direction"));
    }
    let probe = transience_probe(law, l, budget.horizon, budget.replicas.min(2000), &key.child("probe", 0))?;
    if probe.upper < 0.5 {
        return Err(RwreError::domain(format!(
            "transience probe failed: P[A_l] band [{:.3}, {:.3}]",
            probe.lower, probe.upper
        )));
    }
    let recs = simulate_records(law, l, budget.horizon, budget.window, budget.replicas, &key.child("lhs", 0));
    let heights: Vec<f64> =
        recs.iter().flat_map(|(r, _)| r.increments().into_iter().map(|(_, dx)| l.height(dx)).collect::<Vec<_>>()).collect();
    if heights.len() < 30 {
        return Err(RwreError::InsufficientData(format!("{} renewal blocks for the left side", heights.len())));
    }
    let lhs = Moments::from_slice(&heights).estimate(DEFAULT_LEVEL).with_seed(key.master_seed, "lemma_lhs");
    let p_d = escape_probability(law, l, budget.horizon, budget.replicas, None, &key.child("escape", 0))?;
    let levels: Vec<u64> = {
        let mut v: Vec<u64> = [1, 2, 4, 8, 16, 32, 64, 128].iter().copied().filter(|&i| i < budget.i_max).collect();
        v.push(budget.i_max);
        v
    };
    let mut level_hit = Vec::new();
    for &i in &levels {
        let kk = key.child("level", i);
        let out = par_replicas(budget.replicas, |r| {
            let env = replica_env(law, &kk, r);
            let mut w = Walker::new(&env);
            let mut rng = replica_rng(&kk, r);
            let mut s = crate::walk_sim::WalkState::default();
            while s.time < budget.horizon {
                s = w.step(s, &mut rng);
                let h = l.height(s.position);
                if h > (i - 1) as f64 {
                    return Some(h == i as f64);
                }
            }
            None
        });
        let hits = out.iter().filter(|o| **o == Some(true)).count() as u64;
        let cens = out.iter().filter(|o| o.is_none()).count() as u64;
        level_hit.push((i, CensoredBand::new(hits, cens, budget.replicas, DEFAULT_LEVEL)));
    }
    let lh = &level_hit.last().expect("at least one level").1;
    // P[D = inf | A_l] = P[D = inf] / P[A_l].
    let cond = |pd: f64, pa: f64| if pa > 0.0 { (pd / pa).min(1.0) } else { f64::NAN };
    let rhs = 1.0 / (cond(p_d.midpoint(), probe.midpoint()) * lh.midpoint());
    let rhs_hi = 1.0 / (cond(p_d.lower_ci, probe.upper_ci) * lh.lower_ci);
    let rhs_lo = 1.0 / (cond(p_d.upper_ci, probe.lower_ci.max(1e-12)) * lh.upper_ci);
    let consistent = lhs.lo <= rhs_hi && rhs_lo <= lhs.hi;
    Ok(LemmaReport { lhs, p_d_infinite: p_d, p_transient: probe, level_hit, rhs, rhs_lo, rhs_hi, consistent })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadiusMoment {
    pub gamma: f64,
    pub c: f64,
    pub estimate: Option<EstimateWithCI>,
    pub stabilization: Option<Stabilization>,
    pub divergent: bool,
}

/// `E[exp(C^{-1} R^gamma)]` over the renewal radii `R` of blocks `i >= 2`
/// (the law of `max_{i <= tau_1} |X_i|_1` given `D = inf`). Without any
/// block the entries are not applicable (`estimate = None`).
pub fn renewal_radius_moments(records: &[RenewalRecord], gammas: &[f64], cs: &[f64]) -> Vec<RadiusMoment> {
    let radii: Vec<f64> = records.iter().flat_map(|r| r.later_radii().iter().map(|x| *x as f64)).collect();
    let mut out = Vec::new();
    for &g in gammas {
        for &c in cs {
            if radii.is_empty() {
                out.push(RadiusMoment { gamma: g, c, estimate: None, stabilization: None, divergent: false });
                continue;
            }
            let xs: Vec<f64> = radii.iter().map(|r| (r.powf(g) / c).exp()).collect();
            let st = stabilization(&xs, crate::env_model::DEFAULT_DIVERGENCE_RATIO);
            let mut est = Moments::from_slice(&xs).estimate(DEFAULT_LEVEL);
            if g == 0.0 {
                est = EstimateWithCI::exact((1.0 / c).exp());
            }
            out.push(RadiusMoment { gamma: g, c, divergent: st.divergent, estimate: Some(est), stabilization: Some(st) });
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailProfile {
    pub u: Vec<f64>,
    pub log_survival: Vec<f64>,
    /// `-(log u)^d` reference.
    pub log_u_pow_d: Vec<f64>,
    /// `-(log u)^alpha` reference.
    pub log_u_pow_alpha: Vec<f64>,
    /// Slope of `log P[tau >= u]` against `u` (negative for geometric tails).
    pub slope_in_u: Option<f64>,
    /// Slope of `log P[tau >= u]` against `(log u)^d`.
    pub slope_in_log_pow_d: Option<f64>,
    pub samples: usize,
}

/// Empirical tail of renewal block durations on a geometric grid of `u`.
pub fn tail_profile(records: &[RenewalRecord], dim: usize, alpha: f64) -> TailProfile {
    let mut taus: Vec<f64> = records.iter().flat_map(|r| r.increments().into_iter().map(|(dt, _)| dt as f64)).collect();
    taus.sort_by(|a, b| a.total_cmp(b));
    let n = taus.len();
    let mut u = vec![1.0];
    let max = taus.last().copied().unwrap_or(1.0);
    while u.last().copied().unwrap_or(1.0) * 1.5 <= max {
        let next = (u.last().copied().unwrap_or(1.0) * 1.5).ceil();
        u.push(next);
    }
    let surv = |x: f64| {
        let below = taus.partition_point(|t| *t < x);
        (n - below) as f64 / n.max(1) as f64
    };
    let log_survival: Vec<f64> = u.iter().map(|x| surv(*x).ln()).collect();
    let log_u_pow_d = u.iter().map(|x| -x.ln().powi(dim as i32)).collect();
    let log_u_pow_alpha = u.iter().map(|x| -x.ln().powf(alpha)).collect();
    let finite: Vec<usize> = (0..u.len()).filter(|&i| log_survival[i].is_finite()).collect();
    let fit = |xs: Vec<f64>| {
        let ys: Vec<f64> = finite.iter().map(|&i| log_survival[i]).collect();
        linear_fit(&xs, &ys).map(|(_, b, _)| b)
    };
    let slope_in_u = fit(finite.iter().map(|&i| u[i]).collect());
    let slope_in_log_pow_d = fit(finite.iter().map(|&i| u[i].ln().powi(dim as i32)).collect());
    TailProfile { u, log_survival, log_u_pow_d, log_u_pow_alpha, slope_in_u, slope_in_log_pow_d, samples: n }
}

/// Band for `P[A_l]`. A path is a confirmed escape when it has a confirmed
/// renewal and stays strictly above its starting height during
/// `[sqrt(T), T]`. It is refuted when it is at or below the starting height
/// at some time in `[sqrt(T), T]`. Other paths are censored.
pub fn transience_probe(
    law: &Arc<EnvironmentLaw>,
    l: &Direction,
    horizon: u64,
    replicas: u64,
    key: &StreamKey,
) -> Result<CensoredBand> {
    if replicas == 0 || horizon < 4 {
        return Err(RwreError::config("transience probe needs replicas >= 1 and horizon >= 4"));
    }
    let t0 = (horizon as f64).sqrt().ceil() as usize;
    let window = (horizon / 10).max(1);
    let out = par_replicas(replicas, |r| {
        let env = replica_env(law, key, r);
        let path = Walker::new(&env).path(Site::ORIGIN, horizon, &mut replica_rng(key, r));
        let low = path[t0..].iter().any(|x| l.height(*x) <= 0.0);
        if low {
            return Some(false);
        }
        let rec = decompose(&path, l, window);
        if rec.renewals.is_empty() {
            None
        } else {
            Some(true)
        }
    });
    let confirmed = out.iter().filter(|o| **o == Some(true)).count() as u64;
    let censored = out.iter().filter(|o| o.is_none()).count() as u64;
    Ok(CensoredBand::new(confirmed, censored, replicas, DEFAULT_LEVEL))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::Environment;

    fn line(xs: &[i64]) -> Vec<Site> {
        xs.iter().map(|x| Site::new(&[*x])).collect()
    }

    #[test]
    fn monotone_path_renews_every_step() {
        let path = line(&(0..=20).collect::<Vec<_>>());
        let rec = decompose(&path, &Direction::axis(1, 0, 1), 0);
        let times: Vec<u64> = rec.renewals.iter().map(|r| r.time).collect();
        assert_eq!(times, (1..=20).collect::<Vec<_>>());
        assert_eq!(rec.k_outcome, KOutcome::Finite(1));
        assert!(verify_record(&path, &rec));
    }

    #[test]
    fn hand_example() {
        // 0 1 0 1 2 1 2 3 4 3 4 5 ... ties at the infimum are allowed.
        let path = line(&[0, 1, 0, 1, 2, 1, 2, 3, 4, 3, 4, 5, 6]);
        let l = Direction::axis(1, 0, 1);
        let rec = decompose(&path, &l, 0);
        let times: Vec<u64> = rec.renewals.iter().map(|r| r.time).collect();
        assert_eq!(times, vec![7, 11, 12]);
        assert_eq!(rec.k_outcome, KOutcome::Finite(3));
        let rr = decompose_recursive(&path, &l, 0).unwrap();
        assert_eq!(rr.renewals, rec.renewals);
        let windowed = decompose(&path, &l, 2);
        assert_eq!(windowed.renewals.len(), 1);
        assert_eq!(windowed.censored, vec![11, 12]);
    }

    #[test]
    fn scan_equals_recursion_on_random_paths() {
        let env = Environment::new(EnvironmentLaw::two_point(0.8, 0.4).unwrap(), 4);
        let l = Direction::axis(1, 0, 1);
        for r in 0..20 {
            let path = Walker::new(&env).path(Site::ORIGIN, 3000, &mut StreamKey::new(1, "renewal", "t").rng(r));
            let a = decompose(&path, &l, 50);
            let b = decompose_recursive(&path, &l, 50).unwrap();
            assert_eq!(a.renewals, b.renewals);
            assert_eq!(a.censored, b.censored);
            assert!(verify_record(&path, &a));
        }
    }

    #[test]
    fn larger_window_never_adds_renewals() {
        let env = Environment::new(EnvironmentLaw::homogeneous_1d(0.6).unwrap(), 4);
        let path = Walker::new(&env).path(Site::ORIGIN, 5000, &mut StreamKey::new(2, "renewal", "w").rng(0));
        let l = Direction::axis(1, 0, 1);
        let mut prev = usize::MAX;
        for w in [0, 10, 100, 1000] {
            let n = decompose(&path, &l, w).renewals.len();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn gap_variant_on_real_direction() {
        let path: Vec<Site> = (0..10).map(|i| Site::new(&[i, i % 2])).collect();
        let l = Direction::real(vec![1.0, 0.2]).unwrap();
        let rec = decompose(&path, &l, 0);
        assert!(rec.gap > 0.0);
        let h: Vec<f64> = rec.renewals.iter().map(|r| l.height(r.position)).collect();
        assert!(h.windows(2).all(|w| w[1] - w[0] >= rec.gap));
    }
}
