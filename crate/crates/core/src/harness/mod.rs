//! Experiment orchestration: configs, the experiment table, composite
//! experiments and result files.
//!
//! A run writes `<out>/<experiment>.csv` and `<out>/<experiment>.json`. Both
//! are pure functions of the config: replicas draw from
//! `StreamKey(seed, experiment, estimator)` streams, `par_replicas` returns
//! results in replica order and every merge is a left fold in that order.

pub mod config;
pub mod experiments;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env_model::{Environment, EnvironmentLaw};
use crate::error::{Result, RwreError};
use crate::exact_quenched::{edge_trap_survival, torus_invariant_measure};
use crate::lattice::{Direction, Site};
use crate::oned::{self, VelocityBudget, VelocityMethod};
use crate::renewal::{simulate_records, transience_probe};
use crate::rng::StreamKey;
use crate::stats::{ratio_ci, z_value, CensoredBand, EstimateWithCI, Moments, DEFAULT_LEVEL};
use crate::walk_sim::{par_replicas, replica_env, replica_rng, WalkState, Walker};

pub use config::{law_from_config, ExperimentConfig};
pub use experiments::{experiment_names, ExperimentOutput};

/// Default cap on the declared op count of one experiment.
pub const DEFAULT_MAX_OPS: f64 = 1e10;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the `seed` key.
    pub seed: Option<u64>,
    /// Overrides the `out` key; the default is the current directory.
    pub out_dir: Option<PathBuf>,
    /// Run even when the op estimate exceeds `max_ops`.
    pub force: bool,
}

#[derive(Serialize)]
struct Runtime {
    /// Declared op count (walk steps, solver cells, DP cells), not seconds.
    estimated_ops: f64,
    op_cap: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    seed: u64,
    params: BTreeMap<String, String>,
    estimates: &'a serde_json::Value,
    runtime: Runtime,
}

/// Rendered result files.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub csv: String,
    pub json: String,
    pub estimated_ops: f64,
}

fn render_csv(out: &ExperimentOutput) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| RwreError::Io(e.to_string());
    w.write_record(&out.header).map_err(io)?;
    for row in &out.rows {
        if row.len() != out.header.len() {
            return Err(RwreError::Contract(format!("csv row has {} fields, header has {}", row.len(), out.header.len())));
        }
        w.write_record(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| RwreError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| RwreError::Io(e.to_string()))
}

/// Run an experiment in memory: budget check, computation and rendering.
pub fn execute(cfg: &ExperimentConfig, force: bool) -> Result<Artifacts> {
    let def = experiments::find(&cfg.experiment)?;
    let law = cfg.law()?;
    let ops = (def.ops)(cfg, &law)?;
    let cap = cfg.f64_or("max_ops", DEFAULT_MAX_OPS)?;
    if ops > cap && !force {
        return Err(RwreError::Resource(format!(
            "experiment `{}` declares {ops:.3e} ops, above the cap {cap:.3e}; raise max_ops or pass --force",
            cfg.experiment
        )));
    }
    let out = (def.run)(cfg, &law)?;
    let csv = render_csv(&out)?;
    let summary = Summary {
        experiment: &cfg.experiment,
        seed: cfg.master_seed,
        params: cfg.params_map(),
        estimates: &out.estimates,
        runtime: Runtime { estimated_ops: ops, op_cap: cap },
    };
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| RwreError::Io(e.to_string()))?;
    json.push('\n');
    Ok(Artifacts { csv, json, estimated_ops: ops })
}

/// Parse, execute and write `<experiment>.csv` / `<experiment>.json`.
/// Returns the two paths.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(PathBuf, PathBuf)> {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed {
        cfg.master_seed = s;
    }
    let dir = opts.out_dir.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let art = execute(&cfg, opts.force)?;
    std::fs::create_dir_all(&dir)?;
    let csv_path = dir.join(format!("{}.csv", cfg.experiment));
    let json_path = dir.join(format!("{}.json", cfg.experiment));
    std::fs::write(&csv_path, &art.csv)?;
    std::fs::write(&json_path, &art.json)?;
    Ok((csv_path, json_path))
}

pub fn run_file(path: &Path, experiment: Option<&str>, opts: &RunOptions) -> Result<(PathBuf, PathBuf)> {
    let text = std::fs::read_to_string(path)?;
    let cfg = ExperimentConfig::parse(&text, experiment)?;
    run(&cfg, opts)
}

// ---------------------------------------------------------------------------
// Balanced walks

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BalancedCltParams {
    pub n: u64,
    pub replicas: u64,
    pub torus_sizes: Vec<i64>,
    pub kernel_samples: usize,
}

impl Default for BalancedCltParams {
    fn default() -> Self {
        BalancedCltParams { n: 10_000, replicas: 1_000, torus_sizes: vec![5, 10], kernel_samples: 1_000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TorusRow {
    pub n: i64,
    pub residual: f64,
    /// `|sum phi / (2N+1)^d - 1|`.
    pub normalization_error: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BalancedCltReport {
    pub dim: usize,
    pub n: u64,
    pub replicas: u64,
    /// Largest `|sum_e omega(0, e) e|` over sampled kernels.
    pub max_kernel_drift: f64,
    pub drift_exactly_zero: bool,
    /// `X_n / n` per axis.
    pub mean_drift: Vec<EstimateWithCI>,
    /// Second moments `E[Y_i Y_j]` of `Y = X_n / sqrt(n)`. The walk is a
    /// martingale started at 0, so these are covariances.
    pub covariance: Vec<Vec<EstimateWithCI>>,
    /// `C_ij / se(C_ij)` for `i < j`.
    pub off_diagonal_z: Vec<f64>,
    pub per_axis_variance: Vec<EstimateWithCI>,
    pub torus: Vec<TorusRow>,
}

pub fn balanced_clt_experiment(law: &Arc<EnvironmentLaw>, p: &BalancedCltParams, key: &StreamKey) -> Result<BalancedCltReport> {
    if !law.is_balanced() {
        return Err(RwreError::domain("balanced CLT experiment needs a balanced law"));
    }
    if p.n == 0 || p.replicas < 2 {
        return Err(RwreError::config("balanced CLT needs n >= 1 and replicas >= 2"));
    }
    let d = law.dim();
    let mut rng = key.child("kernels", 0).rng(0);
    let max_drift = (0..p.kernel_samples.max(1))
        .map(|_| law.sample(&mut rng).local_drift().iter().fold(0.0f64, |m, x| m.max(x.abs())))
        .fold(0.0f64, f64::max);

    let walk = key.child("walk", 0);
    let ys: Vec<Vec<f64>> = par_replicas(p.replicas, |r| {
        let env = replica_env(law, &walk, r);
        let s = Walker::new(&env).run(WalkState::default(), p.n, &mut replica_rng(&walk, r));
        s.position.coords(d).iter().map(|&x| x as f64).collect()
    });
    let nf = p.n as f64;
    let sq = nf.sqrt();
    let mean_drift = (0..d)
        .map(|a| {
            let xs: Vec<f64> = ys.iter().map(|y| y[a] / nf).collect();
            Moments::from_slice(&xs).estimate(DEFAULT_LEVEL).with_seed(key.master_seed, "balanced_walk")
        })
        .collect();
    let mut cov = Vec::with_capacity(d);
    let mut z = Vec::new();
    for i in 0..d {
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            let prods: Vec<f64> = ys.iter().map(|y| y[i] * y[j] / (sq * sq)).collect();
            let est = Moments::from_slice(&prods).estimate(DEFAULT_LEVEL).with_seed(key.master_seed, "balanced_walk");
            if i < j {
                z.push(if est.std_error > 0.0 { est.estimate / est.std_error } else { 0.0 });
            }
            row.push(est);
        }
        cov.push(row);
    }
    let per_axis_variance = (0..d).map(|a| cov[a][a].clone()).collect();

    let torus_key = key.child("torus", 0);
    let mut torus = Vec::new();
    for &n in &p.torus_sizes {
        let env = Environment::from_arc(law.clone(), torus_key.seed(n as u64));
        let tm = torus_invariant_measure(&env, n, true, 2_000_000)?;
        let cells = ((2 * n + 1) as f64).powi(d as i32);
        let s: f64 = tm.phi.iter().sum();
        torus.push(TorusRow { n, residual: tm.residual_inf_norm, normalization_error: (s / cells - 1.0).abs(), iterations: tm.iterations });
    }
    Ok(BalancedCltReport {
        dim: d,
        n: p.n,
        replicas: p.replicas,
        max_kernel_drift: max_drift,
        drift_exactly_zero: max_drift == 0.0,
        mean_drift,
        covariance: cov,
        off_diagonal_z: z,
        per_axis_variance,
        torus,
    })
}

// ---------------------------------------------------------------------------
// Law of large numbers cross-check

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LlnParams {
    pub n: u64,
    pub replicas: u64,
    pub window: u64,
    /// Horizon for the transience probe.
    pub transience_horizon: u64,
    /// Terms kept in the 1D series formula.
    pub series_terms: usize,
    pub level: f64,
}

impl Default for LlnParams {
    fn default() -> Self {
        LlnParams { n: 100_000, replicas: 500, window: 2_000, transience_horizon: 100_000, series_terms: 60, level: 0.99 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedEstimate {
    pub name: String,
    pub estimate: EstimateWithCI,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LlnReport {
    pub direction: Vec<f64>,
    /// Estimates of `v . l` (unit `l`), in the order direct, renewal,
    /// then the 1D oracle when available.
    pub estimators: Vec<NamedEstimate>,
    /// `agreement[i][j]`: estimators `i` and `j` differ by less than the
    /// joint half width at `level`.
    pub agreement: Vec<Vec<bool>>,
    pub all_agree: bool,
    pub level: f64,
    pub transience: CensoredBand,
    /// 1D series value, reported beside the others but not compared.
    pub series_formula: Option<oned::VelocityReport>,
    pub notes: Vec<String>,
}

pub fn lln_cross_experiment(law: &Arc<EnvironmentLaw>, l: &Direction, p: &LlnParams, key: &StreamKey) -> Result<LlnReport> {
    let d = law.dim();
    if l.dim() != d {
        return Err(RwreError::config("direction dimension does not match the law"));
    }
    let u = l.unit();
    let proj = |x: Site| x.coords(d).iter().zip(&u).map(|(a, b)| *a as f64 * b).sum::<f64>();
    let mut notes = Vec::new();
    let mut est = Vec::new();

    let direct_key = key.child("direct", 0);
    let xs: Vec<f64> = par_replicas(p.replicas, |r| {
        let env = replica_env(law, &direct_key, r);
        let s = Walker::new(&env).run(WalkState::default(), p.n, &mut replica_rng(&direct_key, r));
        proj(s.position) / p.n as f64
    });
    let m = Moments::from_slice(&xs);
    let mut direct = m.estimate(p.level).with_seed(key.master_seed, "lln_direct");
    if m.variance() == 0.0 {
        (direct.lo, direct.hi) = (direct.estimate, direct.estimate);
    }
    est.push(NamedEstimate { name: "direct".into(), estimate: direct });

    let renewal_key = key.child("renewal", 0);
    let recs = simulate_records(law, l, p.n, p.window, p.replicas, &renewal_key);
    let inc: Vec<(u64, Site)> = recs.iter().flat_map(|(r, _)| r.increments()).collect();
    if inc.len() >= 30 {
        let num: Vec<f64> = inc.iter().map(|(_, dx)| proj(*dx)).collect();
        let den: Vec<f64> = inc.iter().map(|(dt, _)| *dt as f64).collect();
        let e = ratio_ci(&num, &den, p.level)?.with_seed(key.master_seed, "lln_renewal");
        est.push(NamedEstimate { name: "renewal".into(), estimate: e });
    } else {
        notes.push(format!("renewal estimator skipped: {} blocks observed, need 30", inc.len()));
    }

    let mut series = None;
    if d == 1 {
        let budget = VelocityBudget::default();
        let sol = oned::velocity(law, VelocityMethod::SolomonOracle, &budget, key)?;
        est.push(NamedEstimate { name: "solomon_oracle".into(), estimate: EstimateWithCI::exact(sol.estimate.estimate * u[0]) });
        match oned::velocity(law, VelocityMethod::SeriesFormula { j: p.series_terms }, &budget, key) {
            Ok(r) => series = Some(r),
            Err(RwreError::Domain(m)) => notes.push(format!("series formula not applicable: {m}")),
            Err(e) => return Err(e),
        }
    }

    let z = z_value(p.level);
    let agreement: Vec<Vec<bool>> =
        est.iter().map(|a| est.iter().map(|b| a.estimate.agrees_with(&b.estimate, z, 0.0)).collect()).collect();
    let all_agree = agreement.iter().flatten().all(|x| *x);
    let transience = transience_probe(law, l, p.transience_horizon, p.replicas, &key.child("transience", 0))?;
    Ok(LlnReport { direction: u, estimators: est, agreement, all_agree, level: p.level, transience, series_formula: series, notes })
}

// ---------------------------------------------------------------------------
// Edge traps

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeTrapRow {
    pub environment: u64,
    pub mv: usize,
    /// `omega(0, e) omega(e, -e)`.
    pub product: f64,
    pub max_survival_error: f64,
    /// `|sum_{k<=K} P[T > 2k] - (1 - q^{K+1}) / (1 - q)|` maximized over `K`,
    /// relative to `1 / (1 - q)`.
    pub max_partial_sum_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeTrapReport {
    pub k_max: usize,
    pub rows: Vec<EdgeTrapRow>,
    pub max_survival_error: f64,
    pub max_partial_sum_error: f64,
}

/// Compare the quenched edge survival `P[T_{0,e} > 2k]` with `q^k`,
/// `q = omega(0, e) omega(e, -e)`, on `envs` sampled environments.
pub fn edge_trap_identity(law: &Arc<EnvironmentLaw>, envs: u64, k_max: usize, key: &StreamKey) -> Result<EdgeTrapReport> {
    let rows: Vec<Result<Vec<EdgeTrapRow>>> = par_replicas(envs, |r| {
        let env = replica_env(law, key, r);
        let j = env.jumps();
        let mut out = Vec::new();
        for mv in (0..j.len()).filter(|m| !j.is_hold(*m)) {
            let e = j.vector(mv);
            let q = env.kernel_at(Site::ORIGIN).prob(mv) * env.kernel_at(e).prob(j.opposite(mv));
            let surv = edge_trap_survival(&env, mv, k_max)?;
            let mut err = 0.0f64;
            let mut psum_err = 0.0f64;
            let (mut acc, mut qk) = (0.0, 1.0);
            for s in &surv {
                err = err.max((s - qk).abs());
                acc += s;
                qk *= q;
                let trunc = (1.0 - qk) / (1.0 - q);
                psum_err = psum_err.max((acc - trunc).abs() * (1.0 - q));
            }
            out.push(EdgeTrapRow { environment: r, mv, product: q, max_survival_error: err, max_partial_sum_error: psum_err });
        }
        Ok(out)
    });
    let mut all = Vec::new();
    for r in rows {
        all.extend(r?);
    }
    let ms = all.iter().map(|r| r.max_survival_error).fold(0.0, f64::max);
    let mp = all.iter().map(|r| r.max_partial_sum_error).fold(0.0, f64::max);
    Ok(EdgeTrapReport { k_max, rows: all, max_survival_error: ms, max_partial_sum_error: mp })
}
