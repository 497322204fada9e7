//! The experiment table behind the command line subcommands.
//!
//! Each entry lists its keys, an op estimate used by the budget guard, and a
//! runner producing CSV rows plus a JSON `estimates` value. CSV headers are
//! part of the file format and are listed in the README.

use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use super::config::ExperimentConfig;
use super::{balanced_clt_experiment, edge_trap_identity, lln_cross_experiment, BalancedCltParams, LlnParams};
use crate::ballisticity::{
    atypical_quenched_exit, check_p_m, decomposition_diagnostic, dl_exit_estimate, effective_criterion, fit_t_gamma,
    slab_exit_probability, EcBoxSpec, EcConstants, PBoxSpec, SlabBudget, SlabMethod, SlabSpec,
};
use crate::env_model::{check_e_beta, ellipticity_report, nestling_class, trap_criterion, Environment, EnvironmentLaw, LawVariant};
use crate::error::{Result, RwreError};
use crate::lattice::Site;
use crate::ldp_rate::{legendre_rate, rate_curve, symmetry_check_1d};
use crate::oned::{
    check_b, check_invariance, classify, invariant_density, kks_exponent, potential, sinai_diagnostic, velocity,
    VelocityBudget, VelocityMethod,
};
use crate::renewal::{block_pairs, check_iid, estimate_velocity, simulate_records, tail_profile};
use crate::rng::StreamKey;
use crate::stats::EstimateWithCI;
use crate::walk_sim::LocalFunctional;

/// CSV table plus the JSON `estimates` value of one run.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub estimates: Value,
}

impl ExperimentOutput {
    fn new(header: &[&str], estimates: Value) -> Self {
        ExperimentOutput { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), estimates }
    }

    fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    fn kv(&mut self, k: &str, v: impl ToString) {
        self.rows.push(vec![k.to_string(), v.to_string()]);
    }
}

type OpsFn = fn(&ExperimentConfig, &EnvironmentLaw) -> Result<f64>;
type RunFn = fn(&ExperimentConfig, &Arc<EnvironmentLaw>) -> Result<ExperimentOutput>;

pub struct ExperimentDef {
    pub name: &'static str,
    pub keys: &'static [&'static str],
    pub ops: OpsFn,
    pub run: RunFn,
}

pub fn find(name: &str) -> Result<&'static ExperimentDef> {
    EXPERIMENTS
        .iter()
        .find(|d| d.name == name)
        .ok_or_else(|| RwreError::config(format!("unknown experiment `{name}` (known: {})", experiment_names().join(", "))))
}

pub fn experiment_names() -> Vec<&'static str> {
    EXPERIMENTS.iter().map(|d| d.name).collect()
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn to_json<T: Serialize>(x: &T) -> Result<Value> {
    serde_json::to_value(x).map_err(|e| RwreError::Io(e.to_string()))
}

fn key(cfg: &ExperimentConfig, tag: &str) -> StreamKey {
    StreamKey::new(cfg.master_seed, &cfg.experiment, tag)
}

fn est_cells(e: &EstimateWithCI) -> Vec<String> {
    vec![num(e.estimate), num(e.lo), num(e.hi), num(e.std_error)]
}

pub static EXPERIMENTS: &[ExperimentDef] = &[
    ExperimentDef { name: "env-report", keys: &["samples", "alpha", "betas", "beta"], ops: ops_env_report, run: run_env_report },
    ExperimentDef { name: "classify1d", keys: &[], ops: ops_tiny, run: run_classify1d },
    ExperimentDef {
        name: "velocity1d",
        keys: &["methods", "n", "replicas", "window", "j"],
        ops: ops_velocity1d,
        run: run_velocity1d,
    },
    ExperimentDef {
        name: "invariant-density",
        keys: &["j", "replicas", "move", "sites"],
        ops: ops_invariant_density,
        run: run_invariant_density,
    },
    ExperimentDef { name: "kks", keys: &[], ops: ops_tiny, run: run_kks },
    ExperimentDef { name: "sinai", keys: &["n_grid", "replicas"], ops: ops_sinai, run: run_sinai },
    ExperimentDef { name: "potential", keys: &["lo", "hi"], ops: ops_potential, run: run_potential },
    ExperimentDef {
        name: "renewal",
        keys: &["direction", "horizon", "window", "replicas", "tail_alpha"],
        ops: ops_renewal,
        run: run_renewal,
    },
    ExperimentDef {
        name: "lln",
        keys: &["direction", "n", "replicas", "window", "transience_horizon", "j", "level"],
        ops: ops_lln,
        run: run_lln,
    },
    ExperimentDef {
        name: "slab",
        keys: &["direction", "b", "length", "method", "replicas", "horizon", "max_sites"],
        ops: ops_slab,
        run: run_slab,
    },
    ExperimentDef {
        name: "t-gamma-fit",
        keys: &["direction", "b", "lengths", "method", "replicas", "horizon", "max_sites"],
        ops: ops_slab,
        run: run_t_gamma_fit,
    },
    ExperimentDef {
        name: "p-condition",
        keys: &["direction", "n0", "m", "replicas", "starts", "lateral_b", "lateral_tilde"],
        ops: ops_p_condition,
        run: run_p_condition,
    },
    ExperimentDef {
        name: "effective-criterion",
        keys: &["direction", "length", "lateral", "a_grid", "replicas", "c1", "c2"],
        ops: ops_effective_criterion,
        run: run_effective_criterion,
    },
    ExperimentDef {
        name: "decomposition",
        keys: &["length", "lateral", "replicas"],
        ops: ops_decomposition,
        run: run_decomposition,
    },
    ExperimentDef {
        name: "atypical-exit",
        keys: &["length", "betas", "lateral", "replicas"],
        ops: ops_decomposition,
        run: run_atypical_exit,
    },
    ExperimentDef {
        name: "dl-exit",
        keys: &["direction", "length", "replicas", "horizon"],
        ops: ops_dl_exit,
        run: run_dl_exit,
    },
    ExperimentDef {
        name: "rate-function",
        keys: &["hold", "n_grid", "x_grid", "symmetry"],
        ops: ops_rate_function,
        run: run_rate_function,
    },
    ExperimentDef {
        name: "balanced-clt",
        keys: &["n", "replicas", "torus_n", "kernel_samples"],
        ops: ops_balanced_clt,
        run: run_balanced_clt,
    },
    ExperimentDef { name: "trap", keys: &["samples", "envs", "k_max"], ops: ops_trap, run: run_trap },
];

fn ops_tiny(_: &ExperimentConfig, _: &EnvironmentLaw) -> Result<f64> {
    Ok(1e3)
}

// ---------------------------------------------------------------------------

fn ops_env_report(cfg: &ExperimentConfig, law: &EnvironmentLaw) -> Result<f64> {
    Ok(cfg.u64_or("samples", 10_000)? as f64 * 10.0 * law.dim() as f64)
}

fn run_env_report(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let n = cfg.u64_or("samples", 10_000)? as usize;
    let d = law.dim();
    let ell = ellipticity_report(law, n, cfg.f64_or("alpha", 1.0)?, &key(cfg, "ellipticity"))?;
    let betas = cfg.f64_list_or("betas", &vec![0.5; 2 * d])?;
    let eb = check_e_beta(law, &betas, cfg.f64_or("beta", 1.0)?, n, &key(cfg, "e_beta"))?;
    let nest = nestling_class(law, n, &key(cfg, "nestling"))?;
    let trap = if d >= 2 { Some(trap_criterion(law, n, &key(cfg, "trap"))?) } else { None };
    let mut out = ExperimentOutput::new(
        &["quantity", "value"],
        json!({ "ellipticity": to_json(&ell)?, "e_beta": to_json(&eb)?, "nestling": to_json(&nest)?, "trap": to_json(&trap)?,
                "declared_kappa": law.declared_kappa }),
    );
    out.kv("dim", d);
    out.kv("declared_kappa", law.declared_kappa.map(num).unwrap_or_else(|| "none".into()));
    out.kv("kappa_hat", num(ell.kappa_hat));
    out.kv("inverse_moment", num(ell.inverse_moment.estimate));
    out.kv("inverse_moment_divergent", ell.divergent);
    out.kv("e_beta_moment", num(eb.moment_estimate.estimate));
    if let Some(m) = eb.exact_moment {
        out.kv("e_beta_exact_moment", num(m));
    }
    out.kv("e_beta_divergent", eb.divergent);
    out.kv("e_beta_satisfied", eb.satisfied);
    out.kv("nestling_class", format!("{:?}", nest.class));
    out.kv("nestling_signed_depth", num(nest.signed_depth));
    if let Some(t) = &trap {
        for (m, e) in t.moves.iter().zip(&t.estimates) {
            out.kv(&format!("trap_mean_{m}"), num(e.estimate));
        }
    }
    Ok(out)
}

fn run_classify1d(_cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let c = classify(law)?;
    let b = check_b(law)?;
    let mut out = ExperimentOutput::new(
        &["quantity", "value"],
        json!({ "verdict": format!("{:?}", c.class), "classification": to_json(&c)?, "b": to_json(&b)? }),
    );
    out.kv("verdict", format!("{:?}", c.class));
    out.kv("e_log_rho", num(c.summary.e_log_rho));
    out.kv("e_rho", num(c.summary.e_rho));
    out.kv("e_inv_rho", num(c.summary.e_inv_rho));
    out.kv("var_log_rho", num(c.summary.var_log_rho));
    out.kv("margin", num(c.margin));
    out.kv("undecided", c.undecided);
    out.kv("b_plus", b.b_plus);
    out.kv("b_minus", b.b_minus);
    Ok(out)
}

fn velocity_budget(cfg: &ExperimentConfig) -> Result<VelocityBudget> {
    Ok(VelocityBudget { n: cfg.u64_or("n", 100_000)?, replicas: cfg.u64_or("replicas", 500)?, window: cfg.u64_or("window", 2_000)? })
}

fn ops_velocity1d(cfg: &ExperimentConfig, _: &EnvironmentLaw) -> Result<f64> {
    let b = velocity_budget(cfg)?;
    let methods = cfg.str_or("methods", "series,solomon,renewal,direct");
    let mc = methods.split(',').filter(|m| matches!(m.trim(), "renewal" | "direct")).count();
    Ok((b.n * b.replicas) as f64 * mc as f64)
}

fn run_velocity1d(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let budget = velocity_budget(cfg)?;
    let j = cfg.u64_or("j", 60)? as usize;
    let mut out = ExperimentOutput::new(&["method", "estimate", "lo", "hi", "std_error", "truncation_bound", "note"], Value::Null);
    let mut reports = Vec::new();
    for m in cfg.str_or("methods", "series,solomon,renewal,direct").split(',').map(str::trim) {
        let method = match m {
            "series" => VelocityMethod::SeriesFormula { j },
            "solomon" => VelocityMethod::SolomonOracle,
            "renewal" => VelocityMethod::RenewalMc,
            "direct" => VelocityMethod::DirectMc,
            other => return Err(RwreError::config(format!("unknown velocity method `{other}`"))),
        };
        match velocity(law, method, &budget, &key(cfg, m)) {
            Ok(r) => {
                let mut cells = vec![m.to_string()];
                cells.extend(est_cells(&r.estimate));
                cells.push(r.truncation_bound.map(num).unwrap_or_default());
                cells.push(r.note.clone().unwrap_or_default());
                out.row(cells);
                reports.push(json!({ "method": m, "report": to_json(&r)? }));
            }
            Err(RwreError::Domain(msg)) => {
                out.row(vec![m.into(), "nan".into(), "nan".into(), "nan".into(), "nan".into(), String::new(), msg.clone()]);
                reports.push(json!({ "method": m, "not_applicable": msg }));
            }
            Err(e) => return Err(e),
        }
    }
    out.estimates = Value::Array(reports);
    Ok(out)
}

fn ops_invariant_density(cfg: &ExperimentConfig, _: &EnvironmentLaw) -> Result<f64> {
    Ok(cfg.u64_or("replicas", 100_000)? as f64 * (cfg.u64_or("j", 60)? as f64 + 2.0) * 2.0)
}

fn run_invariant_density(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let j = cfg.u64_or("j", 60)? as usize;
    let replicas = cfg.u64_or("replicas", 100_000)?;
    let mv = cfg.u64_or("move", 0)? as usize;
    if mv > 1 {
        return Err(RwreError::config("`move` is 0 (right) or 1 (left)"));
    }
    let g = LocalFunctional::kernel_entry(Site::ORIGIN, mv);
    let inv = check_invariance(law, &g, 1.0, j, replicas, &key(cfg, "invariance"))?;
    let env = Environment::from_arc(law.clone(), cfg.master_seed);
    let mut dens = Vec::new();
    for x in cfg.f64_list_or("sites", &[0.0, 1.0, 2.0, 5.0, 10.0])? {
        dens.push((x as i64, invariant_density(&env, Site::new(&[x as i64]), j)?));
    }
    let mut out = ExperimentOutput::new(&["quantity", "value"], json!({ "invariance": to_json(&inv)?, "density": to_json(&dens)? }));
    out.kv("discrepancy", num(inv.discrepancy));
    out.kv("std_error", num(inv.std_error));
    out.kv("truncation_bound", num(inv.truncation_bound));
    out.kv("tolerance", num(inv.tolerance));
    out.kv("passes", inv.passes);
    for (x, d) in &dens {
        out.kv(&format!("density_at_{x}"), num(d.normalized));
    }
    Ok(out)
}

fn run_kks(_cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let k = kks_exponent(law)?;
    let mut out = ExperimentOutput::new(&["quantity", "value"], to_json(&k)?);
    out.kv("kappa", num(k.kks_kappa));
    out.kv("bracket_lo", num(k.bracket.0));
    out.kv("bracket_hi", num(k.bracket.1));
    out.kv("residual", num(k.residual));
    out.kv("sub_ballistic", k.sub_ballistic);
    Ok(out)
}

const SINAI_GRID: &[u64] = &[1_000, 10_000, 100_000, 1_000_000];

fn ops_sinai(cfg: &ExperimentConfig, _: &EnvironmentLaw) -> Result<f64> {
    let g = cfg.u64_list_or("n_grid", SINAI_GRID)?;
    Ok(cfg.u64_or("replicas", 500)? as f64 * g.iter().copied().max().unwrap_or(0) as f64)
}

fn run_sinai(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let g = cfg.u64_list_or("n_grid", SINAI_GRID)?;
    let rep = sinai_diagnostic(law, &g, cfg.u64_or("replicas", 500)?, &key(cfg, "sinai"))?;
    let mut out = ExperimentOutput::new(&["n", "median_abs", "normalized"], to_json(&rep)?);
    for r in &rep.rows {
        out.row(vec![r.n.to_string(), num(r.median_abs), r.normalized.map(num).unwrap_or_default()]);
    }
    Ok(out)
}

fn ops_potential(cfg: &ExperimentConfig, _: &EnvironmentLaw) -> Result<f64> {
    Ok((cfg.f64_or("hi", 50.0)? - cfg.f64_or("lo", -50.0)?).abs() + 1.0)
}

fn run_potential(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let (lo, hi) = (cfg.f64_or("lo", -50.0)? as i64, cfg.f64_or("hi", 50.0)? as i64);
    let env = Environment::from_arc(law.clone(), cfg.master_seed);
    let t = potential(&env, lo, hi)?;
    let res = t.harmonic_residual(&env);
    let mut out = ExperimentOutput::new(
        &["x", "f", "log_abs"],
        json!({ "lo": lo, "hi": hi, "overflow": t.overflow, "harmonic_residual": res }),
    );
    for (i, x) in (lo..=hi).enumerate() {
        out.row(vec![x.to_string(), num(t.values[i]), num(t.log_abs[i])]);
    }
    Ok(out)
}

fn ops_renewal(cfg: &ExperimentConfig, _: &EnvironmentLaw) -> Result<f64> {
    Ok(cfg.u64_or("horizon", 100_000)? as f64 * cfg.u64_or("replicas", 200)? as f64 * 2.0)
}

fn run_renewal(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let d = law.dim();
    let l = cfg.direction_or_e1(d)?;
    let recs: Vec<_> = simulate_records(
        law,
        &l,
        cfg.u64_or("horizon", 100_000)?,
        cfg.u64_or("window", 2_000)?,
        cfg.u64_or("replicas", 200)?,
        &key(cfg, "records"),
    )
    .into_iter()
    .map(|(r, _)| r)
    .collect();
    let v = estimate_velocity(&recs, d)?;
    let incs: Vec<Vec<(f64, f64)>> = recs.iter().map(block_pairs).collect();
    let firsts: Vec<f64> = recs.iter().filter_map(|r| r.first_block(Site::ORIGIN).map(|(t, _)| t as f64)).collect();
    let iid = check_iid(&incs, &firsts).ok();
    let tail = tail_profile(&recs, d, cfg.f64_or("tail_alpha", 1.0)?);
    let blocks: usize = incs.iter().map(Vec::len).sum();
    let mut out = ExperimentOutput::new(
        &["coordinate", "estimate", "lo", "hi", "std_error"],
        json!({ "velocity": to_json(&v)?, "blocks": blocks, "iid": to_json(&iid)?, "tail": to_json(&tail)? }),
    );
    for (a, e) in v.iter().enumerate() {
        let mut cells = vec![(a + 1).to_string()];
        cells.extend(est_cells(e));
        out.row(cells);
    }
    Ok(out)
}

fn lln_params(cfg: &ExperimentConfig) -> Result<LlnParams> {
    let n = cfg.u64_or("n", 100_000)?;
    Ok(LlnParams {
        n,
        replicas: cfg.u64_or("replicas", 500)?,
        window: cfg.u64_or("window", 2_000)?,
        transience_horizon: cfg.u64_or("transience_horizon", n)?,
        series_terms: cfg.u64_or("j", 60)? as usize,
        level: cfg.f64_or("level", 0.99)?,
    })
}

fn ops_lln(cfg: &ExperimentConfig, _: &EnvironmentLaw) -> Result<f64> {
    let p = lln_params(cfg)?;
    Ok(p.replicas as f64 * (2.0 * p.n as f64 + p.transience_horizon as f64))
}

fn run_lln(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let l = cfg.direction_or_e1(law.dim())?;
    let rep = lln_cross_experiment(law, &l, &lln_params(cfg)?, &key(cfg, "lln"))?;
    let mut out = ExperimentOutput::new(&["estimator", "estimate", "lo", "hi", "std_error"], to_json(&rep)?);
    for e in &rep.estimators {
        let mut cells = vec![e.name.clone()];
        cells.extend(est_cells(&e.estimate));
        out.row(cells);
    }
    if let Some(s) = &rep.series_formula {
        let mut cells = vec!["series_formula".to_string()];
        cells.extend(est_cells(&s.estimate));
        out.row(cells);
    }
    let t = &rep.transience;
    out.row(vec!["transience_band".into(), num(t.midpoint()), num(t.lower), num(t.upper), String::new()]);
    Ok(out)
}

fn slab_setup(cfg: &ExperimentConfig, law: &EnvironmentLaw) -> Result<(SlabMethod, SlabBudget)> {
    let method = match cfg.str_or("method", "exact") {
        "exact" => SlabMethod::ExactEnvMc,
        "walk" => SlabMethod::WalkMc,
        other => return Err(RwreError::config(format!("slab method is `exact` or `walk`, got `{other}`"))),
    };
    let default_rep = if law.is_deterministic() { 1 } else { 200 };
    let b = SlabBudget {
        replicas: cfg.u64_or("replicas", default_rep)?,
        horizon: cfg.u64_or("horizon", 1_000_000)?,
        max_sites: cfg.u64_or("max_sites", 200_000)? as usize,
    };
    Ok((method, b))
}

fn ops_slab(cfg: &ExperimentConfig, law: &EnvironmentLaw) -> Result<f64> {
    let (method, b) = slab_setup(cfg, law)?;
    let lens = cfg.f64_list_or("lengths", &[cfg.f64_or("length", 10.0)?])?;
    let bb = cfg.f64_or("b", 1.0)?;
    let mut total = 0.0;
    for l in lens {
        let depth = l * (1.0 + bb);
        total += match method {
            SlabMethod::WalkMc => b.replicas as f64 * (b.horizon as f64).min(4.0 * depth * depth),
            SlabMethod::ExactEnvMc => {
                let sites = (b.max_sites as f64).min(depth * (8.0 * l).powi(law.dim() as i32 - 1));
                b.replicas as f64 * sites * sites.powf(0.5)
            }
        };
    }
    Ok(total)
}

fn slab_at(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>, length: f64, idx: u64) -> Result<crate::ballisticity::SlabReport> {
    let (method, budget) = slab_setup(cfg, law)?;
    let spec = SlabSpec::new(cfg.direction_or_e1(law.dim())?, cfg.f64_or("b", 1.0)?, length)?;
    slab_exit_probability(law, &spec, method, &budget, &key(cfg, "slab").child("length", idx))
}

fn slab_row(r: &crate::ballisticity::SlabReport) -> Vec<String> {
    let mut cells = vec![num(r.length), num(r.b)];
    cells.extend(est_cells(&r.estimate));
    cells.push(r.inconclusive.to_string());
    cells
}

const SLAB_HEADER: &[&str] = &["length", "b", "estimate", "lo", "hi", "std_error", "inconclusive"];

fn run_slab(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let r = slab_at(cfg, law, cfg.f64_or("length", 10.0)?, 0)?;
    let mut out = ExperimentOutput::new(SLAB_HEADER, to_json(&r)?);
    out.row(slab_row(&r));
    Ok(out)
}

fn run_t_gamma_fit(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let lens = cfg.f64_list_or("lengths", &[5.0, 10.0, 20.0, 40.0])?;
    let mut reports = Vec::new();
    for (i, l) in lens.iter().enumerate() {
        reports.push(slab_at(cfg, law, *l, i as u64)?);
    }
    let pts: Vec<(f64, EstimateWithCI)> = reports.iter().map(|r| (r.length, r.estimate.clone())).collect();
    let fit = fit_t_gamma(&pts)?;
    let mut out = ExperimentOutput::new(SLAB_HEADER, json!({ "fit": to_json(&fit)?, "slabs": to_json(&reports)? }));
    for r in &reports {
        out.row(slab_row(r));
    }
    Ok(out)
}

fn p_spec(cfg: &ExperimentConfig, law: &EnvironmentLaw) -> Result<PBoxSpec> {
    let n0 = cfg.u64_or("n0", 30)? as i64;
    let spec = PBoxSpec::new(n0, cfg.direction_or_e1(law.dim())?)?;
    match (cfg.f64_opt("lateral_b")?, cfg.f64_opt("lateral_tilde")?) {
        (Some(b), Some(t)) => spec.with_reduced_lateral(b, t),
        (None, None) => Ok(spec),
        _ => Err(RwreError::config("set both `lateral_b` and `lateral_tilde` or neither")),
    }
}

fn ops_p_condition(cfg: &ExperimentConfig, law: &EnvironmentLaw) -> Result<f64> {
    let s = p_spec(cfg, law)?;
    let sites = s.estimated_sites();
    let ms = cfg.f64_list_or("m", &[1.0])?.len() as f64;
    Ok(ms * cfg.u64_or("replicas", 10)? as f64 * sites * sites.sqrt())
}

fn run_p_condition(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let spec = p_spec(cfg, law)?;
    let replicas = cfg.u64_or("replicas", 10)?;
    let starts = cfg.u64_or("starts", 50)? as usize;
    let mut out = ExperimentOutput::new(&["m", "threshold", "sup_estimate", "lo", "hi", "std_error", "holds"], Value::Null);
    let mut reports = Vec::new();
    for m in cfg.f64_list_or("m", &[1.0])? {
        let r = check_p_m(law, &spec, m, replicas, starts, &key(cfg, "p_condition"))?;
        let mut cells = vec![num(m), num(r.threshold)];
        cells.extend(est_cells(&r.sup_estimate));
        cells.push(r.holds.to_string());
        out.row(cells);
        reports.push(r);
    }
    out.estimates = to_json(&reports)?;
    Ok(out)
}

fn ec_spec(cfg: &ExperimentConfig, law: &EnvironmentLaw) -> Result<EcBoxSpec> {
    let l = cfg.f64_or("length", 10.0)?;
    EcBoxSpec::new(cfg.direction_or_e1(law.dim())?, l, cfg.f64_or("lateral", 2.0 * l)?)
}

fn ops_effective_criterion(cfg: &ExperimentConfig, law: &EnvironmentLaw) -> Result<f64> {
    let s = ec_spec(cfg, law)?;
    let sites = (s.length + 4.0) * (2.0 * s.lateral + 1.0).powi(law.dim() as i32 - 1);
    Ok(cfg.u64_or("replicas", 200)? as f64 * sites * sites.sqrt())
}

fn run_effective_criterion(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let spec = ec_spec(cfg, law)?;
    let consts = EcConstants { c1: cfg.f64_or("c1", 1.0)?, c2: cfg.f64_or("c2", 1.0)? };
    let a_grid = cfg.f64_list_or("a_grid", &[0.0, 0.25, 0.5, 0.75, 1.0])?;
    let r = effective_criterion(law, &spec, &a_grid, cfg.u64_or("replicas", 200)?, &consts, &key(cfg, "ec"))?;
    let mut out = ExperimentOutput::new(&["a", "mean_rho_a", "lo", "hi", "std_error", "value"], to_json(&r)?);
    for row in &r.rows {
        let mut cells = vec![num(row.a)];
        cells.extend(est_cells(&row.mean_rho_a));
        cells.push(num(row.value));
        out.row(cells);
    }
    Ok(out)
}

fn ops_decomposition(cfg: &ExperimentConfig, law: &EnvironmentLaw) -> Result<f64> {
    let l = cfg.f64_or("length", 16.0)?;
    let lat = cfg.f64_or("lateral", l.powi(3) - 1.0)?;
    let sites = (l + 4.0) * (2.0 * lat + 1.0).powi(law.dim() as i32 - 1);
    Ok(cfg.u64_or("replicas", 100)? as f64 * sites * sites.sqrt())
}

fn run_decomposition(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let r = decomposition_diagnostic(
        law,
        cfg.f64_or("length", 16.0)?,
        cfg.f64_opt("lateral")?,
        cfg.u64_or("replicas", 100)?,
        &key(cfg, "decomposition"),
    )?;
    let mut out = ExperimentOutput::new(&["j", "e_j", "count"], to_json(&r)?);
    for (j, (e, c)) in r.e.iter().zip(&r.counts).enumerate() {
        out.row(vec![j.to_string(), num(*e), c.to_string()]);
    }
    Ok(out)
}

fn run_atypical_exit(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let reps = atypical_quenched_exit(
        law,
        cfg.f64_or("length", 16.0)?,
        &cfg.f64_list_or("betas", &[0.1, 0.5])?,
        cfg.f64_opt("lateral")?,
        cfg.u64_or("replicas", 100)?,
        &key(cfg, "atypical"),
    )?;
    let mut out =
        ExperimentOutput::new(&["beta", "threshold", "estimate", "lo", "hi", "std_error", "bound", "epsilon"], to_json(&reps)?);
    for r in &reps {
        let mut cells = vec![num(r.beta), num(r.threshold)];
        cells.extend(est_cells(&r.estimate));
        cells.push(num(r.bound));
        cells.push(num(r.epsilon));
        out.row(cells);
    }
    Ok(out)
}

fn ops_dl_exit(cfg: &ExperimentConfig, _: &EnvironmentLaw) -> Result<f64> {
    let l = cfg.f64_or("length", 20.0)?;
    let h = cfg.u64_or("horizon", 1_000_000)? as f64;
    Ok(cfg.u64_or("replicas", 1_000)? as f64 * h.min(400.0 * l * l))
}

fn run_dl_exit(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let r = dl_exit_estimate(
        law,
        &cfg.direction_or_e1(law.dim())?,
        cfg.f64_or("length", 20.0)?,
        cfg.u64_or("replicas", 1_000)?,
        cfg.u64_or("horizon", 1_000_000)?,
        &key(cfg, "dl_exit"),
    )?;
    let mut out = ExperimentOutput::new(&["quantity", "value"], to_json(&r)?);
    out.kv("length", num(r.length));
    out.kv("lateral_bound", num(r.lateral_bound));
    out.kv("estimate", num(r.estimate.estimate));
    out.kv("band_lower", num(r.band.lower));
    out.kv("band_upper", num(r.band.upper));
    out.kv("reference", num(r.reference));
    out.kv("below_reference", r.below_reference);
    Ok(out)
}

fn rate_grids(cfg: &ExperimentConfig, dim: usize) -> Result<(Vec<u64>, Vec<Vec<f64>>)> {
    let n = cfg.u64_list_or("n_grid", &[500, 1_000, 2_000])?;
    let default: Vec<Vec<f64>> = [0.0, 0.2, 0.4]
        .iter()
        .map(|x| {
            let mut p = vec![0.0; dim];
            p[0] = *x;
            p
        })
        .collect();
    let x = cfg.points_or("x_grid", &default)?;
    if x.iter().any(|p| p.len() != dim) {
        return Err(RwreError::config(format!("x_grid points need {dim} coordinates")));
    }
    Ok((n, x))
}

fn ops_rate_function(cfg: &ExperimentConfig, law: &EnvironmentLaw) -> Result<f64> {
    let d = law.dim();
    let (n, _) = rate_grids(cfg, d)?;
    Ok(n.iter().map(|&k| (k as f64).powi(d as i32 + 1) * (2 * d + 1) as f64).sum())
}

fn run_rate_function(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let d = law.dim();
    let env = Environment::from_arc(law.clone(), cfg.master_seed).with_holding(cfg.f64_opt("hold")?)?;
    let (ns, xs) = rate_grids(cfg, d)?;
    let curve = rate_curve(&env, &ns, &xs)?;
    let oracle = match &law.variant {
        LawVariant::Homogeneous(_) => Some(env.kernel_at(Site::ORIGIN)),
        _ => None,
    };
    let legendre: Vec<Option<f64>> = xs.iter().map(|x| oracle.as_ref().map(|k| legendre_rate(k, x))).collect();
    let symmetry = if cfg.bool_or("symmetry", false)? {
        if d != 1 {
            return Err(RwreError::config("`symmetry` applies to 1D laws"));
        }
        let pos: Vec<f64> = xs.iter().map(|p| p[0]).filter(|x| *x > 0.0).collect();
        Some(symmetry_check_1d(&env, &pos, *ns.last().expect("non-empty n grid"))?)
    } else {
        None
    };
    let mut out = ExperimentOutput::new(
        &["x", "n", "i_hat", "infinite", "legendre"],
        json!({ "curve": to_json(&curve)?, "legendre": to_json(&legendre)?, "symmetry": to_json(&symmetry)?, "hold": env.hold }),
    );
    for r in &curve.rows {
        let i = xs.iter().position(|x| *x == r.x).unwrap_or(0);
        let x = r.x.iter().map(|c| num(*c)).collect::<Vec<_>>().join(" ");
        out.row(vec![x, r.n.to_string(), num(r.i_hat), r.infinite.to_string(), legendre[i].map(num).unwrap_or_default()]);
    }
    Ok(out)
}

fn clt_params(cfg: &ExperimentConfig) -> Result<BalancedCltParams> {
    Ok(BalancedCltParams {
        n: cfg.u64_or("n", 10_000)?,
        replicas: cfg.u64_or("replicas", 1_000)?,
        torus_sizes: cfg.u64_list_or("torus_n", &[5, 10])?.into_iter().map(|x| x as i64).collect(),
        kernel_samples: cfg.u64_or("kernel_samples", 1_000)? as usize,
    })
}

fn ops_balanced_clt(cfg: &ExperimentConfig, law: &EnvironmentLaw) -> Result<f64> {
    let p = clt_params(cfg)?;
    let torus: f64 = p.torus_sizes.iter().map(|&n| ((2 * n + 1) as f64).powi(law.dim() as i32 + 2) * 50.0).sum();
    Ok((p.n * p.replicas) as f64 + torus)
}

fn run_balanced_clt(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let r = balanced_clt_experiment(law, &clt_params(cfg)?, &key(cfg, "balanced"))?;
    let mut out = ExperimentOutput::new(&["quantity", "i", "j", "value", "std_error"], to_json(&r)?);
    for (a, e) in r.mean_drift.iter().enumerate() {
        out.row(vec!["mean_drift".into(), (a + 1).to_string(), String::new(), num(e.estimate), num(e.std_error)]);
    }
    for (i, row) in r.covariance.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            out.row(vec!["covariance".into(), (i + 1).to_string(), (j + 1).to_string(), num(e.estimate), num(e.std_error)]);
        }
    }
    out.row(vec!["max_kernel_drift".into(), String::new(), String::new(), num(r.max_kernel_drift), String::new()]);
    for t in &r.torus {
        out.row(vec!["torus_residual".into(), t.n.to_string(), String::new(), num(t.residual), String::new()]);
        out.row(vec!["torus_normalization_error".into(), t.n.to_string(), String::new(), num(t.normalization_error), String::new()]);
    }
    Ok(out)
}

fn ops_trap(cfg: &ExperimentConfig, _: &EnvironmentLaw) -> Result<f64> {
    Ok(cfg.u64_or("samples", 100_000)? as f64 * 4.0 + cfg.u64_or("envs", 20)? as f64 * cfg.u64_or("k_max", 20)? as f64 * 16.0)
}

fn run_trap(cfg: &ExperimentConfig, law: &Arc<EnvironmentLaw>) -> Result<ExperimentOutput> {
    let crit = trap_criterion(law, cfg.u64_or("samples", 100_000)? as usize, &key(cfg, "criterion"))?;
    let edge = edge_trap_identity(law, cfg.u64_or("envs", 20)?, cfg.u64_or("k_max", 20)? as usize, &key(cfg, "edge"))?;
    let mut out = ExperimentOutput::new(&["quantity", "value"], json!({ "criterion": to_json(&crit)?, "edge": to_json(&edge)? }));
    for ((m, e), div) in crit.moves.iter().zip(&crit.estimates).zip(&crit.divergent) {
        out.kv(&format!("mean_returns_{m}"), num(e.estimate));
        out.kv(&format!("divergent_{m}"), div);
    }
    out.kv("max_product", num(crit.max_product));
    out.kv("edge_max_survival_error", num(edge.max_survival_error));
    out.kv("edge_max_partial_sum_error", num(edge.max_partial_sum_error));
    Ok(out)
}
