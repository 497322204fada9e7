//! Flat `key = value` experiment configs.
//!
//! One entry per line, `#` starts a comment, lists are comma separated.
//! Points in more than one dimension are written with spaces between
//! coordinates (`x_grid = 0 0, 0.2 0`). Every key is checked against the
//! experiment and the chosen law; anything else is rejected with its line.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use crate::env_model::{BalancedWeights, EnvironmentLaw, PhiLaw, TransitionKernel};
use crate::error::{Result, RwreError};
use crate::lattice::{Direction, JumpSet};

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigEntry {
    pub value: String,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub master_seed: u64,
    /// Every key except `experiment`, `seed` and `out`.
    pub params: BTreeMap<String, ConfigEntry>,
    pub out_dir: Option<PathBuf>,
}

/// Keys understood by every experiment.
pub const COMMON_KEYS: &[&str] = &["experiment", "seed", "out", "max_ops"];

/// Keys allowed for each `law = ...` value, besides `law` and `kappa`.
pub const LAW_KEYS: &[(&str, &[&str])] = &[
    ("homogeneous", &["p", "probs"]),
    ("one_dim", &["atoms"]),
    ("two_point", &["p1", "p2"]),
    ("dirichlet", &["dim", "alpha"]),
    ("balanced", &["dim", "weights", "uniform"]),
    ("trap", &["phi_c", "phi_uniform"]),
    ("anisotropic", &["ratios"]),
    ("mixture", &["kernels"]),
];

const ALL_LAW_KEYS: &[&str] =
    &["p", "probs", "atoms", "p1", "p2", "dim", "alpha", "weights", "uniform", "phi_c", "phi_uniform", "ratios", "kernels"];

impl ExperimentConfig {
    /// Parse config text. `experiment` (from a subcommand) fills in or must
    /// agree with the `experiment` key. Keys are validated against
    /// `allowed_keys(experiment)`.
    pub fn parse(text: &str, experiment: Option<&str>) -> Result<Self> {
        let mut raw: BTreeMap<String, ConfigEntry> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(RwreError::config_at(line_no, format!("expected `key = value`, got `{body}`")));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(RwreError::config_at(line_no, format!("malformed key `{k}`")));
            }
            if v.is_empty() {
                return Err(RwreError::config_at(line_no, format!("empty value for `{k}`")));
            }
            if let Some(prev) = raw.get(k) {
                return Err(RwreError::config_at(line_no, format!("duplicate key `{k}` (first set at line {})", prev.line)));
            }
            raw.insert(k.to_string(), ConfigEntry { value: v.to_string(), line: line_no });
        }

        let name = match (raw.remove("experiment"), experiment) {
            (Some(e), Some(x)) if e.value != x => {
                return Err(RwreError::config_at(e.line, format!("config names experiment `{}` but `{x}` was requested", e.value)))
            }
            (Some(e), _) => e.value,
            (None, Some(x)) => x.to_string(),
            (None, None) => return Err(RwreError::config("missing `experiment` key")),
        };
        let allowed = allowed_keys(&name, raw.get("law").map(|e| e.value.as_str()))
            .map_err(|e| match (&e, raw.get("law")) {
                (RwreError::Config { line: None, msg }, Some(l)) if msg.starts_with("unknown law") => {
                    RwreError::config_at(l.line, msg.clone())
                }
                _ => e,
            })?;
        for (k, e) in &raw {
            if !allowed.contains(&k.as_str()) {
                return Err(RwreError::config_at(e.line, format!("unknown key `{k}` for experiment `{name}`")));
            }
        }
        let master_seed = match raw.remove("seed") {
            Some(e) => e.value.parse::<u64>().map_err(|_| RwreError::config_at(e.line, format!("seed must be a u64, got `{}`", e.value)))?,
            None => 0,
        };
        let out_dir = raw.remove("out").map(|e| PathBuf::from(e.value));
        Ok(ExperimentConfig { experiment: name, master_seed, params: raw, out_dir })
    }

    fn entry(&self, key: &str) -> Option<&ConfigEntry> {
        self.params.get(key)
    }

    fn bad(&self, key: &str, what: &str) -> RwreError {
        let e = &self.params[key];
        RwreError::config_at(e.line, format!("`{key}`: expected {what}, got `{}`", e.value))
    }

    pub fn has(&self, key: &str) -> bool {
        self.params.contains_key(key)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.entry(key).map(|e| e.value.as_str()).unwrap_or(default)
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<f64>().ok().filter(|x| x.is_finite()).map(Some).ok_or_else(|| self.bad(key, "a finite number")),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.entry(key) {
            None => Ok(default),
            Some(e) => parse_count(&e.value).ok_or_else(|| self.bad(key, "a non-negative integer")),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.entry(key).map(|e| e.value.as_str()) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(_) => Err(self.bad(key, "true or false")),
        }
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.entry(key) {
            None => Ok(default.to_vec()),
            Some(e) => split_list(&e.value)
                .map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| self.bad(key, "a comma separated list of numbers")),
        }
    }

    pub fn u64_list_or(&self, key: &str, default: &[u64]) -> Result<Vec<u64>> {
        match self.entry(key) {
            None => Ok(default.to_vec()),
            Some(e) => split_list(&e.value)
                .map(parse_count)
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| self.bad(key, "a comma separated list of integers")),
        }
    }

    /// Comma separated points, coordinates separated by spaces.
    pub fn points_or(&self, key: &str, default: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self.entry(key) {
            None => Ok(default.to_vec()),
            Some(e) => split_list(&e.value)
                .map(|p| p.split_whitespace().map(|s| s.parse::<f64>().ok()).collect::<Option<Vec<_>>>())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| self.bad(key, "points such as `0.1 0, 0.2 0`")),
        }
    }

    /// `direction = 1,0` (integer) or `direction = 0.8,0.6` (real); default
    /// `e_1` in dimension `dim`.
    pub fn direction_or_e1(&self, dim: usize) -> Result<Direction> {
        let Some(e) = self.entry("direction") else {
            return Ok(Direction::axis(dim, 0, 1));
        };
        let parts: Vec<&str> = split_list(&e.value).collect();
        if parts.len() != dim {
            return Err(RwreError::config_at(e.line, format!("direction needs {dim} components")));
        }
        if let Some(v) = parts.iter().map(|s| s.parse::<i64>().ok()).collect::<Option<Vec<_>>>() {
            return Direction::integer(v).map_err(|err| RwreError::config_at(e.line, err.to_string()));
        }
        let v = self.f64_list_or("direction", &[])?;
        Direction::real(v).map_err(|err| RwreError::config_at(e.line, err.to_string()))
    }

    /// Raw parameter values, sorted by key.
    pub fn params_map(&self) -> BTreeMap<String, String> {
        self.params.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect()
    }

    pub fn law(&self) -> Result<Arc<EnvironmentLaw>> {
        law_from_config(self).map(Arc::new)
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty())
}

/// Integers, also written as `1e5`.
fn parse_count(s: &str) -> Option<u64> {
    if let Ok(n) = s.parse::<u64>() {
        return Some(n);
    }
    let x = s.parse::<f64>().ok()?;
    (x >= 0.0 && x.fract() == 0.0 && x < 1.8e19).then_some(x as u64)
}

pub fn allowed_keys(experiment: &str, law: Option<&str>) -> Result<Vec<&'static str>> {
    let def = super::experiments::find(experiment)?;
    let mut keys: Vec<&'static str> = COMMON_KEYS.to_vec();
    keys.extend_from_slice(def.keys);
    keys.extend_from_slice(&["law", "kappa"]);
    match law {
        Some(l) => {
            let extra = LAW_KEYS
                .iter()
                .find(|(n, _)| *n == l)
                .map(|(_, k)| *k)
                .ok_or_else(|| RwreError::config(format!("unknown law `{l}`")))?;
            keys.extend_from_slice(extra);
        }
        None => keys.extend_from_slice(ALL_LAW_KEYS),
    }
    Ok(keys)
}

fn atoms(cfg: &ExperimentConfig, key: &str) -> Result<Vec<(f64, f64)>> {
    let Some(e) = cfg.entry(key) else {
        return Err(RwreError::config(format!("law needs `{key}`")));
    };
    split_list(&e.value)
        .map(|a| {
            let (x, w) = a.split_once(':')?;
            Some((x.trim().parse::<f64>().ok()?, w.trim().parse::<f64>().ok()?))
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| cfg.bad(key, "atoms such as `0.3:0.5, 0.9:0.5`"))
}

fn kernel_from_probs(probs: &[f64]) -> Result<TransitionKernel> {
    let n = probs.len();
    let (dim, hold) = match n {
        2 | 4 | 6 => (n / 2, false),
        3 | 5 | 7 => (n / 2, true),
        _ => return Err(RwreError::config(format!("a kernel needs 2d or 2d+1 probabilities, got {n}"))),
    };
    TransitionKernel::new(JumpSet::new(dim, hold)?, probs)
}

/// Build the environment law described by the `law` key and its companions.
pub fn law_from_config(cfg: &ExperimentConfig) -> Result<EnvironmentLaw> {
    let Some(kind) = cfg.entry("law") else {
        return Err(RwreError::config("missing `law` key"));
    };
    let at = |r: Result<EnvironmentLaw>| {
        r.map_err(|e| match e {
            RwreError::Config { line: None, msg } => RwreError::config_at(kind.line, msg),
            other => other,
        })
    };
    let law = match kind.value.as_str() {
        "homogeneous" => {
            if let Some(p) = cfg.f64_opt("p")? {
                at(EnvironmentLaw::homogeneous_1d(p))?
            } else {
                let probs = cfg.f64_list_or("probs", &[])?;
                at(kernel_from_probs(&probs).and_then(EnvironmentLaw::homogeneous))?
            }
        }
        "one_dim" => at(EnvironmentLaw::one_dim_discrete(&atoms(cfg, "atoms")?))?,
        "two_point" => {
            let (Some(a), Some(b)) = (cfg.f64_opt("p1")?, cfg.f64_opt("p2")?) else {
                return Err(RwreError::config_at(kind.line, "two_point law needs `p1` and `p2`"));
            };
            at(EnvironmentLaw::two_point(a, b))?
        }
        "dirichlet" => {
            let dim = cfg.u64_or("dim", 2)? as usize;
            let alpha = cfg.f64_list_or("alpha", &vec![1.0; 2 * dim])?;
            at(EnvironmentLaw::dirichlet(dim, &alpha))?
        }
        "balanced" => {
            let dim = cfg.u64_or("dim", 2)? as usize;
            let w = if cfg.has("uniform") {
                let u = cfg.f64_list_or("uniform", &[])?;
                if u.len() != 2 {
                    return Err(cfg.bad("uniform", "two numbers `lo, hi`"));
                }
                BalancedWeights::UniformNormalized { lo: u[0], hi: u[1] }
            } else {
                BalancedWeights::Fixed(cfg.f64_list_or("weights", &vec![0.5 / dim as f64; dim])?)
            };
            at(EnvironmentLaw::balanced(dim, w))?
        }
        "trap" => {
            let phi = if cfg.has("phi_uniform") {
                let u = cfg.f64_list_or("phi_uniform", &[])?;
                if u.len() != 2 {
                    return Err(cfg.bad("phi_uniform", "two numbers `lo, hi`"));
                }
                PhiLaw::Uniform { lo: u[0], hi: u[1] }
            } else {
                PhiLaw::ScaledSquaredUniform { c: cfg.f64_or("phi_c", 0.2)? }
            };
            at(EnvironmentLaw::trap(phi))?
        }
        "anisotropic" => {
            if cfg.has("ratios") {
                at(EnvironmentLaw::anisotropic(&atoms(cfg, "ratios")?))?
            } else {
                at(EnvironmentLaw::anisotropic_default())?
            }
        }
        "mixture" => {
            let e = cfg.entry("kernels").ok_or_else(|| RwreError::config_at(kind.line, "mixture law needs `kernels`"))?;
            let mut ks = Vec::new();
            for item in split_list(&e.value) {
                let (probs, w) = item.split_once(':').ok_or_else(|| cfg.bad("kernels", "`p1 p2 ... : weight` items"))?;
                let probs: Vec<f64> = probs
                    .split_whitespace()
                    .map(|s| s.parse::<f64>().ok())
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| cfg.bad("kernels", "numeric probabilities"))?;
                let w = w.trim().parse::<f64>().map_err(|_| cfg.bad("kernels", "a numeric weight"))?;
                let k = kernel_from_probs(&probs).map_err(|err| RwreError::config_at(e.line, err.to_string()))?;
                ks.push((k, w));
            }
            at(EnvironmentLaw::mixture(&ks))?
        }
        other => return Err(RwreError::config_at(kind.line, format!("unknown law `{other}`"))),
    };
    Ok(match cfg.f64_opt("kappa")? {
        Some(k) => law.with_kappa(Some(k)),
        None => law,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn typo_is_rejected_with_line() {
        let text = "experiment = velocity1d\nlaw = two_point\np1 = 0.8\np2 = 0.4\nvelcoity = 3\n";
        match ExperimentConfig::parse(text, None) {
            Err(RwreError::Config { line: Some(5), msg }) => assert!(msg.contains("velcoity")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn law_keys_follow_the_law() {
        let text = "experiment = classify1d\nlaw = one_dim\natoms = 0.3:0.5, 0.9:0.5\np1 = 0.2\n";
        assert!(matches!(ExperimentConfig::parse(text, None), Err(RwreError::Config { line: Some(4), .. })));
        let ok = ExperimentConfig::parse("law = one_dim # comment\natoms = 0.3:0.5, 0.9:0.5\nseed = 7\n", Some("classify1d")).unwrap();
        assert_eq!(ok.master_seed, 7);
        let law = ok.law().unwrap();
        assert_eq!(law.dim(), 1);
    }

    #[test]
    fn counts_and_lists() {
        let cfg = ExperimentConfig::parse("law = homogeneous\np = 0.75\nn = 1e5\nreplicas = 200\n", Some("velocity1d")).unwrap();
        assert_eq!(cfg.u64_or("n", 0).unwrap(), 100_000);
        let cfg = ExperimentConfig::parse(
            "law = mixture\nkernels = 0.3 0.2 0.25 0.25 : 0.5, 0.4 0.1 0.25 0.25 : 0.5\n",
            Some("env-report"),
        )
        .unwrap();
        assert_eq!(cfg.law().unwrap().dim(), 2);
        assert!(ExperimentConfig::parse("law = homogeneous\np = 0.75\n", None).is_err());
        assert!(ExperimentConfig::parse("experiment = kks\nlaw = homogeneous\np = 0.75\np = 0.6\n", None).is_err());
    }
}
