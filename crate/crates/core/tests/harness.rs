//! Every experiment runs end to end on a small config and reruns identically.

use rwre::error::RwreError;
use rwre::harness::{execute, experiment_names, ExperimentConfig};

const MIX2: &str = "law = mixture\nkernels = 0.3 0.2 0.25 0.25 : 0.5, 0.4 0.1 0.25 0.25 : 0.5\n";

fn small_config(name: &str) -> String {
    let body = match name {
        "env-report" => format!("{MIX2}samples = 500\n"),
        "classify1d" => "law = one_dim\natoms = 0.3:0.5, 0.9:0.5\n".into(),
        "velocity1d" => "law = two_point\np1 = 0.8\np2 = 0.4\nn = 3000\nreplicas = 20\nwindow = 200\n".into(),
        "invariant-density" => "law = two_point\np1 = 0.8\np2 = 0.4\nreplicas = 2000\nj = 40\n".into(),
        "kks" => "law = one_dim\natoms = 0.3333333333333333:0.5, 0.8:0.5\n".into(),
        "sinai" => "law = two_point\np1 = 0.3\np2 = 0.7\nn_grid = 100, 1000\nreplicas = 20\n".into(),
        "potential" => "law = two_point\np1 = 0.3\np2 = 0.7\nlo = -10\nhi = 10\n".into(),
        "renewal" => "law = homogeneous\np = 0.75\nhorizon = 5000\nwindow = 200\nreplicas = 20\n".into(),
        "lln" => "law = homogeneous\np = 0.75\nn = 3000\nreplicas = 20\nwindow = 200\n".into(),
        "slab" => "law = homogeneous\np = 0.5\nb = 1\nlength = 10\n".into(),
        "t-gamma-fit" => "law = homogeneous\np = 0.75\nlengths = 5, 10, 20, 40\nb = 1\n".into(),
        "p-condition" => format!("{MIX2}n0 = 10\nm = 1\nreplicas = 2\nstarts = 5\nlateral_b = 20\nlateral_tilde = 8\n"),
        "effective-criterion" => format!("{MIX2}length = 6\nlateral = 6\nreplicas = 10\n"),
        "decomposition" => format!("{MIX2}length = 16\nlateral = 4\nreplicas = 5\n"),
        "atypical-exit" => format!("{MIX2}length = 16\nlateral = 4\nreplicas = 5\nbetas = 0.1\n"),
        "dl-exit" => format!("{MIX2}length = 20\nreplicas = 20\nhorizon = 100000\n"),
        "rate-function" => "law = homogeneous\np = 0.6\nn_grid = 100, 200\nx_grid = 0, 0.2\n".into(),
        "balanced-clt" => "law = balanced\ndim = 2\nn = 500\nreplicas = 50\ntorus_n = 3\n".into(),
        "trap" => "law = trap\nsamples = 1000\nenvs = 3\nk_max = 5\n".into(),
        other => panic!("no small config for {other}"),
    };
    format!("experiment = {name}\nseed = 11\n{body}")
}

#[test]
fn every_experiment_runs_and_reruns_identically() {
    for name in experiment_names() {
        let cfg = ExperimentConfig::parse(&small_config(name), None).unwrap_or_else(|e| panic!("{name}: {e}"));
        let a = execute(&cfg, false).unwrap_or_else(|e| panic!("{name}: {e}"));
        let b = execute(&cfg, false).unwrap();
        assert_eq!(a, b, "{name} is not reproducible");
        let header = a.csv.lines().next().unwrap();
        assert!(!header.is_empty(), "{name}: empty csv");
        let v: serde_json::Value = serde_json::from_str(&a.json).unwrap();
        for k in ["experiment", "seed", "params", "estimates", "runtime"] {
            assert!(v.get(k).is_some(), "{name}: json lacks {k}");
        }
        assert_eq!(v["experiment"], name);
    }
}

#[test]
fn budget_guard_and_force() {
    let text = "experiment = velocity1d\nlaw = homogeneous\np = 0.75\nmethods = solomon, direct\nn = 1000\nreplicas = 10\nmax_ops = 100\n";
    let cfg = ExperimentConfig::parse(text, None).unwrap();
    assert!(matches!(execute(&cfg, false), Err(RwreError::Resource(_))));
    assert!(execute(&cfg, true).is_ok());
}

#[test]
fn balanced_clt_rejects_drifted_law() {
    let cfg = ExperimentConfig::parse(&format!("experiment = balanced-clt\n{MIX2}n = 10\nreplicas = 4\n"), None).unwrap();
    assert!(matches!(execute(&cfg, false), Err(RwreError::Domain(_))));
}

#[test]
fn lln_homogeneous_all_half() {
    let text = "experiment = lln\nlaw = homogeneous\np = 0.75\nn = 20000\nreplicas = 100\nwindow = 500\n";
    let cfg = ExperimentConfig::parse(text, None).unwrap();
    let a = execute(&cfg, false).unwrap();
    let v: serde_json::Value = serde_json::from_str(&a.json).unwrap();
    for e in v["estimates"]["estimators"].as_array().unwrap() {
        let lo = e["estimate"]["lo"].as_f64().unwrap();
        let hi = e["estimate"]["hi"].as_f64().unwrap();
        assert!(lo - 1e-12 <= 0.5 && 0.5 <= hi + 1e-12, "{e}");
    }
    assert_eq!(v["estimates"]["all_agree"], true);
}

#[test]
fn lln_anisotropic_transient_without_speed() {
    // X_n / n decays like 1 / log n here, so the check is on the decay.
    let direct_at = |n: u64| {
        let text = format!(
            "experiment = lln\nlaw = anisotropic\nn = {n}\nreplicas = 100\nwindow = 2000\ntransience_horizon = 100000\n"
        );
        let cfg = ExperimentConfig::parse(&text, None).unwrap();
        let v: serde_json::Value = serde_json::from_str(&execute(&cfg, true).unwrap().json).unwrap();
        let est = v["estimates"].clone();
        assert!(est["transience"]["upper_ci"].as_f64().unwrap() > 0.9, "{}", est["transience"]);
        est["estimators"][0]["estimate"]["estimate"].as_f64().unwrap()
    };
    let (a, b) = (direct_at(10_000), direct_at(100_000));
    assert!(b < a && b < 0.05, "{a} {b}");
}
