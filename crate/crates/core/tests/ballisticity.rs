use std::sync::Arc;

use rwre::ballisticity::*;
use rwre::env_model::{EnvironmentLaw, TransitionKernel};
use rwre::lattice::{Direction, JumpSet};
use rwre::rng::StreamKey;
use rwre::stats::EstimateWithCI;

fn key(tag: &str) -> StreamKey {
    StreamKey::new(99, "ballisticity-it", tag)
}

fn e1(d: usize) -> Direction {
    Direction::axis(d, 0, 1)
}

fn drifted_2d() -> Arc<EnvironmentLaw> {
    let j = JumpSet::new(2, false).unwrap();
    let a = TransitionKernel::new(j, &[0.4, 0.1, 0.25, 0.25]).unwrap();
    let b = TransitionKernel::new(j, &[0.45, 0.15, 0.2, 0.2]).unwrap();
    Arc::new(EnvironmentLaw::mixture(&[(a, 0.5), (b, 0.5)]).unwrap())
}

fn exact_budget() -> SlabBudget {
    SlabBudget { replicas: 1, horizon: 0, max_sites: 10_000 }
}

#[test]
fn symmetric_slab_is_one_over_one_plus_b() {
    let law = Arc::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap());
    for (b, l) in [(1.0, 7.0), (0.5, 10.0), (2.0, 5.0)] {
        let spec = SlabSpec::new(e1(1), b, l).unwrap();
        let r = slab_exit_probability(&law, &spec, SlabMethod::ExactEnvMc, &exact_budget(), &key("s")).unwrap();
        assert!((r.estimate.estimate - 1.0 / (1.0 + b)).abs() < 1e-10, "b={b}: {:?}", r.estimate);
    }
}

#[test]
fn homogeneous_slab_closed_form_and_gamma_fit() {
    let law = Arc::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap());
    let rho: f64 = 1.0 / 3.0;
    let mut pts = Vec::new();
    for l in [5.0, 10.0, 20.0, 40.0] {
        let spec = SlabSpec::new(e1(1), 1.0, l).unwrap();
        let r = slab_exit_probability(&law, &spec, SlabMethod::ExactEnvMc, &exact_budget(), &key("h")).unwrap();
        let want = (rho.powf(l) - rho.powf(2.0 * l)) / (1.0 - rho.powf(2.0 * l));
        assert!(((r.estimate.estimate - want) / want).abs() < 1e-10, "L={l}");
        pts.push((l, r.estimate));
    }
    let fit = fit_t_gamma(&pts).unwrap();
    assert!((fit.gamma_hat - 1.0).abs() < 0.02 && !fit.rejected && fit.decreasing, "{fit:?}");

    let flat: Vec<(f64, EstimateWithCI)> = [5.0, 10.0, 20.0, 40.0].iter().map(|l| (*l, EstimateWithCI::exact(0.5))).collect();
    assert!(fit_t_gamma(&flat).unwrap().rejected);
}

#[test]
fn p_condition_threshold_and_outcomes() {
    let spec = PBoxSpec::new(30, e1(2)).unwrap().with_reduced_lateral(60.0, 20.0).unwrap();
    let r = check_p_m(&drifted_2d(), &spec, 1.0, 2, 6, &key("p")).unwrap();
    assert!((r.threshold - 1.0 / 30.0).abs() < 1e-15);
    assert!(r.holds, "{:?}", r.sup_estimate);
    assert!(!r.overrides.is_empty());

    let spec2 = PBoxSpec::new(30, e1(2)).unwrap().with_reduced_lateral(60.0, 20.0).unwrap();
    let sym = Arc::new(EnvironmentLaw::homogeneous(TransitionKernel::symmetric(2).unwrap()).unwrap());
    let r = check_p_m(&sym, &spec2, 2.0, 1, 6, &key("p")).unwrap();
    assert!((r.threshold - 1.0 / 900.0).abs() < 1e-15);
    assert!(!r.holds);
}

#[test]
fn effective_criterion_hand_arithmetic_1d() {
    let law = Arc::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap());
    let spec = EcBoxSpec::new(e1(1), 10.0, 3.0).unwrap();
    let r = effective_criterion(&law, &spec, &[0.0, 1.0], 4, &EcConstants::default(), &key("ec")).unwrap();
    // box interior -8 < x < 12; front reached at 12 from 0
    let rho: f64 = 1.0 / 3.0;
    let front = (1.0 - rho.powi(8)) / (1.0 - rho.powi(20));
    assert!((r.prefactor - 10.0).abs() < 1e-12);
    assert!((r.rows[0].value - r.prefactor).abs() < 1e-12);
    let want = 10.0 * (1.0 - front) / front;
    assert!(((r.rows[1].value - want) / want).abs() < 1e-10, "{} vs {want}", r.rows[1].value);
}

#[test]
fn effective_criterion_satisfiable_in_2d() {
    let j = JumpSet::new(2, false).unwrap();
    let strong = Arc::new(
        EnvironmentLaw::mixture(&[
            (TransitionKernel::new(j, &[0.8, 0.05, 0.075, 0.075]).unwrap(), 0.5),
            (TransitionKernel::new(j, &[0.75, 0.05, 0.1, 0.1]).unwrap(), 0.5),
        ])
        .unwrap(),
    );
    let spec = EcBoxSpec::new(e1(2), 10.0, 20.0).unwrap();
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let r = effective_criterion(&strong, &spec, &grid, 20, &EcConstants::default(), &key("ec2")).unwrap();
    assert!(r.satisfied, "best {}", r.best_value);
    assert!(r.rows[0].value > 1.0);
}

#[test]
fn decomposition_partitions_and_atypical_monotone() {
    let law = drifted_2d();
    let d = decomposition_diagnostic(&law, 16.0, Some(4.0), 8, &key("d")).unwrap();
    assert!(d.partition_error < 1e-12 && d.e_n_vanishes);
    assert_eq!(d.counts[0], 8);

    let homo = Arc::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap());
    let a = atypical_quenched_exit(&homo, 16.0, &[0.3, 0.6], None, 4, &key("a")).unwrap();
    assert!(a.iter().all(|r| r.estimate.estimate == 0.0));

    let b = atypical_quenched_exit(&law, 16.0, &[0.05, 0.1, 0.5, 0.9], Some(4.0), 20, &key("a")).unwrap();
    assert!(b.windows(2).all(|w| w[1].estimate.estimate <= w[0].estimate.estimate));
}

#[test]
fn dl_exit_small_for_drifted_and_large_for_symmetric() {
    let r = dl_exit_estimate(&drifted_2d(), &e1(2), 20.0, 200, 100_000, &key("dl")).unwrap();
    assert!(r.below_reference, "{:?}", r.estimate);
    let sym = Arc::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap());
    let s = dl_exit_estimate(&sym, &e1(1), 20.0, 400, 1_000_000, &key("dl")).unwrap();
    assert!(s.estimate.estimate > 0.85, "{:?}", s.estimate);
}

#[test]
fn cone_grid_is_unit_and_tilted() {
    let dirs = cone_directions(&e1(3), 0.2).unwrap();
    assert_eq!(dirs.len(), 5);
    assert_eq!(dirs[0], e1(3));
    for d in &dirs[1..] {
        let u = d.unit();
        let norm: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12 && (u[0] - 0.2f64.cos()).abs() < 1e-12);
    }
}
