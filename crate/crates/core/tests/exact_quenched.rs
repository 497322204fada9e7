use std::sync::Arc;

use rwre::env_model::{EnvironmentLaw, Environment, TransitionKernel, BalancedWeights};
use rwre::exact_quenched::*;
use rwre::lattice::Site;

fn homogeneous_field(p: f64, a: i64, b: i64) -> QuenchedField {
    let dom = Arc::new(FiniteDomain::interval(a, b).unwrap());
    let k = TransitionKernel::one_dim(p).unwrap();
    QuenchedField::from_fn(dom, move |_| k.clone())
}

#[test]
fn gamblers_ruin_closed_form() {
    // rho = 1/3, a = b = 2: (1 - rho^2) / (1 - rho^4) = 0.9
    let f = homogeneous_field(0.75, -2, 2);
    let (p, _) = exit_probability(&f, "right", Site::new(&[0])).unwrap();
    assert!((p - 0.9).abs() < 1e-12, "{p}");
    let r = rho_b(&f, "right", Site::new(&[0])).unwrap();
    assert!((r - 1.0 / 9.0).abs() < 1e-12);
}

#[test]
fn exit_pieces_sum_to_one_and_symmetric_split() {
    let f = homogeneous_field(0.5, -7, 7);
    let (l, _) = exit_probability(&f, "left", Site::new(&[0])).unwrap();
    let (r, _) = exit_probability(&f, "right", Site::new(&[0])).unwrap();
    assert!((l - 0.5).abs() < 1e-12 && (l + r - 1.0).abs() < 1e-10);
    assert!((rho_b(&f, "right", Site::new(&[0])).unwrap() - 1.0).abs() < 1e-10);
}

#[test]
fn mean_exit_time_of_simple_walk_is_l_squared() {
    for l in [3i64, 10, 25] {
        let f = homogeneous_field(0.5, -l, l);
        let (t, _) = expected_exit_time(&f, Site::new(&[0])).unwrap();
        assert!((t - (l * l) as f64).abs() < 1e-8 * (l * l) as f64, "L={l}: {t}");
    }
    // one forced step
    let f = homogeneous_field(1.0, -3, 1);
    let (t, _) = expected_exit_time(&f, Site::new(&[0])).unwrap();
    assert!((t - 1.0).abs() < 1e-12);
}

#[test]
fn solvers_agree_on_a_random_2d_box() {
    let law = EnvironmentLaw::dirichlet(2, &[1.0; 4]).unwrap();
    let env = Environment::new(law, 5);
    let sites: Vec<Site> = (-6..=6).flat_map(|x| (-4..=4).map(move |y| Site::new(&[x, y]))).collect();
    let dom = Arc::new(
        FiniteDomain::new(2, sites, |y| if y.0[0] > 6 { "front".into() } else { "rest".into() }).unwrap(),
    );
    let field = QuenchedField::from_env(dom, &env);
    let mut fronts = Vec::new();
    for m in [SolveMethod::DenseLu, SolveMethod::BandedLu, SolveMethod::GaussSeidel] {
        let (front, rest) = front_and_rest(&field, "front", Site::ORIGIN, m).unwrap();
        assert!((front + rest - 1.0).abs() < 1e-9);
        fronts.push(front);
    }
    assert!((fronts[0] - fronts[1]).abs() < 1e-10 && (fronts[0] - fronts[2]).abs() < 1e-8, "{fronts:?}");
}

#[test]
fn nstep_oracles() {
    let sym = Environment::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap(), 0);
    let d = nstep_probabilities(&sym, Site::ORIGIN, 2, false, 1 << 20).unwrap();
    assert!((d.get(Site::ORIGIN) - 0.5).abs() < 1e-15);

    let env = Environment::new(EnvironmentLaw::homogeneous_1d(0.7).unwrap(), 0);
    let d = nstep_probabilities(&env, Site::ORIGIN, 12, false, 1 << 20).unwrap();
    assert!((d.get(Site::new(&[12])) - 0.7f64.powi(12)).abs() < 1e-15);

    let law = EnvironmentLaw::dirichlet(2, &[1.0; 4]).unwrap();
    let env = Environment::new(law, 3).with_holding(Some(0.2)).unwrap();
    let d = nstep_probabilities(&env, Site::ORIGIN, 9, true, 1 << 20).unwrap();
    assert!((d.total() - 1.0).abs() < 1e-12);
    assert!(d.support().iter().all(|(y, p)| y.l1() <= 9 || *p == 0.0));
}

#[test]
fn torus_measure_uniform_for_homogeneous_balanced() {
    let law = EnvironmentLaw::balanced(2, BalancedWeights::Fixed(vec![0.25, 0.25])).unwrap();
    let m = torus_invariant_measure(&Environment::new(law, 0), 4, true, 10_000).unwrap();
    assert!(m.phi.iter().all(|v| (v - 1.0).abs() < 1e-9));
}
