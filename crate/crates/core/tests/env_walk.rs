use std::sync::Arc;

use rwre::env_model::*;
use rwre::lattice::{Direction, Site};
use rwre::rng::StreamKey;
use rwre::stats::mean_ci;
use rwre::walk_sim::*;

fn key(tag: &str) -> StreamKey {
    StreamKey::new(2024, "integration", tag)
}

#[test]
fn sampled_kernels_are_valid_and_balanced_is_exact() {
    let law = EnvironmentLaw::balanced(3, BalancedWeights::UniformNormalized { lo: 0.1, hi: 0.4 }).unwrap();
    let mut rng = key("b").rng(0);
    for _ in 0..500 {
        let k = law.sample(&mut rng);
        assert!(k.check_simplex());
        for a in 0..3 {
            assert_eq!(k.prob(2 * a), k.prob(2 * a + 1));
        }
        assert!(local_drift(&k).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn dirichlet_mean_kernel_is_uniform() {
    let law = EnvironmentLaw::dirichlet(2, &[1.0; 4]).unwrap();
    let mut rng = key("d").rng(0);
    let ks: Vec<TransitionKernel> = (0..100_000).map(|_| law.sample(&mut rng)).collect();
    for e in 0..4 {
        let xs: Vec<f64> = ks.iter().map(|k| k.prob(e)).collect();
        let m = mean_ci(&xs, 0.95);
        let se = m.half_width() / 1.959964;
        assert!((m.estimate - 0.25).abs() < 3.0 * se, "move {e}: {m:?}");
    }
}

#[test]
fn environment_is_deterministic_and_seed_sensitive() {
    let law = Arc::new(EnvironmentLaw::dirichlet(2, &[0.7, 1.3, 1.0, 1.0]).unwrap());
    let a = Environment::from_arc(law.clone(), 1);
    let b = Environment::from_arc(law.clone(), 2);
    let sites: Vec<Site> = (0..100).map(|i| Site::new(&[i % 10 - 5, i / 10 - 5])).collect();
    let first: Vec<_> = sites.iter().map(|s| a.kernel_at(*s)).collect();
    let again: Vec<_> = par_replicas(sites.len() as u64, |i| a.kernel_at(sites[sites.len() - 1 - i as usize]));
    for (i, k) in again.iter().rev().enumerate() {
        assert_eq!(k, &first[i]);
    }
    assert!(sites.iter().any(|s| a.kernel_at(*s) != b.kernel_at(*s)));
}

#[test]
fn anisotropic_constant_along_e2() {
    let env = Environment::new(EnvironmentLaw::anisotropic_default().unwrap(), 8);
    assert_eq!(env.kernel_at(Site::new(&[3, 7])), env.kernel_at(Site::new(&[3, 0])));
}

#[test]
fn law_level_reports() {
    let h = EnvironmentLaw::homogeneous_1d(0.75).unwrap();
    let r = ellipticity_report(&h, 100, 1.0, &key("e")).unwrap();
    assert_eq!(r.kappa_hat, 0.25);

    let b = EnvironmentLaw::balanced(2, BalancedWeights::UniformNormalized { lo: 0.1, hi: 0.4 }).unwrap();
    assert!(ellipticity_report(&b, 1000, 1.0, &key("e")).unwrap().kappa_hat >= 0.1);

    let dir = EnvironmentLaw::dirichlet(2, &[0.5, 1.0, 1.0, 1.0]).unwrap();
    let eb = check_e_beta(&dir, &[0.6, 0.1, 0.1, 0.1], 0.5, 20_000, &key("eb")).unwrap();
    assert!(eb.divergent && !eb.satisfied && eb.exact_moment == Some(f64::INFINITY));
    let dir = EnvironmentLaw::dirichlet(2, &[2.0, 1.5, 3.0, 1.0]).unwrap();
    let eb = check_e_beta(&dir, &[0.3, 0.2, 0.4, 0.1], 0.5, 100_000, &key("eb")).unwrap();
    let exact = eb.exact_moment.unwrap();
    let se = eb.moment_estimate.half_width() / 1.959964;
    assert!((eb.moment_estimate.estimate - exact).abs() < 3.0 * se, "{exact} vs {:?}", eb.moment_estimate);
    let ell = ellipticity_report(&EnvironmentLaw::dirichlet(1, &[0.8, 3.0]).unwrap(), 100, 1.0, &key("e")).unwrap();
    assert!(ell.divergent);
    let eq = check_e_beta(&dir, &[0.2; 4], 0.5, 100, &key("eb")).unwrap();
    assert!((eq.combinatorial_quantity - 6.0 * 0.2).abs() < 1e-12);

    let sym = EnvironmentLaw::homogeneous_1d(0.5).unwrap();
    let t = trap_criterion(&sym, 10, &key("t")).unwrap();
    assert!(t.estimates.iter().all(|e| (e.estimate - 4.0 / 3.0).abs() < 1e-12));
    let traps = EnvironmentLaw::trap(PhiLaw::ScaledSquaredUniform { c: 0.24 }).unwrap();
    let t = trap_criterion(&traps, 200_000, &key("t")).unwrap();
    assert!(t.divergent[2], "{:?}", t.stabilization);
}

#[test]
fn nestling_examples() {
    let nn = EnvironmentLaw::one_dim_discrete(&[(0.6, 0.5), (0.8, 0.5)]).unwrap();
    assert_eq!(nestling_class(&nn, 100, &key("n")).unwrap().class, NestlingClass::NonNestling);
    let pn = EnvironmentLaw::one_dim_discrete(&[(0.75, 0.5), (0.4, 0.5)]).unwrap();
    assert_eq!(nestling_class(&pn, 100, &key("n")).unwrap().class, NestlingClass::PlainNestling);
    let bal = EnvironmentLaw::balanced(2, BalancedWeights::UniformNormalized { lo: 0.1, hi: 0.4 }).unwrap();
    let r = nestling_class(&bal, 100, &key("n")).unwrap();
    assert!(r.degenerate && r.class == NestlingClass::MarginallyNestling);
}

#[test]
fn mean_increment_and_holding_fraction() {
    let env = Environment::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap(), 0);
    let s = Walker::new(&env).run(WalkState::at(Site::ORIGIN), 100_000, &mut key("w").rng(0));
    assert!((s.position.0[0] as f64 / 1e5 - 0.5).abs() < 0.01);

    let lazy = Environment::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap(), 0).with_holding(Some(1.0 / 3.0)).unwrap();
    let path = Walker::new(&lazy).path(Site::ORIGIN, 60_000, &mut key("h").rng(0));
    let holds = path.windows(2).filter(|w| w[0] == w[1]).count() as f64 / 60_000.0;
    let se = (1.0 / 3.0 * 2.0 / 3.0 / 60_000.0f64).sqrt();
    assert!((holds - 1.0 / 3.0).abs() < 3.0 * se, "{holds}");
}

#[test]
fn gamblers_ruin_by_simulation() {
    let env = Environment::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap(), 0);
    let e1 = Direction::axis(1, 0, 1);
    let spec = StoppingSpec::new(vec![StopRule::reach(e1.clone(), 1.0), StopRule::reach(e1.negated(), 1.0)], 10_000);
    let hits: Vec<f64> = par_replicas(20_000, |r| {
        let o = run_until(&mut Walker::new(&env), Site::ORIGIN, &spec, &mut key("g").rng(r));
        (o.triggered == Triggered::Rule(0)) as u8 as f64
    });
    let m = mean_ci(&hits, 0.99);
    assert!(m.contains(0.75), "{m:?}");

    let far = StoppingSpec::new(vec![StopRule::above(e1.clone(), 1e6)], 10);
    let o = run_until(&mut Walker::new(&env), Site::ORIGIN, &far, &mut key("c").rng(0));
    assert_eq!(o.triggered, Triggered::HorizonCensored);
}

#[test]
fn escape_probabilities() {
    let e1 = Direction::axis(1, 0, 1);
    let law = Arc::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap());
    let band = escape_probability(&law, &e1, 20_000, 4000, None, &key("esc")).unwrap();
    assert!(band.lower_ci <= 2.0 / 3.0 && 2.0 / 3.0 <= band.upper_ci, "{band:?}");

    let right = Environment::new(EnvironmentLaw::homogeneous_1d(1.0).unwrap(), 0);
    for r in 0..10 {
        let d = first_hit_d(&mut Walker::new(&right), Site::ORIGIN, &e1, 500, &mut key("d").rng(r));
        assert_eq!(d, DOutcome::CensoredAlive { gain: 500 });
    }
}

#[test]
fn transition_operator_on_windows() {
    let env = Environment::new(EnvironmentLaw::two_point(0.3, 0.9).unwrap(), 4);
    let w = EnvWindow::from_env(&env, Site::ORIGIN, 3);
    assert!((apply_r(&w, &LocalFunctional::constant(1.0)).unwrap() - 1.0).abs() < 1e-15);

    // two-site window: R f(omega) = p_0 f(theta_1 omega) + q_0 f(theta_{-1} omega)
    let f = LocalFunctional::kernel_entry(Site::ORIGIN, 0);
    let k = |x: i64| env.kernel_at(Site::new(&[x]));
    let want = k(0).prob(0) * k(1).prob(0) + k(0).prob(1) * k(-1).prob(0);
    assert!((apply_r(&w, &f).unwrap() - want).abs() < 1e-15);

    let h = Environment::new(EnvironmentLaw::homogeneous_1d(0.7).unwrap(), 0);
    let wh = EnvWindow::from_env(&h, Site::ORIGIN, 2);
    assert!((apply_r(&wh, &f).unwrap() - 0.7).abs() < 1e-15);
}
