use std::sync::Arc;

use rwre::env_model::{Environment, EnvironmentLaw, TransitionKernel};
use rwre::lattice::{Direction, Site};
use rwre::renewal::*;
use rwre::rng::StreamKey;
use rwre::walk_sim::Walker;

fn key(tag: &str) -> StreamKey {
    StreamKey::new(7, "renewal-it", tag)
}

fn e1() -> Direction {
    Direction::axis(1, 0, 1)
}

#[test]
fn monotone_path_renews_every_step() {
    let env = Environment::new(EnvironmentLaw::homogeneous_1d(1.0).unwrap(), 0);
    let path = Walker::new(&env).path(Site::ORIGIN, 200, &mut key("m").rng(0));
    let rec = decompose(&path, &e1(), 10);
    let times: Vec<u64> = rec.renewals.iter().map(|r| r.time).collect();
    assert_eq!(times, (1..=190).collect::<Vec<u64>>());
    assert!(verify_record(&path, &rec));
}

#[test]
fn recorded_renewals_satisfy_the_definition() {
    let law = Arc::new(EnvironmentLaw::two_point(0.8, 0.4).unwrap());
    for (rec, _) in simulate_records(&law, &e1(), 20_000, 500, 20, &key("def")) {
        assert!(rec.renewals.windows(2).all(|w| w[0].time < w[1].time));
        assert!(rec.renewals.windows(2).all(|w| w[0].position.0[0] < w[1].position.0[0]));
    }
    let env = Environment::new((*law).clone(), 3);
    let path = Walker::new(&env).path(Site::ORIGIN, 20_000, &mut key("v").rng(0));
    let rec = decompose(&path, &e1(), 500);
    assert!(verify_record(&path, &rec));
    assert_eq!(decompose_recursive(&path, &e1(), 500).unwrap().renewals, rec.renewals);
}

#[test]
fn symmetric_walk_loses_renewals_as_window_grows() {
    let env = Environment::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap(), 0);
    let path = Walker::new(&env).path(Site::ORIGIN, 100_000, &mut key("s").rng(0));
    let counts: Vec<usize> = [10u64, 1000, 30_000].iter().map(|w| decompose(&path, &e1(), *w).renewals.len()).collect();
    assert!(counts[2] <= counts[1] && counts[1] <= counts[0], "{counts:?}");
    assert!(counts[2] * 20 < counts[0].max(1), "{counts:?}");
}

#[test]
fn velocity_and_mirror() {
    let law = Arc::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap());
    let recs: Vec<RenewalRecord> = simulate_records(&law, &e1(), 20_000, 300, 40, &key("h")).into_iter().map(|r| r.0).collect();
    let v = estimate_velocity(&recs, 1).unwrap();
    assert!(v[0].contains(0.5), "{:?}", v[0]);

    let mirror = Arc::new(EnvironmentLaw::homogeneous(TransitionKernel::one_dim(0.25).unwrap()).unwrap());
    let recs: Vec<RenewalRecord> = simulate_records(&mirror, &e1().negated(), 20_000, 300, 40, &key("h"))
        .into_iter()
        .map(|r| r.0)
        .collect();
    let w = estimate_velocity(&recs, 1).unwrap();
    assert!(w[0].contains(-0.5), "{:?}", w[0]);
}

#[test]
fn iid_blocks_pass_and_overlapping_cuts_fail() {
    let law = Arc::new(EnvironmentLaw::homogeneous_1d(0.7).unwrap());
    let sims = simulate_records(&law, &e1(), 50_000, 300, 20, &key("iid"));
    let incs: Vec<Vec<(f64, f64)>> = sims.iter().map(|(r, _)| block_pairs(r)).collect();
    let firsts: Vec<f64> = sims.iter().filter_map(|(r, _)| r.first_block(Site::ORIGIN).map(|b| b.0 as f64)).collect();
    let rep = check_iid(&incs, &firsts).unwrap();
    assert!(rep.within_band, "{rep:?}");

    let env = Environment::new((*law).clone(), 0);
    let path = Walker::new(&env).path(Site::ORIGIN, 50_000, &mut key("o").rng(0));
    let over = overlapping_control(&path, &e1(), 40);
    let bad = check_iid(&[over], &[]).unwrap();
    assert!(!bad.within_band, "{bad:?}");
}

#[test]
fn lemma_identity_deterministic_mover() {
    let law = Arc::new(EnvironmentLaw::homogeneous_1d(1.0).unwrap());
    let budget = LemmaBudget { horizon: 200, replicas: 50, i_max: 3, window: 20 };
    let r = lemma_expectation_identity(&law, &e1(), &budget, &key("l")).unwrap();
    assert!((r.lhs.estimate - 1.0).abs() < 1e-12 && (r.rhs - 1.0).abs() < 1e-12, "{r:?}");
}

#[test]
fn radius_moments_and_tail() {
    let law = Arc::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap());
    let recs: Vec<RenewalRecord> = simulate_records(&law, &e1(), 10_000, 200, 20, &key("r")).into_iter().map(|r| r.0).collect();
    let m = renewal_radius_moments(&recs, &[0.0, 0.5], &[2.0]);
    assert_eq!(m[0].estimate.as_ref().unwrap().estimate, 0.5f64.exp());
    assert!(m[1].estimate.as_ref().unwrap().estimate.is_finite() && !m[1].divergent);

    let t = tail_profile(&recs, 1, 2.0);
    assert_eq!(t.log_survival[0], 0.0);
    assert!(t.slope_in_u.unwrap() < 0.0);

    let sym = Arc::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap());
    let none: Vec<RenewalRecord> =
        simulate_records(&sym, &e1(), 2000, 2000, 5, &key("n")).into_iter().map(|r| r.0).collect();
    assert!(renewal_radius_moments(&none, &[0.5], &[1.0])[0].estimate.is_none());
}

#[test]
fn transience_bands() {
    let h = Arc::new(EnvironmentLaw::homogeneous_1d(0.75).unwrap());
    let band = transience_probe(&h, &e1(), 5000, 200, &key("t")).unwrap();
    assert!(band.lower > 0.95, "{band:?}");
    let s = Arc::new(EnvironmentLaw::homogeneous_1d(0.5).unwrap());
    let band = transience_probe(&s, &e1(), 5000, 200, &key("t")).unwrap();
    assert!(band.upper < 0.7, "{band:?}");
    let a = Arc::new(EnvironmentLaw::anisotropic_default().unwrap());
    let band = transience_probe(&a, &Direction::axis(2, 0, 1), 100_000, 200, &key("t")).unwrap();
    assert!(band.upper_ci > 0.9, "{band:?}");
}
