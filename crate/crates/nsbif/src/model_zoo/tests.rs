use nalgebra::DVector;

use super::*;
use crate::codim2::{analyze_codim2, Case};
use crate::hybrid_flow::{as_bounded_map, boundary_h, poincare_map, simulate, tangency_value};

fn ff_params(edits: &[(&str, f64)]) -> ParamSet {
    let mut p = descriptor("forest-fire").unwrap().param_set();
    for (k, v) in edits {
        p.set(k, *v).unwrap();
    }
    p
}

#[test]
fn param_names_resolve_aliases() {
    let p = ff_params(&[]);
    assert_eq!(p.index("rhoB").unwrap(), p.index("rho_B").unwrap());
    assert_eq!(p.index("r_1").unwrap(), 0);
    assert_eq!(p.index("r_2").unwrap(), 1);
    assert!(p.index("nope").is_err());
    let mut q = p.clone();
    assert!(q.set_plane(["rho_B", "rhoB"]).is_err());
}

#[test]
fn forest_fire_rejects_bad_thresholds() {
    let p = ff_params(&[("rho_B", 1.2)]);
    assert!(matches!(ForestFire::from_params(&p), Err(Error::InvalidParams(_))));
    let p = ff_params(&[("sigma_T", 0.95)]);
    assert!(matches!(ForestFire::from_params(&p), Err(Error::InvalidParams(_))));
}

#[test]
fn bush_only_first_fire_matches_logistic() {
    let ff = ForestFire::from_params(&ff_params(&[("alpha", 0.0)])).unwrap();
    let sys = build_forest_fire(&ff).unwrap();
    let tr = simulate(&sys, &[0.5, 0.0], &ff.alpha(), 6.0).unwrap();
    let ev: Vec<_> = tr.events().collect();
    assert_eq!(ev.len(), 1);
    assert_eq!(ev[0].boundary, forest_fire::BUSH);
    let expect = (17.0f64 / 3.0).ln() / 0.375;
    assert!((ev[0].time - expect).abs() < 1e-6, "{}", ev[0].time);
    assert!((ev[0].post[0] - 0.03 * 0.85).abs() < 1e-12);
}

#[test]
fn forest_fire_defaults_settle_and_stay_in_box() {
    let ff = ForestFire::default();
    let sys = build_forest_fire(&ff).unwrap();
    let tr = simulate(&sys, &[0.5, 0.5], &ff.alpha(), 500.0).unwrap();
    assert!(tr.detect_period(1e-6).is_some());
    for e in tr.events() {
        for v in e.pre.iter().chain(&e.post) {
            assert!((-1e-9..=1.0 + 1e-9).contains(v), "{v}");
        }
    }
}

#[test]
fn forest_fire_tangency_is_bush_growth_rate() {
    let ff = ForestFire::default();
    let sys = build_forest_fire(&ff).unwrap();
    let x = [0.4, 0.2];
    let got = tangency_value(&sys, forest_fire::BUSH, &x, &ff.alpha()).unwrap();
    let expect = 0.375 * 0.4 * 0.6 - 0.43 * 0.4 * 0.2;
    assert!((got - expect).abs() < 1e-8);
}

#[test]
fn forest_fire_return_map_cycle_is_stable() {
    let ff = ForestFire::default();
    let sys = build_forest_fire(&ff).unwrap();
    let sec = forest_fire_section(&sys, &ff, false).unwrap();
    let map = as_bounded_map(&sys, &sec);
    let a = ff.alpha();
    let mut z = DVector::from_element(1, 0.3);
    for _ in 0..30 {
        z = poincare_map(&sys, &sec, &z, &a).unwrap().0;
    }
    let z1 = poincare_map(&sys, &sec, &z, &a).unwrap().0;
    assert!((z1[0] - z[0]).abs() < 1e-8);
    let j = map.jacobian(&z, &a).unwrap();
    assert!(j[(0, 0)].abs() < 1.0);
}

#[test]
fn two_party_rejects_nonpositive_period() {
    let mut p = descriptor("two-party").unwrap().param_set();
    p.set("T", 0.0).unwrap();
    assert!(matches!(TwoParty::from_params(&p), Err(Error::InvalidParams(_))));
    p.set("T", -1.0).unwrap();
    assert!(matches!(build("two-party", &p), Err(Error::InvalidParams(_))));
}

#[test]
fn two_party_elections_on_schedule() {
    let tp = TwoParty::default();
    let sys = build_two_party(&tp).unwrap();
    let tr = simulate(&sys, &[0.5, 0.1, 0.2], &tp.alpha(), 64.0).unwrap();
    let ev: Vec<_> = tr.events().collect();
    assert_eq!(ev.len(), 20);
    for (k, e) in ev.iter().enumerate() {
        assert!((e.time - 3.2 * (k + 1) as f64).abs() < 1e-9);
        assert!(e.pre[0] > 0.0 && e.pre[0] < 2.0);
        assert!(e.pre.iter().all(|v| v.is_finite() && v.abs() < 1e3));
    }
}

#[test]
fn two_party_tie_keeps_incumbent() {
    let tp = TwoParty::default();
    let sys = build_two_party(&tp).unwrap();
    let a = tp.alpha();
    // a_D L_D = a_R L_R exactly
    let x = [0.5, 1.0, 0.38];
    assert_eq!(sys.boundaries[0].value(&x, &a).unwrap(), 0.0);
    assert_eq!(sys.boundaries[0].next_region(0, &x, &a, 2), 0);
    assert_eq!(sys.boundaries[0].next_region(1, &x, &a, 2), 1);
    assert_eq!(sys.locate(&x, &a).unwrap(), Gov::D.region());
    assert_eq!(sys.boundaries[0].next_region(0, &[0.5, 1.0, 0.3], &a, 2), 1);
}

#[test]
fn two_party_welfare_stays_positive() {
    let tp = TwoParty::default();
    let sys = build_two_party(&tp).unwrap();
    for w0 in [1e-3, 0.3, 1.5] {
        let tr = simulate(&sys, &[w0, 0.5, 0.5], &tp.alpha(), 30.0).unwrap();
        assert!(tr.final_state()[0] > 0.0);
        assert!(tr.events().all(|e| e.post[0] > 0.0));
    }
}

/// The forced D,R election map has an attracting period-2T cycle at the
/// defaults whose R election is won by a hair.
#[test]
fn two_party_period_two_cycle() {
    let tp = TwoParty::default();
    let map = two_party_election_map(&tp, &[Gov::D, Gov::R], 1).unwrap();
    let a = tp.alpha();
    let mut z = DVector::from_vec(vec![0.5, 0.1, 0.2]);
    for _ in 0..200 {
        z = map.eval_raw(&z, &a).unwrap();
    }
    let z1 = map.eval_raw(&z, &a).unwrap();
    assert!((&z1 - &z).norm() < 1e-9);
    let h = map.boundary(&z, &a).unwrap();
    assert!(h < 0.0 && h > -1e-3, "{h}");
    let ev = map.jacobian(&z, &a).unwrap().complex_eigenvalues();
    let mut re: Vec<f64> = ev.iter().map(|c| c.re).collect();
    re.sort_by(f64::total_cmp);
    assert!(re[0] < -0.8 && re[0] > -1.0, "{re:?}");

    // agrees with the unforced hybrid flow from the same state
    let sys = build_two_party(&tp).unwrap();
    let x: Vec<f64> = z.iter().copied().collect();
    let tr = simulate(&sys, &x, &a, 2.0 * 3.2 + 1e-3).unwrap();
    let ev: Vec<_> = tr.events().collect();
    assert_eq!(ev[0].region_after, Gov::R.region());
    assert_eq!(ev[1].region_after, Gov::D.region());
    for i in 0..3 {
        assert!((ev[1].pre[i] - z[i]).abs() < 1e-7);
    }
}

#[test]
fn election_map_jacobian_matches_fd() {
    let tp = TwoParty::default();
    let map = two_party_election_map(&tp, &[Gov::D, Gov::R], 1).unwrap();
    let z = DVector::from_vec(vec![0.6, 0.05, 1.0]);
    let a = tp.alpha();
    let j = map.jacobian(&z, &a).unwrap();
    for c in 0..3 {
        let mut e = DVector::zeros(3);
        e[c] = 1e-6;
        let d = (map.eval_raw(&(&z + &e), &a).unwrap() - map.eval_raw(&(&z - &e), &a).unwrap()) / 2e-6;
        for r in 0..3 {
            assert!((d[r] - j[(r, c)]).abs() < 1e-5 * (1.0 + d[r].abs()));
        }
    }
}

#[test]
fn nf_fold_fixed_points() {
    let map = build_nf_test(&NfTest::new(NfCase::Fold, 1.0, 0.0)).unwrap();
    for v in [0.2, -0.2] {
        let z = DVector::from_element(1, v);
        assert!((map.eval_raw(&z, &[-0.04, 0.0]).unwrap()[0] - v).abs() < 1e-15);
    }
    // fixed point on the boundary: v = sigma beta2 and beta1 = -v^2
    let z = DVector::from_element(1, 0.3);
    assert!(map.boundary(&z, &[-0.09, 0.3]).unwrap().abs() < 1e-15);
}

#[test]
fn nf_flip_period_two_points() {
    let map = build_nf_test(&NfTest::new(NfCase::Flip, 1.0, 0.0)).unwrap();
    let a = [0.01, 0.0];
    let z = DVector::from_element(1, 0.1);
    let z2 = map.eval_raw(&map.eval_raw(&z, &a).unwrap(), &a).unwrap();
    assert!((z2[0] - 0.1).abs() < 1e-14);
    assert!((map.eval_raw(&z, &a).unwrap()[0] + 0.1).abs() < 1e-14);
}

#[test]
fn nf_ns_invariant_circle() {
    let map = build_nf_test(&NfTest::new(NfCase::Ns, 1.0, 1.0)).unwrap();
    let a = [0.01, 0.0];
    let mut z = DVector::from_vec(vec![0.05, 0.0]);
    for _ in 0..5000 {
        z = map.eval_raw(&z, &a).unwrap();
    }
    assert!((z.norm() - 0.1).abs() < 1e-9);
}

#[test]
fn nf_ns_rejects_resonance() {
    for theta in [std::f64::consts::FRAC_PI_2, 2.0 * std::f64::consts::PI / 3.0, std::f64::consts::PI, 0.0] {
        assert!(matches!(build_nf_test(&NfTest::new(NfCase::Ns, 1.0, theta)), Err(Error::ResonantTheta(_))));
    }
    assert!(build_nf_test(&NfTest::new(NfCase::Ns, 1.0, 0.9)).is_ok());
}

#[test]
fn nf_jacobians_match_fd() {
    for case in [NfCase::Fold, NfCase::Flip, NfCase::Ns] {
        let map = build_nf_test(&NfTest::new(case, 0.7, 1.1)).unwrap();
        let n = map.dim();
        let z = DVector::from_fn(n, |i, _| 0.3 - 0.2 * i as f64);
        let a = [0.05, -0.1];
        let j = map.jacobian(&z, &a).unwrap();
        for c in 0..n {
            let mut e = DVector::zeros(n);
            e[c] = 1e-6;
            let d = (map.eval_raw(&(&z + &e), &a).unwrap() - map.eval_raw(&(&z - &e), &a).unwrap()) / 2e-6;
            for r in 0..n {
                assert!((d[r] - j[(r, c)]).abs() < 1e-8, "{case:?}");
            }
        }
    }
}

/// The BC (fold) or grazing (flip, NS) parabola of every normal-form map is
/// `alpha1 = -+ sigma_slope^2 alpha2^2`. For flip and NS the second unfolding
/// parameter is the boundary value at the critical point, which absorbs the
/// slope and leaves `sigma_beta2 = -1`.
#[test]
fn nf_pipeline_recovers_construction_parameters() {
    let fold = build_nf_test(&NfTest::new(NfCase::Fold, 0.8, 0.0)).unwrap();
    let r = analyze_codim2(&fold, Case::Fold, &DVector::from_element(1, 0.01), &[0.001, 0.01]).unwrap();
    assert!((r.s - 1.0).abs() < 1e-3);
    assert!((r.sigma.unwrap().sigma_beta2 - 0.8).abs() < 1e-3);
    assert!((r.asymptote.unwrap().kappa_alpha + 0.64).abs() < 1e-3);

    let flip = build_nf_test(&NfTest::new(NfCase::Flip, 0.8, 0.0)).unwrap();
    let r = analyze_codim2(&flip, Case::Flip, &DVector::from_element(1, 0.01), &[0.001, 0.01]).unwrap();
    assert!((r.s - 1.0).abs() < 1e-3);
    assert!((r.sigma.unwrap().sigma_beta2 + 1.0).abs() < 1e-3);
    assert!((r.asymptote.unwrap().kappa_alpha - 0.64).abs() < 1e-3);

    let ns = build_nf_test(&NfTest::new(NfCase::Ns, 0.8, 1.0)).unwrap();
    let r = analyze_codim2(&ns, Case::Ns, &DVector::from_vec(vec![0.01, 0.0]), &[0.001, 0.01]).unwrap();
    assert!((r.a0 + 1.0).abs() < 1e-3);
    assert!((r.sigma.unwrap().sigma_beta2 + 1.0).abs() < 1e-3);
    assert!((r.asymptote.unwrap().kappa_alpha - 0.64).abs() < 1e-3);
}

#[test]
fn drift_boundary_h() {
    let sys = drift_system(1.0);
    let sec = drift_section(&sys).unwrap();
    for (z, h) in [(1.5, 0.0), (1.4, 0.1), (1.7, -0.2)] {
        let got = boundary_h(&sys, &sec, &DVector::from_element(1, z), &[0.0, 0.0]).unwrap();
        assert!((got - h).abs() < 1e-8, "{z}: {got}");
    }
}

#[test]
fn clock_map_contracts_to_one() {
    let sys = clock_system(2.0).unwrap();
    let sec = clock_section();
    let (z, t) = poincare_map(&sys, &sec, &DVector::from_element(1, 3.0), &[0.0, 0.0]).unwrap();
    assert!((z[0] - (1.0 + 2.0 * (-2f64).exp())).abs() < 1e-9);
    assert!((t - 2.0).abs() < 1e-12);
    assert!(clock_system(0.0).is_err());
}

#[test]
fn every_descriptor_builds() {
    for d in descriptors() {
        let p = d.param_set();
        let m = build(d.name, &p).unwrap_or_else(|e| panic!("{}: {e}", d.name));
        match (m, d.kind) {
            (Model::Hybrid { .. }, ModelKind::Hybrid) | (Model::Map { .. }, ModelKind::Map) => {}
            _ => panic!("{} has the wrong kind", d.name),
        }
    }
    assert!(build("nope", &descriptor("clock").unwrap().param_set()).is_err());
}
