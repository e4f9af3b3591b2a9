use nalgebra::{DMatrix, DVector};
use nsbif::codim2::{analyze_codim2, trace_grazing_curve, verify_tangency, Case, GrazingTrace, TangencyOptions};
use nsbif::continuation::systems::make_defining_system;
use nsbif::continuation::{continue_both, detect_special_points, BifCurve, ContinuationOptions, CurveKind};
use nsbif::hybrid_flow::{as_bounded_map, simulate};
use nsbif::model_zoo::{
    build_forest_fire, build_nf_test, build_two_party, drift_system, forest_fire_section, ForestFire, NfCase, NfTest,
    TwoParty,
};
use nsbif::{BoundedMap, Error};
use proptest::prelude::*;

/// Polynomial map with hand-computed second and third derivatives.
#[derive(Debug, Clone, Copy)]
struct Poly {
    c: [f64; 7],
}

impl Poly {
    fn map(self) -> BoundedMap {
        let c = self.c;
        BoundedMap::new(
            "poly",
            2,
            move |z, a| {
                let (x, y) = (z[0], z[1]);
                Ok(DVector::from_vec(vec![
                    c[0] * x + c[1] * x * x + c[2] * x * y + c[3] * x * x * x + a[0],
                    c[4] * y + c[5] * x * y * y + c[6] * y * y * y + a[1],
                ]))
            },
            |z, a| Ok(z[0] - a[1]),
        )
    }

    fn b(self, z: &DVector<f64>, p: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
        let c = self.c;
        let (x, y) = (z[0], z[1]);
        let h1 = [[2.0 * c[1] + 6.0 * c[3] * x, c[2]], [c[2], 0.0]];
        let h2 = [[0.0, 2.0 * c[5] * y], [2.0 * c[5] * y, 2.0 * c[5] * x + 6.0 * c[6] * y]];
        let form = |h: [[f64; 2]; 2]| (0..2).flat_map(|j| (0..2).map(move |k| (j, k))).map(|(j, k)| h[j][k] * p[j] * q[k]).sum::<f64>();
        DVector::from_vec(vec![form(h1), form(h2)])
    }

    fn c3(self, p: &DVector<f64>, q: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        let c = self.c;
        let one = 6.0 * c[3] * p[0] * q[0] * r[0];
        let two = 2.0 * c[5] * (p[0] * q[1] * r[1] + p[1] * q[0] * r[1] + p[1] * q[1] * r[0]) + 6.0 * c[6] * p[1] * q[1] * r[1];
        DVector::from_vec(vec![one, two])
    }
}

fn coef() -> impl Strategy<Value = f64> {
    -2.0..2.0f64
}

fn vec2() -> impl Strategy<Value = DVector<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| DVector::from_vec(vec![a, b]))
}

fn close(a: &DVector<f64>, b: &DVector<f64>, rel: f64) -> bool {
    (a - b).norm() <= rel * (1.0 + b.norm())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fd_derivatives_match_polynomials(c in prop::array::uniform7(coef()), z in vec2(), p in vec2(), q in vec2(), r in vec2()) {
        let poly = Poly { c };
        let map = poly.map();
        let d = map.derivatives(&z, &[0.1, 2.0], 3).unwrap();
        let jac = DMatrix::from_row_slice(2, 2, &[
            c[0] + 2.0 * c[1] * z[0] + c[2] * z[1] + 3.0 * c[3] * z[0] * z[0], c[2] * z[0],
            c[5] * z[1] * z[1], c[4] + 2.0 * c[5] * z[0] * z[1] + 3.0 * c[6] * z[1] * z[1],
        ]);
        prop_assert!((&d.a - &jac).norm() <= 1e-4 * (1.0 + jac.norm()));
        let b = d.bilinear(&p, &q).unwrap();
        prop_assert!(close(&b, &poly.b(&z, &p, &q), 1e-4), "{b} vs {}", poly.b(&z, &p, &q));
        let t = d.trilinear(&p, &q, &r).unwrap();
        prop_assert!(close(&t, &poly.c3(&p, &q, &r), 1e-4), "{t} vs {}", poly.c3(&p, &q, &r));
        let bqp = d.bilinear(&q, &p).unwrap();
        prop_assert!((&b - &bqp).norm() <= 1e-6 * (1.0 + b.norm()));
    }

    #[test]
    fn eval_checked_refuses_the_undescribed_side(x in -1.0..1.0f64, y in -1.0..1.0f64, a2 in -1.0..1.0f64) {
        let map = Poly { c: [0.5, 0.1, 0.0, 0.0, 0.5, 0.0, 0.0] }.map();
        let z = DVector::from_vec(vec![x, y]);
        let h = map.boundary(&z, &[0.0, a2]).unwrap();
        match map.eval_checked(&z, &[0.0, a2]) {
            Ok(_) => prop_assert!(h < map.tol_h(&z)),
            Err(Error::DomainViolation { .. }) => prop_assert!(h >= map.tol_h(&z)),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn forest_fire_events_are_localized(b0 in 0.02..0.98f64, t0 in 0.02..0.98f64) {
        let ff = ForestFire::default();
        let sys = build_forest_fire(&ff).unwrap();
        let tr = simulate(&sys, &[b0, t0], &ff.alpha(), 80.0).unwrap();
        for e in tr.events() {
            prop_assert!(e.residual.abs() <= 1e-12, "residual {}", e.residual);
        }
        let inside = |x: &[f64]| x.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v));
        for s in &tr.segments {
            prop_assert!(inside(&s.x0) && inside(&s.x1));
            for st in &s.steps {
                prop_assert!(inside(&st.y1[..2]));
            }
        }
    }

    #[test]
    fn drift_wall_events_are_localized(x2 in 0.0..0.99f64, c in 0.5..1.5f64) {
        let sys = drift_system(c);
        let tr = simulate(&sys, &[-1.0, x2], &[c, 0.0], 12.0).unwrap();
        for e in tr.events() {
            prop_assert!(e.residual.abs() <= 1e-12, "residual {}", e.residual);
        }
    }

    #[test]
    fn welfare_stays_positive(w0 in 1e-3..2.0f64, l1 in 0.0..1.0f64, l2 in 0.0..1.0f64) {
        let tp = TwoParty::default();
        let sys = build_two_party(&tp).unwrap();
        let tr = simulate(&sys, &[w0, l1, l2], &tp.alpha(), 20.0).unwrap();
        prop_assert!(tr.segments.iter().all(|s| s.x1[0] > 0.0 && s.steps.iter().all(|st| st.y1[0] > 0.0)));
    }

    /// Scaling `H` by a positive constant moves nothing but `sigma` itself.
    #[test]
    fn boundary_scaling_invariance(c in 0.1..10.0f64) {
        for (case, kind, n) in [(NfCase::Fold, Case::Fold, 1), (NfCase::Flip, Case::Flip, 1), (NfCase::Ns, Case::Ns, 2)] {
            let base = build_nf_test(&NfTest::new(case, 0.7, 1.0)).unwrap();
            let (bf, bh) = (base.clone(), base.clone());
            let scaled = BoundedMap::new("scaled", n, move |z, a| bf.eval_raw(z, a), move |z, a| Ok(c * bh.boundary(z, a)?))
                .with_smooth_extension(true);
            let z0 = DVector::from_element(n, 0.01);
            let r0 = analyze_codim2(&base, kind, &z0, &[0.01, 0.01]).unwrap();
            let r1 = analyze_codim2(&scaled, kind, &z0, &[0.01, 0.01]).unwrap();
            prop_assert!((r0.alpha[0] - r1.alpha[0]).abs() < 1e-8 && (r0.alpha[1] - r1.alpha[1]).abs() < 1e-8);
            let (s0, s1) = (r0.sigma.unwrap(), r1.sigma.unwrap());
            prop_assert_eq!(s0.sigma_beta2.signum(), s1.sigma_beta2.signum());
            if let (Some(p0), Some(p1)) = (s0.phi_h, s1.phi_h) {
                prop_assert!((p0 - p1).abs() < 1e-8);
            }
            let (k0, k1) = (r0.asymptote.unwrap().kappa_alpha, r1.asymptote.unwrap().kappa_alpha);
            prop_assert!((k0 - k1).abs() <= 1e-6 * k0.abs(), "{k0} vs {k1}");
        }
    }
}

fn nf(case: NfCase) -> BoundedMap {
    build_nf_test(&NfTest::new(case, 1.0, 1.0)).unwrap()
}

fn opts(h_max: f64) -> ContinuationOptions {
    ContinuationOptions { steps: 600, h0: 1e-3, h_max, bounds: Some([[-0.06, 0.06], [-0.06, 0.06]]), ..Default::default() }
}

#[test]
fn bc_fixed_blocks_hold_separately() {
    let map = nf(NfCase::Fold);
    let sys = make_defining_system(CurveKind::BcFixed, &map).unwrap();
    let c = continue_both(&sys, &DVector::zeros(3), &opts(2e-3), 2).unwrap();
    let mut signs = [false; 2];
    for p in &c.points {
        let z = DVector::from_column_slice(&p.y);
        assert!(map.boundary(&z, &p.alpha).unwrap().abs() <= 1e-9);
        assert!((map.eval_raw(&z, &p.alpha).unwrap() - &z).norm() <= 1e-9);
        // both branches v* = +-sqrt(-beta1)
        signs[(z[0] > 0.0) as usize] |= z[0].abs() > 1e-3;
        assert!((p.alpha[0] + p.alpha[1] * p.alpha[1]).abs() <= 1e-8);
    }
    assert!(signs[0] && signs[1]);
}

#[test]
fn special_points_do_not_depend_on_step_size() {
    let map = nf(NfCase::Flip);
    let sys = make_defining_system(CurveKind::Flip, &map).unwrap();
    let start = DVector::from_vec(vec![0.0, 0.0, 0.013]);
    let locate = |h: f64| {
        let c = continue_both(&sys, &start, &opts(h), 2).unwrap();
        detect_special_points(&sys, &c, sys.h_monitor.unwrap())[0].alpha
    };
    let (a, b) = (locate(2e-3), locate(1e-3));
    assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8, "{a:?} {b:?}");
    assert!(a[1].abs() < 1e-8);
}

#[test]
fn predicted_kappa_matches_fitted_kappa() {
    let grazing = |map: &BoundedMap| -> BifCurve {
        let values: Vec<f64> = (1..=25).map(|k| 0.002 * k as f64).collect();
        trace_grazing_curve(
            map,
            &values,
            |b2| (0.25 * b2 * b2, 4.0 * b2 * b2),
            |a| DVector::from_vec(vec![a[0].max(0.0).sqrt(), 0.0]),
            &GrazingTrace::default(),
        )
        .unwrap()
    };
    for (case, kind, ck, n) in [
        (NfCase::Fold, Case::Fold, CurveKind::BcFixed, 1),
        (NfCase::Flip, Case::Flip, CurveKind::BcPeriod2, 1),
        (NfCase::Ns, Case::Ns, CurveKind::GrazingTorus, 2),
    ] {
        let map = nf(case);
        let rec = analyze_codim2(&map, kind, &DVector::from_element(n, 0.01), &[0.01, 0.01]).unwrap();
        let asy = rec.asymptote.clone().unwrap();
        let psys = make_defining_system(kind.kind(), &map).unwrap();
        let prim = continue_both(&psys, &DVector::zeros(n + 2), &opts(2e-3), 2).unwrap();
        let sec = match ck {
            CurveKind::GrazingTorus => grazing(&map),
            CurveKind::BcPeriod2 => {
                let s = make_defining_system(ck, &map).unwrap();
                let seed = nsbif::codim2::period2_bc_seed(&map, &rec, 1e-2).unwrap();
                continue_both(&s, &seed, &opts(2e-3), 2).unwrap()
            }
            _ => {
                let s = make_defining_system(ck, &map).unwrap();
                continue_both(&s, &DVector::zeros(n + 2), &opts(2e-3), 2).unwrap()
            }
        };
        let fit = verify_tangency(&prim, &sec, &rec.alpha, &TangencyOptions { normal: Some(asy.normal), ..Default::default() }).unwrap();
        assert!((fit.kappa - asy.kappa_alpha).abs() <= 0.02 * asy.kappa_alpha.abs(), "{case:?}: {} vs {}", fit.kappa, asy.kappa_alpha);
    }
}

#[test]
fn section_chart_does_not_change_multipliers() {
    for rho_t in [0.5, 0.93] {
        let mut ff = ForestFire::default();
        ff.values[6] = rho_t;
        let sys = build_forest_fire(&ff).unwrap();
        let a = ff.alpha();
        let sec = forest_fire_section(&sys, &ff, false).unwrap();
        let flipped = sec.clone().with_chart(DMatrix::from_column_slice(2, 1, &[-1.0, 0.0]));
        let (m, mf) = (as_bounded_map(&sys, &sec), as_bounded_map(&sys, &flipped));
        let mut z = DVector::from_element(1, 0.3);
        for _ in 0..40 {
            z = m.eval_raw(&z, &a).unwrap();
        }
        let zf = -&z;
        let (j, jf) = (m.jacobian(&z, &a).unwrap()[(0, 0)], mf.jacobian(&zf, &a).unwrap()[(0, 0)]);
        assert!((j - jf).abs() <= 1e-8, "{j} vs {jf}");
        let back = mf.eval_raw(&zf, &a).unwrap();
        assert!((back[0] + z[0]).abs() <= 1e-8);
    }
}
