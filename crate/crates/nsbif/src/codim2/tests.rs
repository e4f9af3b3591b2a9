use super::*;
use crate::continuation::{continue_both, make_defining_system, BifCurve, ContinuationOptions};

fn fold_nf(h_on_alpha1: bool) -> BoundedMap {
    BoundedMap::new(
        "fold",
        1,
        |z, b| Ok(DVector::from_element(1, b[0] + z[0] + z[0] * z[0])),
        move |z, b| Ok(if h_on_alpha1 { z[0] - b[0] } else { z[0] - b[1] }),
    )
    .with_jacobian(|z, _| Ok(DMatrix::from_element(1, 1, 1.0 + 2.0 * z[0])))
    .with_smooth_extension(true)
}

fn flip_nf() -> BoundedMap {
    BoundedMap::new(
        "flip",
        1,
        |z, b| Ok(DVector::from_element(1, -(1.0 + b[0]) * z[0] + z[0].powi(3))),
        |z, b| Ok(z[0] - b[1]),
    )
    .with_smooth_extension(true)
}

fn ns_nf(theta: f64) -> BoundedMap {
    BoundedMap::new(
        "ns",
        2,
        move |z, b| {
            let k = 1.0 + b[0] - z.norm_squared();
            let (c, s) = (theta.cos(), theta.sin());
            Ok(DVector::from_vec(vec![k * (c * z[0] - s * z[1]), k * (s * z[0] + c * z[1])]))
        },
        |z, b| Ok(z[0] - b[1]),
    )
    .with_smooth_extension(true)
}

fn origin(n: usize) -> DVector<f64> {
    DVector::zeros(n)
}

#[test]
fn fold_eigendata_and_a0() {
    let map = BoundedMap::new(
        "fold2",
        2,
        |z, a| Ok(DVector::from_vec(vec![z[0] + z[0] * z[0] + a[0] + 0.3 * z[1], 0.5 * z[1] + z[0] * z[0]])),
        |z, a| Ok(z[0] - a[1]),
    )
    .with_smooth_extension(true);
    let eig = critical_eigendata(&map, &origin(2), &[0.0, 0.0], Case::Fold).unwrap();
    assert!((eig.lambda.re - 1.0).abs() < 1e-9);
    let q = eig.q_re();
    let p = eig.p_re();
    assert!((q[0] - 1.0).abs() < 1e-9 && q[1].abs() < 1e-9);
    assert!((p[0] - 1.0).abs() < 1e-9 && (p[1] - 0.6).abs() < 1e-9);
    let nf = nf_coefficients(&map, &eig).unwrap();
    assert!((nf.a0 - 1.6).abs() < 1e-5, "{}", nf.a0);
    assert_eq!(nf.s, 1.0);
}

#[test]
fn flip_c0() {
    let map = flip_nf();
    let eig = critical_eigendata(&map, &origin(1), &[0.0, 0.0], Case::Flip).unwrap();
    assert!((eig.lambda.re + 1.0).abs() < 1e-9);
    let nf = nf_coefficients(&map, &eig).unwrap();
    assert!((nf.c0 - 1.0).abs() < 1e-5, "{}", nf.c0);
    assert_eq!(nf.s, 1.0);
}

#[test]
fn rotation_eigendata() {
    let map = ns_nf(1.0);
    let eig = critical_eigendata(&map, &origin(2), &[0.0, 0.0], Case::Ns).unwrap();
    assert!((eig.theta - 1.0).abs() < 1e-9);
    assert!(eig.g.abs() < 1e-9);
    let qq: f64 = eig.q.iter().map(|c| c.norm_sqr()).sum();
    assert!((qq - 0.5).abs() < 1e-12);
    assert!((inner(&eig.p, &eig.q) - 1.0).norm() < 1e-10);
    let g_alpha = eig.g_alpha.unwrap();
    assert!((g_alpha[0] - 1.0).abs() < 1e-5 && g_alpha[1].abs() < 1e-6);
}

#[test]
fn ns_lyapunov() {
    let map = ns_nf(1.0);
    let eig = critical_eigendata(&map, &origin(2), &[0.0, 0.0], Case::Ns).unwrap();
    let nf = nf_coefficients(&map, &eig).unwrap();
    assert!((nf.a0 + 1.0).abs() < 1e-4, "{}", nf.a0);
    let fit = lyapunov_radial_fit(&map, &eig).unwrap();
    assert!((fit + 1.0).abs() < 1e-4, "{fit}");
}

#[test]
fn resonant_angles_rejected() {
    for theta in [2.0 * PI / 3.0, PI / 2.0, 1e-9, PI] {
        let map = ns_nf(theta);
        let r = critical_eigendata(&map, &origin(2), &[0.0, 0.0], Case::Ns);
        assert!(matches!(r, Err(Error::MultipleCritical(_))), "theta {theta}: {r:?}");
    }
}

#[test]
fn not_critical() {
    let map = fold_nf(false);
    let r = critical_eigendata(&map, &DVector::from_element(1, 0.2), &[-0.04, 0.0], Case::Fold);
    assert!(matches!(r, Err(Error::NotCritical { .. })));
}

fn pipeline(map: &BoundedMap, case: Case, n: usize) -> (NormalFormRecord, SigmaRecord, f64) {
    let eig = critical_eigendata(map, &origin(n), &[0.0, 0.0], case).unwrap();
    let nf = nf_coefficients(map, &eig).unwrap();
    let sig = sigma_coefficients(map, &eig, &nf).unwrap();
    let fd = sigma_fd_oracle(map, &eig, &nf, &sig, 1e-4).unwrap();
    (nf, sig, fd)
}

#[test]
fn sigma_fold() {
    let (nf, sig, fd) = pipeline(&fold_nf(false), Case::Fold, 1);
    assert!((sig.sigma_beta2 - 1.0).abs() < 1e-6, "{}", sig.sigma_beta2);
    assert!((fd - sig.sigma_beta2).abs() < 1e-4 * sig.sigma_beta2.abs(), "{fd}");
    let asy = predict_asymptote(&nf, &sig).unwrap();
    assert!((asy.kappa + 1.0).abs() < 1e-6);
    assert!((asy.kappa_alpha + 1.0).abs() < 1e-6);
}

#[test]
fn sigma_flip() {
    let (nf, sig, fd) = pipeline(&flip_nf(), Case::Flip, 1);
    assert!((sig.sigma_beta2 + 1.0).abs() < 1e-5, "{}", sig.sigma_beta2);
    assert!((fd - sig.sigma_beta2).abs() < 1e-4, "{fd}");
    let asy = predict_asymptote(&nf, &sig).unwrap();
    assert!((asy.kappa - 1.0).abs() < 1e-4);
}

#[test]
fn sigma_ns() {
    let (nf, sig, fd) = pipeline(&ns_nf(1.0), Case::Ns, 2);
    assert!(sig.phi_h.unwrap().abs() < 1e-9 || (sig.phi_h.unwrap() - 2.0 * PI).abs() < 1e-9);
    assert!((sig.sigma_beta2 + 1.0).abs() < 1e-6, "{}", sig.sigma_beta2);
    assert!((fd - sig.sigma_beta2).abs() < 1e-4, "{fd}");
    let asy = predict_asymptote(&nf, &sig).unwrap();
    assert!((asy.kappa - 1.0).abs() < 1e-4);
}

#[test]
fn reduced_determinants() {
    let d = genericity_determinant(&fold_nf(false), &origin(1), &[0.0, 0.0], Case::Fold).unwrap();
    assert!((d.reduced.unwrap() - 2.0).abs() < 1e-6, "{d:?}");
    assert!(d.full.abs() > 1e-3);
    let d = genericity_determinant(&fold_nf(true), &origin(1), &[0.0, 0.0], Case::Fold).unwrap();
    assert!(d.reduced.unwrap().abs() < 1e-8, "{d:?}");
    assert!(d.full.abs() < 1e-8);
    let d = genericity_determinant(&flip_nf(), &origin(1), &[0.0, 0.0], Case::Flip).unwrap();
    assert!((d.reduced.unwrap() + 2.0).abs() < 1e-5, "{d:?}");
    assert!(d.full.abs() > 1e-3);
    let d = genericity_determinant(&ns_nf(1.0), &origin(2), &[0.0, 0.0], Case::Ns).unwrap();
    assert!(d.reduced.unwrap().abs() > 1e-3 && d.full.abs() > 1e-3, "{d:?}");
}

#[test]
fn degenerate_case_fails_checks() {
    let rec = analyze_codim2(&fold_nf(true), Case::Fold, &DVector::from_element(1, 0.01), &[0.01, 0.3]).unwrap();
    assert!(!rec.all_pass());
    let rec = analyze_codim2(&fold_nf(false), Case::Fold, &DVector::from_element(1, 0.01), &[0.01, 0.02]).unwrap();
    assert!(rec.all_pass(), "{:?}", rec.checks);
    assert!(rec.alpha[0].abs() < 1e-9 && rec.alpha[1].abs() < 1e-9);
}

#[test]
fn annulus_examples() {
    let r = annulus_check(-1.0, 1.0, [0.01, 0.0], 0.75, 100).unwrap();
    assert!((r.spec.inner - 0.0684).abs() < 1e-4 && (r.spec.outer - 0.1316).abs() < 1e-4);
    assert!((r.inner_min_drho - 3.64e-4).abs() < 1e-5, "{}", r.inner_min_drho);
    assert!((r.outer_max_drho + 9.63e-4).abs() < 2e-5, "{}", r.outer_max_drho);
    assert_eq!((r.inner_fraction, r.outer_fraction), (1.0, 1.0));
    let r = annulus_check(-1.0, 1.0, [0.001, 0.0], 0.75, 100).unwrap();
    assert_eq!((r.inner_fraction, r.outer_fraction), (1.0, 1.0));
    assert!(matches!(annulus_check(-1.0, 1.0, [0.01, 0.0], 1.2, 10), Err(Error::InvalidGamma(_))));
}

#[test]
fn torus_grazing_examples() {
    let map = ns_nf(1.0);
    let z0 = DVector::from_vec(vec![0.1, 0.0]);
    let e = torus_grazing_estimate(&map, &z0, &[0.01, 0.12], 200, 1000).unwrap();
    assert!((e.min_h + 0.02).abs() < 2e-3, "{}", e.min_h);
    let e = torus_grazing_estimate(&map, &z0, &[0.01, 0.5], 200, 1000).unwrap();
    assert!((e.min_h + 0.4).abs() < 2e-3);
    match torus_grazing_estimate(&map, &z0, &[0.01, 0.0999], 200, 1000) {
        Err(Error::OrbitEscaped { .. }) => {}
        Ok(e) => assert!(e.min_h >= -1e-3),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn grazing_trace_on_parabola() {
    let map = ns_nf(1.0);
    let values: Vec<f64> = (1..=10).map(|k| 0.01 * k as f64).collect();
    let curve = trace_grazing_curve(
        &map,
        &values,
        |b2| (0.25 * b2 * b2, 4.0 * b2 * b2),
        |a| DVector::from_vec(vec![a[0].max(0.0).sqrt(), 0.0]),
        &GrazingTrace::default(),
    )
    .unwrap();
    for p in &curve.points {
        assert!((p.alpha[0] - p.alpha[1] * p.alpha[1]).abs() < 1e-6, "{:?}", p.alpha);
    }
}

#[test]
fn tangency_fold_curves() {
    let map = fold_nf(false);
    let opts = ContinuationOptions { steps: 400, h0: 1e-3, h_max: 1e-3, bounds: Some([[-0.1, 0.1], [-0.1, 0.1]]), ..Default::default() };
    let bc = make_defining_system(CurveKind::BcFixed, &map).unwrap();
    let start = DVector::from_vec(vec![0.0, 0.0, 0.0]);
    let sec = continue_both(&bc, &start, &opts, 2).unwrap();
    let fold = make_defining_system(CurveKind::Fold, &map).unwrap();
    let prim = continue_both(&fold, &start, &opts, 2).unwrap();
    let fit = verify_tangency(&prim, &sec, &[0.0, 0.0], &TangencyOptions { normal: Some([1.0, 0.0]), ..Default::default() }).unwrap();
    assert!(fit.angle <= 1e-3, "{fit:?}");
    assert!((fit.exponent - 2.0).abs() < 0.05, "{fit:?}");
    assert!((fit.kappa + 1.0).abs() < 0.02, "{fit:?}");
    assert!(fit.tangent);
}

#[test]
fn transversal_lines_rejected() {
    let line = |slope: f64| {
        let mut c = BifCurve::new(CurveKind::Custom, vec![], vec![]);
        for k in -50..=50 {
            let t = k as f64 * 1e-3;
            c.points.push(crate::continuation::CurvePoint {
                alpha: [t, slope * t],
                y: vec![],
                monitors: vec![],
                step: 0.0,
                residual: 0.0,
                is_virtual: false,
            });
        }
        c
    };
    let fit = verify_tangency(&line(0.0), &line(1.0), &[0.0, 0.0], &TangencyOptions::default()).unwrap();
    assert!(fit.angle > 0.5);
    assert!((fit.exponent - 1.0).abs() < 1e-6);
    assert!(!fit.tangent);
    let short = {
        let mut c = line(1.0);
        c.points.truncate(3);
        c
    };
    assert!(matches!(
        verify_tangency(&line(0.0), &short, &[0.0, 0.0], &TangencyOptions::default()),
        Err(Error::InsufficientPoints { .. })
    ));
}
