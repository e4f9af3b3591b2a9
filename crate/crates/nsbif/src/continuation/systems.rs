use nalgebra::{DMatrix, DVector};

use super::{CurveKind, DefiningSystem, Monitor};
use crate::bounded_map::{BoundedMap, Params};
use crate::error::{Error, Result};

/// Growth `g = |lambda| - 1` and angle of the complex multiplier (Im > 0)
/// nearest the unit circle.
pub fn ns_growth(map: &BoundedMap, z: &DVector<f64>, alpha: &Params) -> Result<(f64, f64)> {
    let a = map.jacobian(z, alpha)?;
    ns_growth_of(&a)
}

pub fn ns_growth_of(a: &DMatrix<f64>) -> Result<(f64, f64)> {
    let ev = a.complex_eigenvalues();
    ev.iter()
        .filter(|l| l.im > 1e-12)
        .map(|l| (l.norm() - 1.0, l.arg()))
        .min_by(|x, y| x.0.abs().partial_cmp(&y.0.abs()).unwrap())
        .ok_or(Error::NotCritical { distance: f64::INFINITY })
}

fn det_shift(a: &DMatrix<f64>, s: f64) -> f64 {
    let n = a.nrows();
    (a - DMatrix::identity(n, n) * s).determinant()
}

fn fd_step_for(map: &BoundedMap) -> f64 {
    if map.has_jacobian() {
        1e-6
    } else {
        1e-5
    }
}

fn z_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("z{i}")).collect()
}

fn h_monitor(map: &BoundedMap) -> Monitor {
    let m = map.clone();
    Monitor::new("H", move |y, a| m.boundary(&y.rows(0, m.dim()).into_owned(), a))
}

/// Starting unknowns for `kind` at a point `(z, alpha)`: the state, plus the
/// unit null vector of `A -/+ I` for fold and flip systems in dimension >= 2.
pub fn eigen_seed(kind: CurveKind, map: &BoundedMap, z: &DVector<f64>, alpha: &Params) -> Result<DVector<f64>> {
    let n = map.dim();
    let shift = match kind {
        CurveKind::Fold => 1.0,
        CurveKind::Flip => -1.0,
        _ => return Ok(z.clone()),
    };
    if n == 1 {
        return Ok(z.clone());
    }
    let a = map.jacobian(z, alpha)?;
    let m = &a - DMatrix::identity(n, n) * shift;
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let imin = svd.singular_values.imin();
    let nu = vt.row(imin).transpose();
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(z);
    y.rows_mut(n, n).copy_from(&nu);
    Ok(y)
}

/// Defining system of a bifurcation curve of the fixed points of `map`.
pub fn make_defining_system(kind: CurveKind, map: &BoundedMap) -> Result<DefiningSystem> {
    let n = map.dim();
    let fd = fd_step_for(map);
    let sys = match kind {
        CurveKind::Fold | CurveKind::Flip => {
            let shift = if kind == CurveKind::Fold { 1.0 } else { -1.0 };
            let m = map.clone();
            if n == 1 {
                DefiningSystem::new(kind, 1, 2, move |y, a| {
                    let fz = m.eval_ext(y, a)?;
                    let j = m.jacobian(y, a)?;
                    Ok(DVector::from_vec(vec![fz[0] - y[0], j[(0, 0)] - shift]))
                })
                .with_labels(z_labels(1))
            } else {
                let mut labels = z_labels(n);
                labels.extend((1..=n).map(|i| format!("nu{i}")));
                DefiningSystem::new(kind, 2 * n, 2 * n + 1, move |y, a| {
                    let z = y.rows(0, n).into_owned();
                    let nu = y.rows(n, n).into_owned();
                    let fz = m.eval_ext(&z, a)?;
                    let j = m.jacobian(&z, a)?;
                    let mut r = DVector::zeros(2 * n + 1);
                    r.rows_mut(0, n).copy_from(&(fz - &z));
                    r.rows_mut(n, n).copy_from(&(&j * &nu - &nu * shift));
                    r[2 * n] = nu.dot(&nu) - 1.0;
                    Ok(r)
                })
                .with_labels(labels)
            }
        }
        CurveKind::Ns => {
            if n < 2 {
                return Err(Error::UnsupportedDimension { what: "ns defining system".into(), dim: n });
            }
            let m = map.clone();
            let m2 = map.clone();
            DefiningSystem::new(kind, n, n + 1, move |y, a| {
                let fz = m.eval_ext(y, a)?;
                let (g, _) = ns_growth(&m, y, a)?;
                let mut r = DVector::zeros(n + 1);
                r.rows_mut(0, n).copy_from(&(fz - y));
                r[n] = g;
                Ok(r)
            })
            .with_labels(z_labels(n))
            .with_monitor(Monitor::new("theta", move |y, a| ns_growth(&m2, y, a).map(|v| v.1)))
        }
        CurveKind::BcFixed => {
            let m = map.clone();
            let mf = map.clone();
            let ml = map.clone();
            let mut s = DefiningSystem::new(kind, n, n + 1, move |y, a| {
                let fz = m.eval_ext(y, a)?;
                let mut r = DVector::zeros(n + 1);
                r.rows_mut(0, n).copy_from(&(fz - y));
                r[n] = m.boundary(y, a)?;
                Ok(r)
            })
            .with_labels(z_labels(n))
            .with_monitor(Monitor::new("fold_test", move |y, a| Ok(det_shift(&mf.jacobian(y, a)?, 1.0))))
            .with_monitor(Monitor::new("flip_test", move |y, a| Ok(det_shift(&ml.jacobian(y, a)?, -1.0))));
            if n >= 2 {
                let mn = map.clone();
                s = s.with_monitor(Monitor::new("ns_test", move |y, a| ns_growth(&mn, y, a).map(|v| v.0)));
            }
            s
        }
        CurveKind::BcPeriod2 => {
            let m = map.clone();
            let ms = map.clone();
            let mh = map.clone();
            let m2 = map.clone();
            let m3 = map.clone();
            let jac2 = move |m: &BoundedMap, y: &DVector<f64>, a: &Params| -> Result<DMatrix<f64>> {
                let w = m.eval_ext(y, a)?;
                Ok(m.jacobian(&w, a)? * m.jacobian(y, a)?)
            };
            DefiningSystem::new(kind, n, n + 1, move |y, a| {
                let w = m.eval_ext(y, a)?;
                let f2 = m.eval_ext(&w, a)?;
                let mut r = DVector::zeros(n + 1);
                r.rows_mut(0, n).copy_from(&(f2 - y));
                r[n] = m.boundary(y, a)?;
                Ok(r)
            })
            .with_labels(z_labels(n))
            .with_monitor(Monitor::new("separation", move |y, a| Ok((ms.eval_ext(y, a)? - y).norm())))
            .with_monitor(Monitor::new("H_image", move |y, a| {
                let w = mh.eval_ext(y, a)?;
                mh.boundary(&w, a)
            }))
            .with_monitor(Monitor::new("fold2_test", move |y, a| Ok(det_shift(&jac2(&m2, y, a)?, 1.0))))
            .with_monitor(Monitor::new("flip2_test", move |y, a| Ok(det_shift(&jac2(&m3, y, a)?, -1.0))))
        }
        CurveKind::FixedPoint => {
            let m = map.clone();
            DefiningSystem::new(kind, n, n, move |y, a| Ok(m.eval_ext(y, a)? - y)).with_labels(z_labels(n))
        }
        CurveKind::GrazingTorus | CurveKind::Custom => {
            return Err(Error::NotSupported(format!("no residual form for {kind} curves")));
        }
    };
    let mut sys = sys.with_fd_step(fd);
    if kind != CurveKind::BcFixed && kind != CurveKind::BcPeriod2 {
        sys = sys.with_h_monitor(h_monitor(map));
    } else if kind == CurveKind::BcPeriod2 {
        // the second cycle point must stay on the described side
        sys.h_monitor = Some(1);
    }
    Ok(sys)
}

/// Square system for a codimension-two point: the smooth bifurcation
/// equations of `kind` together with `H = 0`; both parameters are unknowns.
pub fn codim2_system(kind: CurveKind, map: &BoundedMap) -> Result<DefiningSystem> {
    let base = make_defining_system(kind, map)?;
    if !matches!(kind, CurveKind::Fold | CurveKind::Flip | CurveKind::Ns) {
        return Err(Error::NotSupported(format!("codimension-two system for {kind}")));
    }
    let m = map.clone();
    let b = base.clone();
    let n = map.dim();
    let mut sys = DefiningSystem::new(kind, base.n_y, base.n_eq + 1, move |y, a| {
        let r = b.residual(y, a)?;
        let h = m.boundary(&y.rows(0, n).into_owned(), a)?;
        let mut out = DVector::zeros(r.len() + 1);
        out.rows_mut(0, r.len()).copy_from(&r);
        out[r.len()] = h;
        Ok(out)
    })
    .with_labels(base.labels.clone())
    .with_fd_step(base.fd_step);
    sys.monitors = base.monitors.clone();
    sys.h_monitor = base.h_monitor;
    Ok(sys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::{continue_curve, detect_special_points, join_x, newton_solve, ContinuationOptions};

    fn fold_nf() -> BoundedMap {
        BoundedMap::new(
            "fold",
            1,
            |z, b| Ok(DVector::from_element(1, b[0] + z[0] + z[0] * z[0])),
            |z, b| Ok(z[0] - b[1]),
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

    #[test]
    fn scalar_fold_system_has_two_equations() {
        let s = make_defining_system(CurveKind::Fold, &fold_nf()).unwrap();
        assert_eq!((s.n_y, s.n_eq), (1, 2));
        let r = s.residual(&DVector::from_element(1, 0.0), &[0.0, 0.3]).unwrap();
        assert!(r.norm() < 1e-14);
    }

    #[test]
    fn bc_fixed_traces_parabola() {
        let m = fold_nf();
        let s = make_defining_system(CurveKind::BcFixed, &m).unwrap();
        // start on v = beta2 = 0.05, beta1 = -0.0025
        let x0 = join_x(&DVector::from_element(1, 0.05), &[-0.0025, 0.05]);
        let opts = ContinuationOptions { steps: 60, h0: 1e-3, h_max: 5e-3, ..Default::default() };
        let c = continue_curve(&s, &x0, Some(&DVector::from_vec(vec![-1.0, 0.0, -1.0])), &opts).unwrap();
        assert!(c.points.len() > 20);
        for p in &c.points {
            assert!((p.alpha[0] + p.alpha[1] * p.alpha[1]).abs() < 1e-8);
        }
        // fold test f_u - 1 = 2 v changes sign at v = 0
        let sp = detect_special_points(&s, &c, 0);
        assert_eq!(sp.len(), 1);
        assert!(sp[0].alpha[1].abs() < 1e-10);
    }

    #[test]
    fn fold_curve_is_vertical_line() {
        let m = fold_nf();
        let s = make_defining_system(CurveKind::Fold, &m).unwrap();
        let x0 = join_x(&DVector::from_element(1, 0.0), &[0.0, -0.02]);
        let opts = ContinuationOptions { steps: 30, h0: 2e-3, h_max: 5e-3, ..Default::default() };
        let c = continue_curve(&s, &x0, Some(&DVector::from_vec(vec![0.0, 0.0, 1.0])), &opts).unwrap();
        for p in &c.points {
            assert!(p.alpha[0].abs() < 1e-8);
        }
        let h = s.h_monitor.unwrap();
        let sp = detect_special_points(&s, &c, h);
        assert_eq!(sp.len(), 1);
        assert!(sp[0].alpha[1].abs() < 1e-10);
        assert!(c.points.iter().any(|p| p.is_virtual));
    }

    #[test]
    fn period_two_collision_of_flip_map() {
        let m = flip_nf();
        let s = make_defining_system(CurveKind::BcPeriod2, &m).unwrap();
        let (y, a) = newton_solve(&s, &DVector::from_element(1, 0.09), &[0.01, 0.09], &[1]).unwrap();
        assert!((y[0] - 0.1).abs() < 1e-9);
        assert!((a[1] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn codim2_fold_point_at_origin() {
        let m = fold_nf();
        let s = codim2_system(CurveKind::Fold, &m).unwrap();
        let (y, a) = newton_solve(&s, &DVector::from_element(1, 0.01), &[0.001, -0.01], &[0, 1]).unwrap();
        assert!(y[0].abs() < 1e-9 && a[0].abs() < 1e-9 && a[1].abs() < 1e-9);
    }
}
