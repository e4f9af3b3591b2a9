//! Codimension-two analysis at points where a smooth bifurcation (fold, flip,
//! Neimark-Sacker) of a fixed point coincides with a border collision.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::bounded_map::{BoundedMap, DerivativeBundle, Params};
use crate::continuation::systems::{codim2_system, eigen_seed, make_defining_system, ns_growth_of};
use crate::continuation::{join_x, newton_solve, split_x, CurveKind, DefiningSystem, NEWTON_TOL};
use crate::error::{Error, Result};

mod geometry;

pub use geometry::{
    annulus_check, torus_grazing_estimate, trace_grazing_curve, verify_tangency, AnnulusReport, AnnulusSpec,
    GrazingEstimate, GrazingTrace, TangencyFit, TangencyOptions,
};

pub const EIG_TOL: f64 = 1e-6;
pub const DEGENERATE_TOL: f64 = 1e-8;
const RESONANCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Fold,
    Flip,
    Ns,
}

impl Case {
    pub fn kind(self) -> CurveKind {
        match self {
            Case::Fold => CurveKind::Fold,
            Case::Flip => CurveKind::Flip,
            Case::Ns => CurveKind::Ns,
        }
    }

    pub fn parse(s: &str) -> Option<Case> {
        match s.to_ascii_lowercase().as_str() {
            "fold" => Some(Case::Fold),
            "flip" => Some(Case::Flip),
            "ns" | "neimark-sacker" => Some(Case::Ns),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Case::Fold => "fold",
            Case::Flip => "flip",
            Case::Ns => "ns",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CriticalEigendata {
    pub case: Case,
    pub z: DVector<f64>,
    pub alpha: Params,
    pub lambda: Complex64,
    /// Right eigenvector. Real and unit for fold/flip; for NS scaled so that
    /// `conj(q)^T q = 1/2` with `Re(q)^T Im(q) = 0`.
    pub q: DVector<Complex64>,
    /// Adjoint eigenvector with `conj(p)^T q = 1`.
    pub p: DVector<Complex64>,
    pub theta: f64,
    pub g: f64,
    pub g_alpha: Option<[f64; 2]>,
    pub theta_alpha: Option<[f64; 2]>,
}

impl CriticalEigendata {
    pub fn q_re(&self) -> DVector<f64> {
        self.q.map(|c| c.re)
    }

    pub fn p_re(&self) -> DVector<f64> {
        self.p.map(|c| c.re)
    }
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

fn real_null(m: &DMatrix<f64>) -> DVector<f64> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    vt.row(svd.singular_values.imin()).transpose()
}

fn complex_null(m: &DMatrix<Complex64>) -> DVector<Complex64> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    vt.row(svd.singular_values.imin()).transpose().map(|c| c.conj())
}

fn largest(v: &DVector<f64>) -> usize {
    v.iamax()
}

/// `<p, x> = conj(p)^T x`.
fn inner(p: &DVector<Complex64>, x: &DVector<Complex64>) -> Complex64 {
    p.dotc(x)
}

fn cvec(v: &DVector<f64>) -> DVector<Complex64> {
    v.map(|x| Complex64::new(x, 0.0))
}

/// Fixes the phase and scale of an NS eigenvector.
fn normalize_ns(q: DVector<Complex64>) -> DVector<Complex64> {
    let n2 = q.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let mut q = q / Complex64::new((2.0 * n2).sqrt(), 0.0);
    let qq: Complex64 = q.iter().map(|c| c * c).sum();
    if qq.norm() < 1e-8 * 0.5 {
        // circular case: any phase satisfies the orthogonality, make the
        // largest component real positive
        let mags = q.map(|c| c.norm());
        let top = mags.max();
        let k = mags.iter().position(|m| *m >= top * (1.0 - 1e-9)).unwrap_or(0);
        let ph = q[k] / q[k].norm();
        q /= ph;
    } else {
        let psi = -qq.arg() / 2.0;
        q *= Complex64::from_polar(1.0, psi);
        let re = q.map(|c| c.re);
        if re[largest(&re)] < 0.0 {
            q = -q;
        }
    }
    q
}

/// Eigendata of the critical multiplier at a fixed point.
pub fn critical_eigendata(map: &BoundedMap, z: &DVector<f64>, alpha: &Params, case: Case) -> Result<CriticalEigendata> {
    let n = map.dim();
    let fz = map.eval_ext(z, alpha)?;
    let res = (&fz - z).norm();
    if res > 1e-9 * (1.0 + z.norm()) {
        return Err(Error::InitialPointInvalid { residual: res });
    }
    let a = map.jacobian(z, alpha)?;
    let ev = a.complex_eigenvalues();
    let id = DMatrix::<f64>::identity(n, n);
    match case {
        Case::Fold | Case::Flip => {
            let c = if case == Case::Fold { 1.0 } else { -1.0 };
            let dist: Vec<f64> = ev.iter().map(|l| (l - Complex64::new(c, 0.0)).norm()).collect();
            let close = dist.iter().filter(|d| **d < EIG_TOL).count();
            let dmin = dist.iter().cloned().fold(f64::INFINITY, f64::min);
            if close == 0 {
                return Err(Error::NotCritical { distance: dmin });
            }
            if close > 1 {
                return Err(Error::MultipleCritical(format!("{close} multipliers within {EIG_TOL:e} of {c}")));
            }
            let k = dist.iter().enumerate().min_by(|x, y| x.1.partial_cmp(y.1).unwrap()).unwrap().0;
            let mut q = real_null(&(&a - &id * c));
            q /= q.norm();
            if q[largest(&q)] < 0.0 {
                q = -q;
            }
            let mut p = real_null(&(a.transpose() - &id * c));
            p /= p.dot(&q);
            Ok(CriticalEigendata {
                case,
                z: z.clone(),
                alpha: *alpha,
                lambda: Complex64::new(ev[k].re, 0.0),
                q: cvec(&q),
                p: cvec(&p),
                theta: if case == Case::Fold { 0.0 } else { PI },
                g: 0.0,
                g_alpha: None,
                theta_alpha: None,
            })
        }
        Case::Ns => {
            let crit: Vec<Complex64> = ev.iter().filter(|l| (l.norm() - 1.0).abs() < EIG_TOL).cloned().collect();
            if crit.is_empty() {
                let dmin = ev.iter().map(|l| (l.norm() - 1.0).abs()).fold(f64::INFINITY, f64::min);
                return Err(Error::NotCritical { distance: dmin });
            }
            if crit.iter().any(|l| l.im.abs() <= RESONANCE_TOL) {
                return Err(Error::MultipleCritical("real multiplier on the unit circle (theta in {0, pi})".into()));
            }
            let upper: Vec<Complex64> = crit.iter().filter(|l| l.im > 0.0).cloned().collect();
            if upper.len() != 1 {
                return Err(Error::MultipleCritical(format!("{} complex pairs on the unit circle", upper.len())));
            }
            let lambda = upper[0];
            let theta = lambda.arg();
            for k in 1..=4 {
                let e = (Complex64::from_polar(1.0, k as f64 * theta) - 1.0).norm();
                if e < RESONANCE_TOL {
                    return Err(Error::MultipleCritical(format!("strong resonance e^(i{k}theta) = 1, theta = {theta}")));
                }
            }
            let ac = to_complex(&a);
            let idc = DMatrix::<Complex64>::identity(n, n);
            let q = normalize_ns(complex_null(&(&ac - &idc * lambda)));
            let p0 = complex_null(&(ac.transpose() - &idc * lambda.conj()));
            let c = inner(&p0, &q);
            let p = p0 / c.conj();

            // parameter gradients of the multiplier along the fixed-point branch
            let bundle = map.derivatives(z, alpha, 2)?;
            let (qr, qi) = (q.map(|c| c.re), q.map(|c| c.im));
            let mut g_alpha = [0.0; 2];
            let mut theta_alpha = [0.0; 2];
            for j in 0..2 {
                let zs = fixed_point_shift(&bundle, j)?;
                let mixed = crate::bounded_map::join(&bundle.mixed(&qr, j)?, &bundle.mixed(&qi, j)?);
                let bq = bundle.bilinear_c(&q, &cvec(&zs))?;
                let dl = inner(&p, &(mixed + bq));
                let ld = lambda.conj() * dl;
                g_alpha[j] = ld.re / lambda.norm();
                theta_alpha[j] = ld.im / lambda.norm_sqr();
            }
            Ok(CriticalEigendata {
                case,
                z: z.clone(),
                alpha: *alpha,
                lambda,
                q,
                p,
                theta,
                g: lambda.norm() - 1.0,
                g_alpha: Some(g_alpha),
                theta_alpha: Some(theta_alpha),
            })
        }
    }
}

/// `dz*/dalpha_j = -(A - I)^{-1} F_alpha_j`.
fn fixed_point_shift(b: &DerivativeBundle, j: usize) -> Result<DVector<f64>> {
    let n = b.dim();
    let m = &b.a - DMatrix::identity(n, n);
    let rhs = -b.f_alpha.column(j).into_owned();
    m.lu().solve(&rhs).ok_or(Error::SingularJacobian { condition: f64::INFINITY })
}

/// Derivatives of the map and boundary restricted to the centre manifold.
#[derive(Debug, Clone, Serialize)]
pub struct Reduced {
    pub f_u: f64,
    pub f_uu: f64,
    pub f_uuu: f64,
    pub f_alpha: [f64; 2],
    pub f_ualpha: [f64; 2],
    /// `H_z q`; for NS the real and imaginary parts of `H_z q`.
    pub h_u: [f64; 2],
    pub h_alpha: [f64; 2],
    pub g_alpha: [f64; 2],
    pub grad_beta1: [f64; 2],
    pub grad_beta2: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalFormRecord {
    pub case: Case,
    pub s: f64,
    /// Fold: `f_uu / 2`. NS: first Lyapunov coefficient.
    pub a0: f64,
    /// Flip cubic coefficient.
    pub c0: f64,
    pub theta: f64,
    pub reduced: Reduced,
}

fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn nf_raw(map: &BoundedMap, eig: &CriticalEigendata) -> Result<NormalFormRecord> {
    let n = map.dim();
    let b = map.derivatives(&eig.z, &eig.alpha, 3)?;
    let id = DMatrix::<f64>::identity(n, n);
    match eig.case {
        Case::Fold => {
            let q = eig.q_re();
            let p = eig.p_re();
            let bqq = b.bilinear(&q, &q)?;
            let f_uu = p.dot(&bqq);
            let a0 = 0.5 * f_uu;
            let mut f_alpha = [0.0; 2];
            let mut f_ualpha = [0.0; 2];
            let mut h_alpha = [0.0; 2];
            // bordered solve for the parameter part of the centre manifold
            let mut bord = DMatrix::zeros(n + 1, n + 1);
            bord.view_mut((0, 0), (n, n)).copy_from(&(&b.a - &id));
            bord.view_mut((0, n), (n, 1)).copy_from(&q);
            bord.view_mut((n, 0), (1, n)).copy_from(&p.transpose());
            let lu = bord.lu();
            for j in 0..2 {
                let fa = b.f_alpha.column(j).into_owned();
                f_alpha[j] = p.dot(&fa);
                let mut rhs = DVector::zeros(n + 1);
                rhs.rows_mut(0, n).copy_from(&(&q * f_alpha[j] - &fa));
                let sol = lu.solve(&rhs).ok_or(Error::SingularJacobian { condition: f64::INFINITY })?;
                let w = sol.rows(0, n).into_owned();
                f_ualpha[j] = p.dot(&(b.mixed(&q, j)? + b.bilinear(&q, &w)?));
                h_alpha[j] = b.h_alpha[j] + b.h_z.dot(&w);
            }
            let abs_a = a0.abs();
            let grad_beta1 = [abs_a * f_alpha[0], abs_a * f_alpha[1]];
            let grad_beta2 = [-abs_a * f_alpha[1], abs_a * f_alpha[0]];
            Ok(NormalFormRecord {
                case: Case::Fold,
                s: sign(f_uu),
                a0,
                c0: 0.0,
                theta: 0.0,
                reduced: Reduced {
                    f_u: 1.0,
                    f_uu,
                    f_uuu: 0.0,
                    f_alpha,
                    f_ualpha,
                    h_u: [b.h_z.dot(&q), 0.0],
                    h_alpha,
                    g_alpha: [0.0; 2],
                    grad_beta1,
                    grad_beta2,
                },
            })
        }
        Case::Flip => {
            let q = eig.q_re();
            let p = eig.p_re();
            let bqq = b.bilinear(&q, &q)?;
            let f_uu = p.dot(&bqq);
            let am = &b.a - &id;
            let h2 = am
                .clone()
                .lu()
                .solve(&(&q * f_uu - &bqq))
                .ok_or(Error::SingularJacobian { condition: f64::INFINITY })?;
            let f_uuu = p.dot(&b.trilinear(&q, &q, &q)?) + 3.0 * p.dot(&b.bilinear(&q, &h2)?);
            let c0 = 0.25 * f_uu * f_uu + f_uuu / 6.0;
            let mut f_ualpha = [0.0; 2];
            let mut h_alpha = [0.0; 2];
            for j in 0..2 {
                let zs = fixed_point_shift(&b, j)?;
                f_ualpha[j] = p.dot(&(b.mixed(&q, j)? + b.bilinear(&q, &zs)?));
                h_alpha[j] = b.h_alpha[j] + b.h_z.dot(&zs);
            }
            // f_u = -(1 + g)
            let g_alpha = [-f_ualpha[0], -f_ualpha[1]];
            Ok(NormalFormRecord {
                case: Case::Flip,
                s: sign(c0),
                a0: 0.0,
                c0,
                theta: PI,
                reduced: Reduced {
                    f_u: -1.0,
                    f_uu,
                    f_uuu,
                    f_alpha: [0.0; 2],
                    f_ualpha,
                    h_u: [b.h_z.dot(&q), 0.0],
                    h_alpha,
                    g_alpha,
                    grad_beta1: g_alpha,
                    grad_beta2: h_alpha,
                },
            })
        }
        Case::Ns => {
            let q = &eig.q;
            let p = &eig.p;
            let qb = q.map(|c| c.conj());
            let lambda = eig.lambda;
            let ac = to_complex(&b.a);
            let idc = DMatrix::<Complex64>::identity(n, n);
            let fail = || Error::SingularJacobian { condition: f64::INFINITY };
            let h11 = (&idc - &ac).lu().solve(&b.bilinear_c(q, &qb)?).ok_or_else(fail)?;
            let h20 = (&idc * (lambda * lambda) - &ac).lu().solve(&b.bilinear_c(q, q)?).ok_or_else(fail)?;
            let sum = b.trilinear_c(q, q, &qb)? + b.bilinear_c(q, &h11)? * Complex64::new(2.0, 0.0) + b.bilinear_c(&qb, &h20)?;
            let e = Complex64::from_polar(1.0, -eig.theta);
            let a0 = 0.5 * (e * inner(p, &sum)).re;
            let mut h_alpha = [0.0; 2];
            for j in 0..2 {
                let zs = fixed_point_shift(&b, j)?;
                h_alpha[j] = b.h_alpha[j] + b.h_z.dot(&zs);
            }
            let hq = cvec(&b.h_z).dot(q);
            let g_alpha = eig.g_alpha.unwrap_or([0.0; 2]);
            Ok(NormalFormRecord {
                case: Case::Ns,
                s: sign(a0),
                a0,
                c0: 0.0,
                theta: eig.theta,
                reduced: Reduced {
                    f_u: lambda.norm(),
                    f_uu: 0.0,
                    f_uuu: 0.0,
                    f_alpha: [0.0; 2],
                    f_ualpha: [0.0; 2],
                    h_u: [hq.re, hq.im],
                    h_alpha,
                    g_alpha,
                    grad_beta1: g_alpha,
                    grad_beta2: h_alpha,
                },
            })
        }
    }
}

fn nf_degeneracy(nf: &NormalFormRecord) -> (&'static str, f64) {
    match nf.case {
        Case::Fold => ("a0", nf.a0),
        Case::Flip => ("c0", nf.c0),
        Case::Ns => ("first Lyapunov coefficient", nf.a0),
    }
}

/// Normal-form coefficients at a critical point.
pub fn nf_coefficients(map: &BoundedMap, eig: &CriticalEigendata) -> Result<NormalFormRecord> {
    let nf = nf_raw(map, eig)?;
    let (what, value) = nf_degeneracy(&nf);
    if !(value.abs() >= DEGENERATE_TOL) {
        return Err(Error::DegenerateNF { what: what.into(), value });
    }
    Ok(nf)
}

/// Brute-force estimate of the NS radial coefficient: `rho'/rho - |lambda|`
/// averaged over the angle and fitted against `rho^2`.
pub fn lyapunov_radial_fit(map: &BoundedMap, eig: &CriticalEigendata) -> Result<f64> {
    if eig.case != Case::Ns {
        return Err(Error::NotSupported("radial fit outside the NS case".into()));
    }
    let scale = eig.z.norm().max(1.0);
    let radii = [0.01, 0.015, 0.02, 0.025, 0.03].map(|r| r * scale);
    let n_ang = 64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &r in &radii {
        let mut acc = 0.0;
        for k in 0..n_ang {
            let phi = 2.0 * PI * k as f64 / n_ang as f64;
            let w = Complex64::from_polar(r, phi);
            let dz = eig.q.map(|c| 2.0 * (c * w).re);
            let z1 = map.eval_ext(&(&eig.z + dz), &eig.alpha)?;
            let w1 = inner(&eig.p, &cvec(&(z1 - &eig.z)));
            acc += w1.norm() / r - eig.lambda.norm();
        }
        xs.push(r * r);
        ys.push(acc / n_ang as f64);
    }
    let m = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx = xs.iter().map(|x| x * x).sum::<f64>();
    let sxy = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>();
    Ok((m * sxy - sx * sy) / (m * sxx - sx * sx))
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaRecord {
    pub sigma_beta1: f64,
    pub sigma_beta2: f64,
    pub phi_h: Option<f64>,
    pub u_v: f64,
    pub u_beta2: f64,
    pub alpha_beta1: [f64; 2],
    pub alpha_beta2: [f64; 2],
}

fn inv2(m: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let d = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    Some([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn transversality(nf: &NormalFormRecord) -> f64 {
    let h = nf.reduced.h_u;
    match nf.case {
        Case::Ns => h[0].hypot(h[1]),
        _ => h[0].abs(),
    }
}

/// Derivatives `alpha_beta` of the inverse parameter change.
fn alpha_beta(nf: &NormalFormRecord) -> Result<([f64; 2], [f64; 2])> {
    let r = &nf.reduced;
    let inv = inv2([r.grad_beta1, r.grad_beta2]).ok_or_else(|| Error::TransversalityFailure {
        what: "parameter change alpha -> beta".into(),
        value: 0.0,
    })?;
    Ok(([inv[0][0], inv[1][0]], [inv[0][1], inv[1][1]]))
}

fn sigma_raw(nf: &NormalFormRecord) -> Result<SigmaRecord> {
    let r = &nf.reduced;
    let (ab1, ab2) = alpha_beta(nf)?;
    match nf.case {
        Case::Fold => {
            let u_v = 2.0 / r.f_uu.abs();
            let delta = [r.f_ualpha[0] / r.f_uu, r.f_ualpha[1] / r.f_uu];
            let u_b1 = -dot2(delta, ab1);
            let u_b2 = -dot2(delta, ab2);
            let hu = r.h_u[0];
            let s1 = -(hu * u_b1 + dot2(r.h_alpha, ab1)) / (hu * u_v);
            let s2 = -(hu * u_b2 + dot2(r.h_alpha, ab2)) / (hu * u_v);
            Ok(SigmaRecord {
                sigma_beta1: s1,
                sigma_beta2: s2,
                phi_h: None,
                u_v,
                u_beta2: u_b2,
                alpha_beta1: ab1,
                alpha_beta2: ab2,
            })
        }
        Case::Flip => {
            let u_v = 1.0 / nf.c0.abs().sqrt();
            let hu = r.h_u[0];
            Ok(SigmaRecord {
                sigma_beta1: -dot2(r.h_alpha, ab1) / (hu * u_v),
                sigma_beta2: -dot2(r.h_alpha, ab2) / (hu * u_v),
                phi_h: None,
                u_v,
                u_beta2: 0.0,
                alpha_beta1: ab1,
                alpha_beta2: ab2,
            })
        }
        Case::Ns => {
            let hq = Complex64::new(r.h_u[0], r.h_u[1]);
            let mut phi = (-hq.im).atan2(hq.re);
            if phi < 0.0 {
                phi += 2.0 * PI;
            }
            let den = 2.0 * (hq * Complex64::from_polar(1.0, phi)).re;
            Ok(SigmaRecord {
                sigma_beta1: -dot2(r.h_alpha, ab1) / den,
                sigma_beta2: -dot2(r.h_alpha, ab2) / den,
                phi_h: Some(phi),
                u_v: 1.0,
                u_beta2: 0.0,
                alpha_beta1: ab1,
                alpha_beta2: ab2,
            })
        }
    }
}

/// Boundary coefficients of the border-collision expansion `v = sigma(beta)`.
pub fn sigma_coefficients(_map: &BoundedMap, _eig: &CriticalEigendata, nf: &NormalFormRecord) -> Result<SigmaRecord> {
    let t = transversality(nf);
    if !(t >= DEGENERATE_TOL) {
        return Err(Error::TransversalityFailure { what: "h_u q".into(), value: t });
    }
    sigma_raw(nf)
}

/// Finite-difference value of `d sigma / d beta2`: moves along the smooth
/// bifurcation curve to `beta2 = +-eps` and intersects the boundary with the
/// critical direction.
pub fn sigma_fd_oracle(
    map: &BoundedMap,
    eig: &CriticalEigendata,
    nf: &NormalFormRecord,
    sigma: &SigmaRecord,
    eps: f64,
) -> Result<f64> {
    let n = map.dim();
    let base = make_defining_system(eig.case.kind(), map)?;
    let alpha0 = eig.alpha;
    let grad2 = nf.reduced.grad_beta2;
    let y0 = eigen_seed(eig.case.kind(), map, &eig.z, &eig.alpha)?;
    let mut vals = [0.0; 2];
    for (k, off) in [eps, -eps].into_iter().enumerate() {
        let m = map.clone();
        let b = base.clone();
        let case = eig.case;
        let sys = DefiningSystem::new(base.kind, base.n_y, base.n_eq + 1, move |y, a| {
            let r = b.residual(y, a)?;
            let extra = match case {
                // the fold parameter change is linear in alpha
                Case::Fold => grad2[0] * (a[0] - alpha0[0]) + grad2[1] * (a[1] - alpha0[1]),
                _ => m.boundary(&y.rows(0, n).into_owned(), a)?,
            } - off;
            let mut out = DVector::zeros(r.len() + 1);
            out.rows_mut(0, r.len()).copy_from(&r);
            out[r.len()] = extra;
            Ok(out)
        })
        .with_fd_step(base.fd_step);
        let (y, a) = newton_solve(&sys, &y0, &alpha0, &[0, 1])?;
        let z = y.rows(0, n).into_owned();
        let dir = match eig.case {
            Case::Ns => {
                let w = Complex64::from_polar(1.0, sigma.phi_h.unwrap_or(0.0));
                eig.q.map(|c| 2.0 * (c * w).re)
            }
            _ => eig.q_re(),
        };
        let s = boundary_root(map, &z, &dir, &a)?;
        vals[k] = s / sigma.u_v;
    }
    Ok((vals[0] - vals[1]) / (2.0 * eps))
}

/// Root `s` of `H(z + s dir, alpha) = 0` by secant iteration.
fn boundary_root(map: &BoundedMap, z: &DVector<f64>, dir: &DVector<f64>, alpha: &Params) -> Result<f64> {
    let h = |s: f64| map.boundary(&(z + dir * s), alpha);
    let mut s0 = 0.0;
    let mut h0 = h(s0)?;
    let mut s1 = 1e-3;
    let mut h1 = h(s1)?;
    for _ in 0..60 {
        if h1 == h0 {
            break;
        }
        let s2 = s1 - h1 * (s1 - s0) / (h1 - h0);
        s0 = s1;
        h0 = h1;
        s1 = s2;
        h1 = h(s1)?;
        if h1.abs() < 1e-15 || (s1 - s0).abs() < 1e-15 {
            break;
        }
    }
    if h1.abs() > 1e-10 {
        return Err(Error::NoConvergence { iterations: 60, residual: h1.abs() });
    }
    Ok(s1)
}

#[derive(Debug, Clone, Serialize)]
pub struct Determinants {
    pub full: f64,
    pub reduced: Option<f64>,
}

fn ns_g(map: &BoundedMap, z: &DVector<f64>, alpha: &Params) -> Result<f64> {
    Ok(ns_growth_of(&map.jacobian(z, alpha)?)?.0)
}

/// Genericity determinants: the bordered matrix of the defining system and
/// its centre-manifold reduction.
pub fn genericity_determinant(map: &BoundedMap, z: &DVector<f64>, alpha: &Params, case: Case) -> Result<Determinants> {
    let n = map.dim();
    let b = map.derivatives(z, alpha, 2)?;
    let id = DMatrix::<f64>::identity(n, n);
    let eig = critical_eigendata(map, z, alpha, case)?;
    let nf = nf_raw(map, &eig)?;
    let r = &nf.reduced;
    match case {
        Case::Fold | Case::Flip => {
            let nu = eig.q_re();
            let c = if case == Case::Fold { 1.0 } else { -1.0 };
            let am = &b.a - &id;
            let ac = &b.a - &id * c;
            let m = 2 * n + 2;
            let mut j = DMatrix::zeros(m, m);
            j.view_mut((0, 0), (n, n)).copy_from(&am);
            j.view_mut((0, 2 * n), (n, 2)).copy_from(&b.f_alpha);
            j.view_mut((n, 0), (n, n)).copy_from(&b.bilinear_matrix(&nu)?);
            j.view_mut((n, n), (n, n)).copy_from(&ac);
            for k in 0..2 {
                j.view_mut((n, 2 * n + k), (n, 1)).copy_from(&b.mixed(&nu, k)?);
            }
            j.view_mut((2 * n, n), (1, n)).copy_from(&(nu.transpose() * 2.0));
            j.view_mut((2 * n + 1, 0), (1, n)).copy_from(&b.h_z.transpose());
            j[(2 * n + 1, 2 * n)] = b.h_alpha[0];
            j[(2 * n + 1, 2 * n + 1)] = b.h_alpha[1];
            let reduced = DMatrix::from_row_slice(
                3,
                3,
                &[
                    r.f_u - 1.0,
                    r.f_alpha[0],
                    r.f_alpha[1],
                    r.f_uu,
                    r.f_ualpha[0],
                    r.f_ualpha[1],
                    r.h_u[0],
                    r.h_alpha[0],
                    r.h_alpha[1],
                ],
            )
            .determinant();
            Ok(Determinants { full: j.determinant(), reduced: Some(reduced) })
        }
        Case::Ns => {
            let m = n + 2;
            let mut j = DMatrix::zeros(m, m);
            j.view_mut((0, 0), (n, n)).copy_from(&(&b.a - &id));
            j.view_mut((0, n), (n, 2)).copy_from(&b.f_alpha);
            let hs = 1e-5 * z.norm().max(1.0);
            for i in 0..n {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += hs;
                zm[i] -= hs;
                j[(n, i)] = (ns_g(map, &zp, alpha)? - ns_g(map, &zm, alpha)?) / (2.0 * hs);
            }
            for k in 0..2 {
                let mut ap = *alpha;
                let mut am = *alpha;
                ap[k] += hs;
                am[k] -= hs;
                j[(n, n + k)] = (ns_g(map, z, &ap)? - ns_g(map, z, &am)?) / (2.0 * hs);
            }
            j.view_mut((n + 1, 0), (1, n)).copy_from(&b.h_z.transpose());
            j[(n + 1, n)] = b.h_alpha[0];
            j[(n + 1, n + 1)] = b.h_alpha[1];
            // restricted form is block triangular: det(A_c - I) det[g_alpha; h_alpha]
            let l1 = (eig.lambda - 1.0).norm_sqr();
            let reduced = l1 * (r.g_alpha[0] * r.h_alpha[1] - r.g_alpha[1] * r.h_alpha[0]);
            Ok(Determinants { full: j.determinant(), reduced: Some(reduced) })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Asymptote {
    /// `beta1 = kappa beta2^2` in normal-form parameters.
    pub kappa: f64,
    /// Unit tangent of the smooth bifurcation curve in the alpha-plane.
    pub tangent: [f64; 2],
    /// Unit normal pointing towards increasing `beta1`.
    pub normal: [f64; 2],
    /// Normal offset of the secondary curve from the primary one,
    /// `kappa_alpha * tau^2`, with `tau` the arclength along `tangent`.
    pub kappa_alpha: f64,
}

/// Predicted border-collision asymptote.
pub fn predict_asymptote(nf: &NormalFormRecord, sigma: &SigmaRecord) -> Result<Asymptote> {
    let s2 = sigma.sigma_beta2;
    if !(s2.abs() >= DEGENERATE_TOL) {
        return Err(Error::TransversalityFailure { what: "sigma_beta2".into(), value: s2 });
    }
    let kappa = match nf.case {
        Case::Fold => -nf.s * s2 * s2,
        Case::Flip => nf.s * s2 * s2,
        Case::Ns => -nf.a0 * s2 * s2,
    };
    let g1 = nf.reduced.grad_beta1;
    let gn = g1[0].hypot(g1[1]);
    let ab2 = sigma.alpha_beta2;
    let tn = ab2[0].hypot(ab2[1]);
    Ok(Asymptote {
        kappa,
        tangent: [ab2[0] / tn, ab2[1] / tn],
        normal: [g1[0] / gn, g1[1] / gn],
        kappa_alpha: kappa / (gn * tn * tn),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Codim2Record {
    pub case: Case,
    pub alpha: Params,
    pub z: Vec<f64>,
    pub residual: f64,
    pub multiplier: [f64; 2],
    pub theta: f64,
    pub s: f64,
    pub a0: f64,
    pub c0: f64,
    pub sigma: Option<SigmaRecord>,
    pub determinants: Determinants,
    pub asymptote: Option<Asymptote>,
    pub reduced: Reduced,
    pub lyapunov_radial_fit: Option<f64>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub tangency: Option<TangencyFit>,
}

impl Codim2Record {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Gauss-Newton with a truncated pseudo-inverse; converges onto the solution
/// set even where the defining system is singular.
fn refine_lstsq(sys: &DefiningSystem, x0: DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let mut x = x0;
    let mut g = sys.residual_x(&x)?;
    let mut gn = g.norm();
    for it in 0..60 {
        if gn <= NEWTON_TOL * 1e-2 {
            break;
        }
        let j = sys.jacobian_x(&x)?;
        let svd = j.svd(true, true);
        let smax = svd.singular_values.max();
        let dx = svd.solve(&(-&g), 1e-12 * smax.max(1e-300)).map_err(|e| Error::NotSupported(e.into()))?;
        let mut lam = 1.0;
        let mut done = false;
        for _ in 0..10 {
            let trial = &x + &dx * lam;
            if let Ok(gt) = sys.residual_x(&trial) {
                if gt.norm() < gn {
                    x = trial;
                    g = gt;
                    gn = g.norm();
                    done = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !done {
            break;
        }
        if dx.norm() * lam < 1e-15 * x.norm().max(1.0) && it > 2 {
            break;
        }
    }
    if gn > NEWTON_TOL {
        return Err(Error::NoConvergence { iterations: 60, residual: gn });
    }
    Ok((x, gn))
}

/// Refines an approximate codimension-two point of type `case`.
pub fn refine_codim2_point(map: &BoundedMap, case: Case, z: &DVector<f64>, alpha: &Params) -> Result<(DVector<f64>, Params, f64)> {
    let sys = codim2_system(case.kind(), map)?;
    let y0 = eigen_seed(case.kind(), map, z, alpha)?;
    let (x, res) = refine_lstsq(&sys, join_x(&y0, alpha))?;
    let (y, a) = split_x(&x, sys.n_y);
    Ok((y.rows(0, map.dim()).into_owned(), a, res))
}

/// Full analysis of a codimension-two point.
pub fn analyze_codim2(map: &BoundedMap, case: Case, z: &DVector<f64>, alpha: &Params) -> Result<Codim2Record> {
    let (z, alpha, residual) = refine_codim2_point(map, case, z, alpha)?;
    let eig = critical_eigendata(map, &z, &alpha, case)?;
    let nf = nf_raw(map, &eig)?;
    let mut checks = Vec::new();
    let mut warnings = Vec::new();
    let (what, value) = nf_degeneracy(&nf);
    checks.push(Check { name: format!("nondegenerate {what}"), value, pass: value.abs() >= DEGENERATE_TOL });
    if let Some(ga) = eig.g_alpha {
        let v = ga[0].hypot(ga[1]);
        checks.push(Check { name: "transversal multiplier crossing".into(), value: v, pass: v >= DEGENERATE_TOL });
    }
    let t = transversality(&nf);
    checks.push(Check { name: "boundary transversal to critical direction".into(), value: t, pass: t >= DEGENERATE_TOL });
    let det = genericity_determinant(map, &z, &alpha, case)?;
    let dr = det.reduced.unwrap_or(det.full);
    checks.push(Check { name: "reduced determinant".into(), value: dr, pass: dr.abs() >= DEGENERATE_TOL });
    checks.push(Check { name: "bordered determinant".into(), value: det.full, pass: det.full.abs() >= DEGENERATE_TOL });
    let sigma = if t >= DEGENERATE_TOL { sigma_raw(&nf).ok() } else { None };
    let asymptote = match &sigma {
        Some(s) if value.abs() >= DEGENERATE_TOL => predict_asymptote(&nf, s).ok(),
        _ => None,
    };
    let lyap = if case == Case::Ns {
        let fit = lyapunov_radial_fit(map, &eig).ok();
        if let Some(f) = fit {
            if (f - nf.a0).abs() > 0.1 * nf.a0.abs() {
                warnings.push(format!("radial fit of the Lyapunov coefficient gives {f:.4e}, projection gives {:.4e}", nf.a0));
            }
        }
        fit
    } else {
        None
    };
    Ok(Codim2Record {
        case,
        alpha,
        z: z.iter().cloned().collect(),
        residual,
        multiplier: [eig.lambda.re, eig.lambda.im],
        theta: eig.theta,
        s: nf.s,
        a0: nf.a0,
        c0: nf.c0,
        sigma,
        determinants: det,
        asymptote,
        reduced: nf.reduced,
        lyapunov_radial_fit: lyap,
        checks,
        warnings,
        tangency: None,
    })
}

/// Starting point `X = (y, alpha)` on the border-collision curve of the
/// period-two cycle born at a border-flip point, at signed distance `tau`
/// along the flip curve. The asymptote supplies the initial guess, which is
/// then corrected on the normal line through `alpha_c + tau * tangent`.
pub fn period2_bc_seed(map: &BoundedMap, rec: &Codim2Record, tau: f64) -> Result<DVector<f64>> {
    if rec.case != Case::Flip {
        return Err(Error::NotSupported(format!("period-two seed at a {} point", rec.case.name())));
    }
    let asym = rec.asymptote.as_ref().ok_or(Error::TransversalityFailure { what: "asymptote".into(), value: 0.0 })?;
    let n = map.dim();
    let at = |s: f64| -> Params {
        [
            rec.alpha[0] + tau * asym.tangent[0] + s * asym.normal[0],
            rec.alpha[1] + tau * asym.tangent[1] + s * asym.normal[1],
        ]
    };
    let s0 = asym.kappa_alpha * tau * tau;
    let a0 = at(s0);
    let fixed = make_defining_system(CurveKind::FixedPoint, map)?;
    let zc = DVector::from_column_slice(&rec.z);
    let (zs, _) = newton_solve(&fixed, &zc, &a0, &[])?;
    let eig = critical_eigendata(map, &zc, &rec.alpha, Case::Flip)?;
    let q = eig.q_re();
    let step = JAC_STEP_H * zs.norm().max(1.0);
    let hq = (map.boundary(&(&zs + &q * step), &a0)? - map.boundary(&(&zs - &q * step), &a0)?) / (2.0 * step);
    if hq.abs() < DEGENERATE_TOL {
        return Err(Error::TransversalityFailure { what: "H_z q".into(), value: hq });
    }
    let r0 = -map.boundary(&zs, &a0)? / hq;

    // unknowns (y, s): F(F(y)) = y, H(y) = 0
    let resid = |u: &DVector<f64>| -> Result<DVector<f64>> {
        let y = u.rows(0, n).into_owned();
        let a = at(u[n]);
        let w = map.eval_ext(&y, &a)?;
        let mut g = DVector::zeros(n + 1);
        g.rows_mut(0, n).copy_from(&(map.eval_ext(&w, &a)? - &y));
        g[n] = map.boundary(&y, &a)?;
        Ok(g)
    };
    let mut u = DVector::zeros(n + 1);
    u.rows_mut(0, n).copy_from(&(&zs + &q * r0));
    u[n] = s0;
    let mut g = resid(&u)?;
    for _ in 0..50 {
        if g.norm() <= NEWTON_TOL * 1e-2 {
            break;
        }
        let mut j = DMatrix::zeros(n + 1, n + 1);
        for c in 0..=n {
            let h = 1e-7 * u[c].abs().max(1e-3);
            let mut up = u.clone();
            up[c] += h;
            let mut um = u.clone();
            um[c] -= h;
            j.set_column(c, &((resid(&up)? - resid(&um)?) / (2.0 * h)));
        }
        let du = j.lu().solve(&(-&g)).ok_or(Error::SingularJacobian { condition: f64::INFINITY })?;
        let mut lam = 1.0;
        loop {
            let trial = &u + &du * lam;
            if let Ok(gt) = resid(&trial) {
                if gt.norm() < g.norm() || lam < 1e-3 {
                    u = trial;
                    g = gt;
                    break;
                }
            }
            lam *= 0.5;
            if lam < 1e-4 {
                return Err(Error::NoConvergence { iterations: 50, residual: g.norm() });
            }
        }
    }
    if g.norm() > NEWTON_TOL {
        return Err(Error::NoConvergence { iterations: 50, residual: g.norm() });
    }
    let y = u.rows(0, n).into_owned();
    let a = at(u[n]);
    let sep = (map.eval_ext(&y, &a)? - &y).norm();
    if sep < 0.1 * r0.abs() {
        // collapsed onto the fixed-point branch
        return Err(Error::InitialPointInvalid { residual: sep });
    }
    Ok(join_x(&y, &a))
}

const JAC_STEP_H: f64 = 1e-6;

#[cfg(test)]
mod tests;
