//! Parameter-dependent maps defined on one side of a boundary `H(z, alpha) < 0`,
//! with finite-difference derivatives up to third order.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// The two active (continuation) parameters.
pub type Params = [f64; 2];

pub type MapFn = dyn Fn(&DVector<f64>, &Params) -> Result<DVector<f64>> + Send + Sync;
pub type ScalarFn = dyn Fn(&DVector<f64>, &Params) -> Result<f64> + Send + Sync;
pub type JacobianFn = dyn Fn(&DVector<f64>, &Params) -> Result<DMatrix<f64>> + Send + Sync;

pub const JACOBIAN_STEP: f64 = 1e-6;
pub const BILINEAR_STEP: f64 = 1e-4;
pub const TRILINEAR_STEP: f64 = 1e-3;
pub const DEFAULT_TOL_H: f64 = 1e-9;
const SHRINK: f64 = 0.25;

#[derive(Clone)]
pub struct BoundedMap {
    name: String,
    dim: usize,
    f: Arc<MapFn>,
    h: Arc<ScalarFn>,
    jac: Option<Arc<JacobianFn>>,
    tol_h: f64,
    smooth_extension: bool,
}

impl fmt::Debug for BoundedMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundedMap")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jac.is_some())
            .field("smooth_extension", &self.smooth_extension)
            .finish()
    }
}

impl BoundedMap {
    pub fn new<F, H>(name: impl Into<String>, dim: usize, f: F, h: H) -> Self
    where
        F: Fn(&DVector<f64>, &Params) -> Result<DVector<f64>> + Send + Sync + 'static,
        H: Fn(&DVector<f64>, &Params) -> Result<f64> + Send + Sync + 'static,
    {
        BoundedMap {
            name: name.into(),
            dim,
            f: Arc::new(f),
            h: Arc::new(h),
            jac: None,
            tol_h: DEFAULT_TOL_H,
            smooth_extension: false,
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&DVector<f64>, &Params) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(jac));
        self
    }

    /// Declares that the evaluator is a smooth extension of `F` across `H = 0`,
    /// so derivative stencils and defining systems may sample the other side.
    pub fn with_smooth_extension(mut self, yes: bool) -> Self {
        self.smooth_extension = yes;
        self
    }

    pub fn with_tol_h(mut self, tol: f64) -> Self {
        self.tol_h = tol;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    pub fn smooth_extension(&self) -> bool {
        self.smooth_extension
    }

    /// Grazing band `tol_H * (1 + |z|)`.
    pub fn tol_h(&self, z: &DVector<f64>) -> f64 {
        self.tol_h * (1.0 + z.norm())
    }

    pub fn boundary(&self, z: &DVector<f64>, alpha: &Params) -> Result<f64> {
        (self.h)(z, alpha)
    }

    /// `F` without the domain check.
    pub fn eval_raw(&self, z: &DVector<f64>, alpha: &Params) -> Result<DVector<f64>> {
        (self.f)(z, alpha)
    }

    pub fn eval_checked(&self, z: &DVector<f64>, alpha: &Params) -> Result<DVector<f64>> {
        let h = self.boundary(z, alpha)?;
        if h >= self.tol_h(z) || h.is_nan() {
            return Err(Error::DomainViolation { h_value: h });
        }
        self.eval_raw(z, alpha)
    }

    /// Evaluation used by stencils and defining systems: unchecked when the
    /// evaluator is a smooth extension, checked otherwise.
    pub fn eval_ext(&self, z: &DVector<f64>, alpha: &Params) -> Result<DVector<f64>> {
        if self.smooth_extension {
            self.eval_raw(z, alpha)
        } else {
            self.eval_checked(z, alpha)
        }
    }

    pub fn jacobian(&self, z: &DVector<f64>, alpha: &Params) -> Result<DMatrix<f64>> {
        self.jacobian_with_step(z, alpha, JACOBIAN_STEP)
    }

    fn jacobian_with_step(&self, z: &DVector<f64>, alpha: &Params, rel: f64) -> Result<DMatrix<f64>> {
        if let Some(j) = &self.jac {
            return j(z, alpha);
        }
        with_shrink(|factor| {
            let h = rel * factor * scale(z);
            let n = self.dim;
            let mut a = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += h;
                zm[j] -= h;
                let col = (self.eval_ext(&zp, alpha)? - self.eval_ext(&zm, alpha)?) / (2.0 * h);
                a.set_column(j, &col);
            }
            Ok(a)
        })
    }

    pub fn derivatives(&self, z: &DVector<f64>, alpha: &Params, order: usize) -> Result<DerivativeBundle> {
        if !(1..=3).contains(&order) {
            return Err(Error::InvalidParams(format!("derivative order {order} not in 1..=3")));
        }
        let s = scale(z);
        let sa = alpha[0].abs().max(alpha[1].abs()).max(1.0);
        let n = self.dim;
        let a = self.jacobian(z, alpha)?;
        let (f_alpha, h_alpha, h_z, used) = with_shrink(|factor| {
            let ha = JACOBIAN_STEP * factor * sa;
            let mut f_alpha = DMatrix::zeros(n, 2);
            let mut h_alpha = [0.0; 2];
            for j in 0..2 {
                let mut ap = *alpha;
                let mut am = *alpha;
                ap[j] += ha;
                am[j] -= ha;
                let col = (self.eval_ext(z, &ap)? - self.eval_ext(z, &am)?) / (2.0 * ha);
                f_alpha.set_column(j, &col);
                h_alpha[j] = (self.boundary(z, &ap)? - self.boundary(z, &am)?) / (2.0 * ha);
            }
            let hz = JACOBIAN_STEP * factor * s;
            let mut h_z = DVector::zeros(n);
            for i in 0..n {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += hz;
                zm[i] -= hz;
                h_z[i] = (self.boundary(&zp, alpha)? - self.boundary(&zm, alpha)?) / (2.0 * hz);
            }
            Ok((f_alpha, h_alpha, h_z, factor))
        })?;
        let bundle = DerivativeBundle {
            map: self.clone(),
            z: z.clone(),
            alpha: *alpha,
            order,
            a,
            f_alpha,
            h_z,
            h_alpha,
            steps: [JACOBIAN_STEP * used * s, BILINEAR_STEP * s, TRILINEAR_STEP * s],
        };
        if order >= 2 {
            // Probe the second-order stencil once so that a domain problem is
            // reported here rather than at first use; this also settles the step.
            let mut bundle = bundle;
            let e = unit(n, 0);
            let mut factor = 1.0;
            loop {
                bundle.steps[1] = BILINEAR_STEP * s * factor;
                bundle.steps[2] = TRILINEAR_STEP * s * factor;
                let probe = bundle.bilinear(&e, &e).and_then(|_| {
                    if order == 3 {
                        bundle.trilinear(&e, &e, &e).map(|_| ())
                    } else {
                        Ok(())
                    }
                });
                match probe {
                    Ok(()) => return Ok(bundle),
                    Err(Error::DomainViolation { .. }) if factor == 1.0 => factor = SHRINK,
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(bundle)
    }

    /// Iterates `F` from `z0` (not included in the returned orbit).
    pub fn iterate_orbit(&self, z0: &DVector<f64>, alpha: &Params, k: usize) -> Orbit {
        let mut states = Vec::with_capacity(k);
        let mut max_h = f64::NEG_INFINITY;
        let mut z = z0.clone();
        for i in 0..k {
            let next = match self.eval_checked(&z, alpha) {
                Ok(v) => v,
                Err(_) => {
                    return Orbit { states, min_h: max_h, escaped_at: Some(i + 1) };
                }
            };
            match self.boundary(&next, alpha) {
                Ok(h) if h < self.tol_h(&next) => {
                    max_h = max_h.max(h);
                    states.push(next.clone());
                    z = next;
                }
                _ => return Orbit { states, min_h: max_h, escaped_at: Some(i + 1) },
            }
        }
        Orbit { states, min_h: max_h, escaped_at: None }
    }
}

/// Result of [`BoundedMap::iterate_orbit`].
#[derive(Debug, Clone)]
pub struct Orbit {
    pub states: Vec<DVector<f64>>,
    /// Largest `H` over the retained iterates: the closest approach to the
    /// boundary (negative when the orbit keeps clear of it).
    pub min_h: f64,
    /// 1-based index of the first iterate that could not be retained, either
    /// because it left the domain or because its preimage did.
    pub escaped_at: Option<usize>,
}

/// Derivatives of a [`BoundedMap`] at one point. Multilinear forms are
/// evaluated lazily by finite differences.
#[derive(Clone, Debug)]
pub struct DerivativeBundle {
    map: BoundedMap,
    pub z: DVector<f64>,
    pub alpha: Params,
    pub order: usize,
    pub a: DMatrix<f64>,
    pub f_alpha: DMatrix<f64>,
    pub h_z: DVector<f64>,
    pub h_alpha: Params,
    /// Steps used for first, second and third order.
    pub steps: [f64; 3],
}

impl DerivativeBundle {
    pub fn dim(&self) -> usize {
        self.map.dim
    }

    fn f(&self, z: &DVector<f64>, alpha: &Params) -> Result<DVector<f64>> {
        self.map.eval_ext(z, alpha)
    }

    fn jac(&self, z: &DVector<f64>, alpha: &Params) -> Result<DMatrix<f64>> {
        self.map.jacobian(z, alpha)
    }

    /// Second directional derivative `B(p, q)`, exactly symmetric.
    pub fn bilinear(&self, p: &DVector<f64>, q: &DVector<f64>) -> Result<DVector<f64>> {
        let (np, nq) = (p.norm(), q.norm());
        let n = self.dim();
        if np == 0.0 || nq == 0.0 {
            return Ok(DVector::zeros(n));
        }
        let (p, q) = (p / np, q / nq);
        let h = self.steps[1];
        let z = &self.z;
        let al = &self.alpha;
        let b = if self.map.has_jacobian() {
            let dq = (self.jac(&(z + &q * h), al)? - self.jac(&(z - &q * h), al)?) * &p;
            let dp = (self.jac(&(z + &p * h), al)? - self.jac(&(z - &p * h), al)?) * &q;
            (dq + dp) / (4.0 * h)
        } else {
            let pp = self.f(&(z + &p * h + &q * h), al)?;
            let pm = self.f(&(z + &p * h - &q * h), al)?;
            let mp = self.f(&(z - &p * h + &q * h), al)?;
            let mm = self.f(&(z - &p * h - &q * h), al)?;
            (pp - pm - mp + mm) / (4.0 * h * h)
        };
        Ok(b * (np * nq))
    }

    /// Third directional derivative `C(p, q, r)`.
    pub fn trilinear(&self, p: &DVector<f64>, q: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
        let (np, nq, nr) = (p.norm(), q.norm(), r.norm());
        let n = self.dim();
        if np == 0.0 || nq == 0.0 || nr == 0.0 {
            return Ok(DVector::zeros(n));
        }
        let (p, q, r) = (p / np, q / nq, r / nr);
        let h = self.steps[2];
        let z = &self.z;
        let al = &self.alpha;
        let mut acc = DVector::zeros(n);
        if self.map.has_jacobian() {
            for (s1, s2) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let zz = z + &q * (s1 * h) + &r * (s2 * h);
                acc += self.jac(&zz, al)? * &p * (s1 * s2);
            }
            acc /= 4.0 * h * h;
        } else {
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    for s3 in [1.0, -1.0] {
                        let zz = z + &p * (s1 * h) + &q * (s2 * h) + &r * (s3 * h);
                        acc += self.f(&zz, al)? * (s1 * s2 * s3);
                    }
                }
            }
            acc /= 8.0 * h * h * h;
        }
        Ok(acc * (np * nq * nr))
    }

    /// Mixed derivative `F_{z alpha_j} p`.
    pub fn mixed(&self, p: &DVector<f64>, j: usize) -> Result<DVector<f64>> {
        let np = p.norm();
        let n = self.dim();
        if np == 0.0 {
            return Ok(DVector::zeros(n));
        }
        let p = p / np;
        let h = self.steps[1];
        let ha = BILINEAR_STEP * self.alpha[0].abs().max(self.alpha[1].abs()).max(1.0);
        let z = &self.z;
        let mut ap = self.alpha;
        let mut am = self.alpha;
        ap[j] += ha;
        am[j] -= ha;
        let v = if self.map.has_jacobian() {
            (self.jac(z, &ap)? - self.jac(z, &am)?) * &p / (2.0 * ha)
        } else {
            let pp = self.f(&(z + &p * h), &ap)?;
            let pm = self.f(&(z + &p * h), &am)?;
            let mp = self.f(&(z - &p * h), &ap)?;
            let mm = self.f(&(z - &p * h), &am)?;
            (pp - pm - mp + mm) / (4.0 * h * ha)
        };
        Ok(v * np)
    }

    /// Matrix with columns `B(e_i, v)`, i.e. `F_zz v`.
    pub fn bilinear_matrix(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m.set_column(i, &self.bilinear(&unit(n, i), v)?);
        }
        Ok(m)
    }

    pub fn bilinear_c(&self, p: &DVector<Complex64>, q: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        let (pr, pi) = split(p);
        let (qr, qi) = split(q);
        let re = self.bilinear(&pr, &qr)? - self.bilinear(&pi, &qi)?;
        let im = self.bilinear(&pr, &qi)? + self.bilinear(&pi, &qr)?;
        Ok(join(&re, &im))
    }

    pub fn trilinear_c(
        &self,
        p: &DVector<Complex64>,
        q: &DVector<Complex64>,
        r: &DVector<Complex64>,
    ) -> Result<DVector<Complex64>> {
        let parts = [split(p), split(q), split(r)];
        let n = self.dim();
        let mut re = DVector::zeros(n);
        let mut im = DVector::zeros(n);
        // expand over the 8 real/imaginary combinations; i^k decides the slot
        for mask in 0..8u32 {
            let pick = |k: usize| {
                if mask >> k & 1 == 1 {
                    &parts[k].1
                } else {
                    &parts[k].0
                }
            };
            let count = mask.count_ones();
            let t = self.trilinear(pick(0), pick(1), pick(2))?;
            match count % 4 {
                0 => re += t,
                1 => im += t,
                2 => re -= t,
                _ => im -= t,
            }
        }
        Ok(join(&re, &im))
    }
}

pub(crate) fn scale(z: &DVector<f64>) -> f64 {
    z.norm().max(1.0)
}

pub(crate) fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

pub(crate) fn split(v: &DVector<Complex64>) -> (DVector<f64>, DVector<f64>) {
    (v.map(|c| c.re), v.map(|c| c.im))
}

pub(crate) fn join(re: &DVector<f64>, im: &DVector<f64>) -> DVector<Complex64> {
    DVector::from_iterator(re.len(), re.iter().zip(im.iter()).map(|(a, b)| Complex64::new(*a, *b)))
}

/// Runs a stencil at full step, then once more at a reduced step if it left the domain.
fn with_shrink<T>(mut stencil: impl FnMut(f64) -> Result<T>) -> Result<T> {
    match stencil(1.0) {
        Err(Error::DomainViolation { .. }) => stencil(SHRINK),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fold_nf() -> BoundedMap {
        BoundedMap::new(
            "fold",
            1,
            |z, b| Ok(DVector::from_element(1, b[0] + z[0] + z[0] * z[0])),
            |z, b| Ok(z[0] - b[1]),
        )
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn checked_evaluation_respects_the_band() {
        let m = fold_nf();
        assert!((m.eval_checked(&v(&[0.0]), &[-0.04, 0.5]).unwrap()[0] + 0.04).abs() < 1e-15);
        assert!(matches!(
            m.eval_checked(&v(&[0.6]), &[0.0, 0.5]),
            Err(Error::DomainViolation { .. })
        ));
        assert!((m.eval_checked(&v(&[0.5]), &[0.0, 0.5]).unwrap()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn scalar_polynomial_derivatives() {
        let m = BoundedMap::new("q", 1, |z, _| Ok(v(&[z[0] + z[0] * z[0]])), |z, _| Ok(z[0] - 10.0));
        let d = m.derivatives(&v(&[0.0]), &[0.0, 0.0], 2).unwrap();
        assert!((d.a[(0, 0)] - 1.0).abs() < 1e-6);
        assert!((d.bilinear(&v(&[1.0]), &v(&[1.0])).unwrap()[0] - 2.0).abs() < 1e-6);

        let m = BoundedMap::new("c", 1, |z, a| Ok(v(&[-(1.0 + a[0]) * z[0] + z[0].powi(3)])), |z, _| {
            Ok(z[0] - 10.0)
        });
        let d = m.derivatives(&v(&[0.0]), &[0.0, 0.0], 3).unwrap();
        let e = v(&[1.0]);
        assert!((d.a[(0, 0)] + 1.0).abs() < 1e-4);
        assert!(d.bilinear(&e, &e).unwrap()[0].abs() < 1e-4);
        assert!((d.trilinear(&e, &e, &e).unwrap()[0] - 6.0).abs() < 1e-4);
        assert!((d.mixed(&e, 0).unwrap()[0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn two_dimensional_fold_map() {
        let m = BoundedMap::new(
            "f2",
            2,
            |z, a| Ok(v(&[z[0] + z[0] * z[0] + a[0] + 0.3 * z[1], 0.5 * z[1] + z[0] * z[0]])),
            |z, _| Ok(z[0] - 5.0),
        );
        let d = m.derivatives(&v(&[0.0, 0.0]), &[0.0, 0.0], 2).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.5]);
        assert!((&d.a - expect).amax() < 1e-6);
        let b = d.bilinear(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((b - v(&[2.0, 2.0])).amax() < 1e-5);
        assert!((d.f_alpha[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn orbit_examples() {
        let m = fold_nf();
        let o = m.iterate_orbit(&v(&[-0.2]), &[-0.04, 0.5], 10);
        assert_eq!(o.states.len(), 10);
        assert!(o.states.iter().all(|s| (s[0] + 0.2).abs() < 1e-12));
        assert!(o.escaped_at.is_none());
        let o = m.iterate_orbit(&v(&[0.3]), &[0.0, 0.25], 5);
        assert_eq!(o.escaped_at, Some(1));
        assert!(o.states.is_empty());
    }

    #[test]
    fn stencil_near_boundary_shrinks_or_fails() {
        // Not a smooth extension: the unshrunk stencil at the boundary leaves the domain.
        let m = fold_nf();
        let r = m.derivatives(&v(&[0.5]), &[0.0, 0.5], 1);
        assert!(matches!(r, Err(Error::DomainViolation { .. })));
        let m = fold_nf().with_smooth_extension(true);
        let d = m.derivatives(&v(&[0.5]), &[0.0, 0.5], 3).unwrap();
        assert!((d.a[(0, 0)] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn complex_forms_are_multilinear() {
        let m = BoundedMap::new(
            "cub",
            2,
            |z, _| Ok(v(&[z[0] * z[1] + z[0].powi(3), z[1] * z[1] - z[0] * z[1] * z[1]])),
            |_, _| Ok(-1.0),
        );
        let d = m.derivatives(&v(&[0.1, -0.2]), &[0.0, 0.0], 3).unwrap();
        let q = DVector::from_row_slice(&[Complex64::new(1.0, 0.5), Complex64::new(-0.3, 2.0)]);
        let i = Complex64::new(0.0, 1.0);
        let b1 = d.bilinear_c(&(q.map(|c| c * i)), &q).unwrap();
        let b2 = d.bilinear_c(&q, &q).unwrap().map(|c| c * i);
        assert!((b1 - b2).norm() < 1e-6);
        let c1 = d.trilinear_c(&q, &q, &q.map(|c| c.conj())).unwrap();
        let c2 = d.trilinear_c(&q.map(|c| c.conj()), &q, &q).unwrap();
        assert!((c1 - c2).norm() < 1e-3);
    }
}
