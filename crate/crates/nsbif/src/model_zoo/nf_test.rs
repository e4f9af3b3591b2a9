use nalgebra::{DMatrix, DVector};

use super::{resolve, to_array, ParamSet};
use crate::bounded_map::{BoundedMap, Params};
use crate::codim2::EIG_TOL;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NfCase {
    Fold,
    Flip,
    Ns,
}

/// Parameters in the order `beta1, beta2, sigma_slope, s (or a), theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct NfTest {
    pub case: NfCase,
    pub values: [f64; 5],
    pub plane: [usize; 2],
}

impl NfTest {
    pub fn new(case: NfCase, sigma_slope: f64, theta: f64) -> NfTest {
        let s = if case == NfCase::Ns { -1.0 } else { 1.0 };
        NfTest { case, values: [0.0, 0.0, sigma_slope, s, theta], plane: [0, 1] }
    }

    /// Coefficient of the nonlinear term (`s` for fold and flip, `a` for NS).
    pub fn with_coefficient(mut self, c: f64) -> NfTest {
        self.values[3] = c;
        self
    }

    pub fn from_params(case: NfCase, p: &ParamSet) -> Result<NfTest> {
        if p.values.len() != 5 {
            return Err(Error::InvalidParams("normal-form maps expect 5 parameters".into()));
        }
        Ok(NfTest { case, values: to_array(p), plane: p.plane })
    }
}

fn check_theta(theta: f64) -> Result<()> {
    for k in 1..=4 {
        let phase = k as f64 * theta;
        if ((phase.cos() - 1.0).powi(2) + phase.sin().powi(2)).sqrt() < EIG_TOL {
            return Err(Error::ResonantTheta(theta));
        }
    }
    Ok(())
}

/// Truncated normal-form maps with the linear boundary `h = z1 - sigma_slope beta2`.
pub fn build_nf_test(t: &NfTest) -> Result<BoundedMap> {
    let base = t.values;
    let plane = t.plane;
    let h = move |z: &DVector<f64>, a: &Params| -> Result<f64> {
        let p = resolve(&base, plane, a);
        Ok(z[0] - p[2] * p[1])
    };
    let map = match t.case {
        NfCase::Fold => {
            let f = move |z: &DVector<f64>, a: &Params| {
                let p = resolve(&base, plane, a);
                Ok(DVector::from_element(1, p[0] + z[0] + p[3] * z[0] * z[0]))
            };
            let j = move |z: &DVector<f64>, a: &Params| {
                let p = resolve(&base, plane, a);
                Ok(DMatrix::from_element(1, 1, 1.0 + 2.0 * p[3] * z[0]))
            };
            BoundedMap::new("nf-fold", 1, f, h).with_jacobian(j)
        }
        NfCase::Flip => {
            let f = move |z: &DVector<f64>, a: &Params| {
                let p = resolve(&base, plane, a);
                Ok(DVector::from_element(1, -(1.0 + p[0]) * z[0] + p[3] * z[0].powi(3)))
            };
            let j = move |z: &DVector<f64>, a: &Params| {
                let p = resolve(&base, plane, a);
                Ok(DMatrix::from_element(1, 1, -(1.0 + p[0]) + 3.0 * p[3] * z[0] * z[0]))
            };
            BoundedMap::new("nf-flip", 1, f, h).with_jacobian(j)
        }
        NfCase::Ns => {
            check_theta(base[4])?;
            let f = move |z: &DVector<f64>, a: &Params| {
                let p = resolve(&base, plane, a);
                let (c, s) = (p[4].cos(), p[4].sin());
                let g = 1.0 + p[0] + p[3] * (z[0] * z[0] + z[1] * z[1]);
                Ok(DVector::from_vec(vec![g * (c * z[0] - s * z[1]), g * (s * z[0] + c * z[1])]))
            };
            let j = move |z: &DVector<f64>, a: &Params| {
                let p = resolve(&base, plane, a);
                let (c, s) = (p[4].cos(), p[4].sin());
                let g = 1.0 + p[0] + p[3] * (z[0] * z[0] + z[1] * z[1]);
                let (u, v) = (c * z[0] - s * z[1], s * z[0] + c * z[1]);
                let (gx, gy) = (2.0 * p[3] * z[0], 2.0 * p[3] * z[1]);
                Ok(DMatrix::from_row_slice(2, 2, &[g * c + gx * u, -g * s + gy * u, g * s + gx * v, g * c + gy * v]))
            };
            BoundedMap::new("nf-ns", 2, f, h).with_jacobian(j)
        }
    };
    Ok(map.with_smooth_extension(true))
}
