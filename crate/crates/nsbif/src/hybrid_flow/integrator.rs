//! Dormand-Prince 5(4) with the 4th-order continuous extension.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];

const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

// y(t0 + s h) = y0 + h * sum_i k_i * sum_j P[i][j] s^(j+1)
const P: [[f64; 4]; 7] = [
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
];

pub type Rhs<'a> = dyn Fn(f64, &[f64], &mut [f64]) + 'a;

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

/// One accepted step with its dense-output data.
#[derive(Debug, Clone)]
pub struct Step {
    pub t0: f64,
    pub h: f64,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub k: [Vec<f64>; 7],
}

impl Step {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let s = if self.h == 0.0 { 0.0 } else { (t - self.t0) / self.h };
        let mut w = [0.0; 7];
        for (i, wi) in w.iter_mut().enumerate() {
            let p = &P[i];
            *wi = s * (p[0] + s * (p[1] + s * (p[2] + s * p[3])));
        }
        let mut y = self.y0.clone();
        for (j, yj) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..7 {
                acc += w[i] * self.k[i][j];
            }
            *yj += self.h * acc;
        }
        y
    }
}

pub struct Dopri5<'a> {
    f: &'a Rhs<'a>,
    n: usize,
    tol: Tolerances,
    pub h_min: f64,
}

impl<'a> Dopri5<'a> {
    pub fn new(f: &'a Rhs<'a>, n: usize, tol: Tolerances) -> Self {
        Dopri5 { f, n, tol, h_min: 1e-14 }
    }

    pub fn rhs(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        (self.f)(t, y, &mut out);
        out
    }

    /// Single explicit step of size `h` from `(t, y)` with `k1 = f(t, y)`.
    /// Returns the step and its scaled error norm.
    pub fn attempt(&self, t: f64, y: &[f64], k1: &[f64], h: f64) -> (Step, f64) {
        let n = self.n;
        let mut k: [Vec<f64>; 7] = Default::default();
        k[0] = k1.to_vec();
        let mut tmp = vec![0.0; n];
        for s in 1..7 {
            for j in 0..n {
                let mut acc = 0.0;
                for (r, kr) in k.iter().enumerate().take(s) {
                    acc += A[s][r] * kr[j];
                }
                tmp[j] = y[j] + h * acc;
            }
            let mut out = vec![0.0; n];
            (self.f)(t + C[s] * h, &tmp, &mut out);
            k[s] = out;
        }
        // the last stage point is the 5th-order solution (FSAL)
        let y1 = tmp;
        let mut err = 0.0;
        for j in 0..n {
            let mut e = 0.0;
            for (i, ki) in k.iter().enumerate() {
                e += E[i] * ki[j];
            }
            let sc = self.tol.atol + self.tol.rtol * y[j].abs().max(y1[j].abs());
            err += (h * e / sc).powi(2);
        }
        let err = (err / n.max(1) as f64).sqrt();
        (Step { t0: t, h, y0: y.to_vec(), y1, k }, err)
    }

    pub fn initial_step(&self, t: f64, y: &[f64], f0: &[f64], direction_span: f64) -> f64 {
        let sc: Vec<f64> = y.iter().map(|v| self.tol.atol + self.tol.rtol * v.abs()).collect();
        let d0 = rms(y, &sc);
        let d1 = rms(f0, &sc);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(direction_span.abs());
        let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
        let f1 = self.rhs(t + h0, &y1);
        let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
        let d2 = rms(&diff, &sc) / h0;
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(direction_span.abs()).max(self.h_min)
    }

    /// New step size from an error norm.
    pub fn next_h(h: f64, err: f64) -> f64 {
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h * fac
    }

    /// Advances one accepted step no larger than `h_max`, updating the
    /// suggested step `h` in place.
    pub fn step(&self, t: f64, y: &[f64], k1: &[f64], h: &mut f64, h_max: f64) -> Result<Step> {
        let mut hh = h.min(h_max);
        loop {
            if hh < self.h_min * t.abs().max(1.0) && hh < h_max {
                return Err(Error::StiffnessFailure { t });
            }
            let (st, err) = self.attempt(t, y, k1, hh);
            if err <= 1.0 && st.y1.iter().all(|v| v.is_finite()) {
                *h = Self::next_h(hh, err);
                return Ok(st);
            }
            hh = if err.is_finite() { Self::next_h(hh, err).min(0.9 * hh) } else { 0.25 * hh };
        }
    }
}

fn rms(v: &[f64], sc: &[f64]) -> f64 {
    let n = v.len().max(1) as f64;
    (v.iter().zip(sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_with_dense_output() {
        let f = |_t: f64, y: &[f64], d: &mut [f64]| {
            d[0] = -y[0];
            d[1] = y[0] - 0.5 * y[1];
        };
        let ig = Dopri5::new(&f, 2, Tolerances { rtol: 1e-10, atol: 1e-12 });
        let mut t = 0.0;
        let mut y = vec![1.0, 0.0];
        let mut k1 = ig.rhs(t, &y);
        let mut h = ig.initial_step(t, &y, &k1, 5.0);
        let exact = |t: f64| [(-t).exp(), 2.0 * ((-0.5 * t).exp() - (-t).exp())];
        let mut worst_dense: f64 = 0.0;
        while t < 5.0 {
            let st = ig.step(t, &y, &k1, &mut h, 5.0 - t).unwrap();
            let tm = st.t0 + 0.37 * st.h;
            let ym = st.eval(tm);
            let ex = exact(tm);
            worst_dense = worst_dense.max((ym[0] - ex[0]).abs()).max((ym[1] - ex[1]).abs());
            t = st.t1();
            y = st.y1.clone();
            k1 = st.k[6].clone();
        }
        let ex = exact(5.0);
        assert!((y[0] - ex[0]).abs() < 1e-9);
        assert!((y[1] - ex[1]).abs() < 1e-9);
        assert!(worst_dense < 1e-8, "dense error {worst_dense}");
    }
}
