use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::bounded_map::{BoundedMap, Params};
use crate::continuation::{BifCurve, CurveKind, CurvePoint, StopReason};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TangencyOptions {
    /// Range of `|tau|` (distance along the primary tangent) used by the fit.
    pub window: (f64, f64),
    /// Orientation of the normal; defaults to the tangent rotated by +90 degrees.
    pub normal: Option<[f64; 2]>,
    pub min_points: usize,
    pub max_residual: f64,
}

impl Default for TangencyOptions {
    fn default() -> Self {
        TangencyOptions { window: (1e-4, 5e-2), normal: None, min_points: 8, max_residual: 0.05 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TangencyFit {
    pub angle: f64,
    pub exponent: f64,
    pub kappa: f64,
    pub validity_radius: f64,
    pub n_points: usize,
    pub residual: f64,
    pub tangent: bool,
}

/// Secondary curves leaving at a larger angle than this are fitted against
/// their own arclength.
const TRANSVERSAL_ANGLE: f64 = 0.1;

/// Least squares polynomial fit `sum c_k x^k`, `k < deg + 1`.
fn polyfit(xs: &[f64], ys: &[f64], deg: usize) -> Option<Vec<f64>> {
    let m = xs.len();
    if m < deg + 1 {
        return None;
    }
    let a = DMatrix::from_fn(m, deg + 1, |i, k| xs[i].powi(k as i32));
    let b = DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let c = svd.solve(&b, 1e-14).ok()?;
    Some(c.iter().cloned().collect())
}

fn frame(point: &Params, t: [f64; 2], nrm: [f64; 2], a: &Params) -> (f64, f64) {
    let d = [a[0] - point[0], a[1] - point[1]];
    (d[0] * t[0] + d[1] * t[1], d[0] * nrm[0] + d[1] * nrm[1])
}

fn rot(t: [f64; 2]) -> [f64; 2] {
    [-t[1], t[0]]
}

/// Measures how the secondary curve leaves the codimension-two point relative
/// to the primary one: `d = kappa |tau|^p` for the normal separation `d`.
pub fn verify_tangency(primary: &BifCurve, secondary: &BifCurve, point: &Params, opts: &TangencyOptions) -> Result<TangencyFit> {
    let (wmin, wmax) = opts.window;
    let near: Vec<Params> = primary
        .points
        .iter()
        .map(|p| p.alpha)
        .filter(|a| (a[0] - point[0]).hypot(a[1] - point[1]) <= wmax)
        .collect();
    if near.len() < 3 {
        return Err(Error::InsufficientPoints { found: near.len(), needed: 3 });
    }
    // primary tangent: principal direction of the displacements, then tilted by
    // the linear term of a quadratic fit
    let disp = DMatrix::from_fn(near.len(), 2, |i, k| near[i][k] - point[k]);
    let svd = disp.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let k = svd.singular_values.imax();
    let mut t = [vt[(k, 0)], vt[(k, 1)]];
    let mut pfit = vec![0.0; 3];
    for _ in 0..2 {
        let nrm = rot(t);
        let (ts, ns): (Vec<f64>, Vec<f64>) = near.iter().map(|a| frame(point, t, nrm, a)).unzip();
        pfit = polyfit(&ts, &ns, 2).unwrap_or(vec![0.0; 3]);
        let ang = pfit[1].atan();
        let (c, s) = (ang.cos(), ang.sin());
        t = [c * t[0] + s * nrm[0], c * t[1] + s * nrm[1]];
    }
    let mut nrm = rot(t);
    if let Some(h) = opts.normal {
        if nrm[0] * h[0] + nrm[1] * h[1] < 0.0 {
            nrm = [-nrm[0], -nrm[1]];
            t = [-t[0], -t[1]];
        }
    }
    // primary normal offset as a function of tau
    let mut prim: Vec<(f64, f64)> = near.iter().map(|a| frame(point, t, nrm, a)).collect();
    prim.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let (pts, pns): (Vec<f64>, Vec<f64>) = prim.iter().cloned().unzip();
    let pquad = polyfit(&pts, &pns, 2).unwrap_or_else(|| pfit.clone());
    let offset = |tau: f64| -> f64 {
        if prim.len() >= 2 && tau >= prim[0].0 && tau <= prim[prim.len() - 1].0 {
            let i = prim.partition_point(|p| p.0 < tau).clamp(1, prim.len() - 1);
            let (t0, n0) = prim[i - 1];
            let (t1, n1) = prim[i];
            if t1 > t0 {
                return n0 + (n1 - n0) * (tau - t0) / (t1 - t0);
            }
            n0
        } else {
            pquad[0] + pquad[1] * tau + pquad[2] * tau * tau
        }
    };
    let sec: Vec<(f64, f64, f64)> = secondary
        .points
        .iter()
        .map(|p| {
            let (tau, nu) = frame(point, t, nrm, &p.alpha);
            (tau, nu, nu - offset(tau))
        })
        .collect();

    let mut w = wmax;
    let mut best: Option<TangencyFit> = None;
    let mut last_count = 0;
    while w >= wmin * 2.0 {
        let pick: Vec<&(f64, f64, f64)> =
            sec.iter().filter(|s| s.0.abs() >= wmin && s.0.abs() <= w && s.2 != 0.0 && s.2.is_finite()).collect();
        last_count = pick.len();
        if pick.len() < opts.min_points {
            break;
        }
        let lx: Vec<f64> = pick.iter().map(|s| s.0.abs().ln()).collect();
        let ly: Vec<f64> = pick.iter().map(|s| s.2.abs().ln()).collect();
        let c = polyfit(&lx, &ly, 1).ok_or(Error::InsufficientPoints { found: pick.len(), needed: opts.min_points })?;
        let (kabs, p) = (c[0].exp(), c[1]);
        let resid = pick
            .iter()
            .map(|s| (kabs * s.0.abs().powf(p) - s.2.abs()).abs() / s.2.abs())
            .fold(0.0, f64::max);
        let sgn = pick.iter().map(|s| s.2).sum::<f64>().signum();
        let taus: Vec<f64> = pick.iter().map(|s| s.0).collect();
        let nus: Vec<f64> = pick.iter().map(|s| s.1).collect();
        let slope = polyfit(&taus, &nus, 2).map(|c| c[1]).unwrap_or(0.0);
        let angle = (slope - pquad[1]).atan().abs();
        let fit = TangencyFit {
            angle,
            exponent: p,
            kappa: sgn * kabs,
            validity_radius: taus.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
            n_points: pick.len(),
            residual: resid,
            tangent: angle <= 1e-2 && (p - 2.0).abs() <= 0.1,
        };
        let ok = resid < opts.max_residual;
        best = Some(fit);
        if ok {
            break;
        }
        w /= 1.5;
    }
    if let Some(b) = best {
        return Ok(b);
    }
    // a clearly transversal secondary may have no points with |tau| >= wmin
    // (e.g. perpendicular); fit against the distance along it instead
    let sec_near: Vec<(f64, f64, f64)> = secondary
        .points
        .iter()
        .zip(&sec)
        .filter_map(|(p, s)| {
            let r = (p.alpha[0] - point[0]).hypot(p.alpha[1] - point[1]);
            (r >= wmin && r <= wmax).then_some((r, s.0, s.1))
        })
        .collect();
    if sec_near.len() >= opts.min_points {
        let d = DMatrix::from_fn(sec_near.len(), 2, |i, k| if k == 0 { sec_near[i].1 } else { sec_near[i].2 });
        let svd = d.svd(false, true);
        let vt = svd.v_t.expect("requested");
        let k = svd.singular_values.imax();
        let dir = [vt[(k, 0)], vt[(k, 1)]];
        let angle = dir[1].abs().atan2(dir[0].abs());
        if angle > TRANSVERSAL_ANGLE {
            let pick: Vec<&(f64, f64, f64)> = sec_near.iter().filter(|s| s.2 != 0.0).collect();
            let lx: Vec<f64> = pick.iter().map(|s| s.0.ln()).collect();
            let ly: Vec<f64> = pick.iter().map(|s| (s.2 - offset(s.1)).abs().ln()).collect();
            let c = polyfit(&lx, &ly, 1).ok_or(Error::InsufficientPoints { found: pick.len(), needed: opts.min_points })?;
            let (kabs, p) = (c[0].exp(), c[1]);
            let resid = pick
                .iter()
                .map(|s| {
                    let d = (s.2 - offset(s.1)).abs();
                    (kabs * s.0.powf(p) - d).abs() / d
                })
                .fold(0.0, f64::max);
            return Ok(TangencyFit {
                angle,
                exponent: p,
                kappa: kabs,
                validity_radius: pick.iter().fold(0.0_f64, |m, s| m.max(s.0)),
                n_points: pick.len(),
                residual: resid,
                tangent: false,
            });
        }
    }

    Err(Error::InsufficientPoints { found: last_count, needed: opts.min_points })
}

/// Annulus around the NS invariant circle.
#[derive(Debug, Clone, Serialize)]
pub struct AnnulusSpec {
    pub beta: Params,
    pub gamma: f64,
    pub inner: f64,
    pub outer: f64,
}

impl AnnulusSpec {
    pub fn new(a0: f64, beta: Params, gamma: f64) -> Result<AnnulusSpec> {
        if !(gamma > 0.5 && gamma < 1.0) {
            return Err(Error::InvalidGamma(gamma));
        }
        let b1 = beta[0];
        if !(b1 * a0 < 0.0) {
            return Err(Error::InvalidParams(format!("no invariant circle for a0 = {a0}, beta1 = {b1}")));
        }
        let r = (-b1 / a0).sqrt();
        let e = b1.abs().powf(gamma - 0.5);
        if e >= 1.0 {
            return Err(Error::InvalidParams(format!("|beta1| = {} too large for an annulus", b1.abs())));
        }
        Ok(AnnulusSpec { beta, gamma, inner: r * (1.0 - e), outer: r * (1.0 + e) })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnnulusReport {
    pub spec: AnnulusSpec,
    pub inner_fraction: f64,
    pub outer_fraction: f64,
    pub inner_min_drho: f64,
    pub outer_max_drho: f64,
}

/// Samples the truncated NS normal form `z -> R(theta) z (1 + beta1 + a0 |z|^2)`
/// on the two bounding circles of the annulus.
pub fn annulus_check(a0: f64, theta: f64, beta: Params, gamma: f64, n_samples: usize) -> Result<AnnulusReport> {
    let spec = AnnulusSpec::new(a0, beta, gamma)?;
    let drho = |rho: f64, phi: f64| {
        let (x, y) = (rho * phi.cos(), rho * phi.sin());
        let k = 1.0 + beta[0] + a0 * rho * rho;
        let (c, s) = (theta.cos(), theta.sin());
        let (x1, y1) = (k * (c * x - s * y), k * (s * x + c * y));
        x1.hypot(y1) - rho
    };
    let n = n_samples.max(1);
    let mut inner_pos = 0;
    let mut outer_neg = 0;
    let mut imin = f64::INFINITY;
    let mut omax = f64::NEG_INFINITY;
    for i in 0..n {
        let phi = 2.0 * PI * i as f64 / n as f64;
        let di = drho(spec.inner, phi);
        let dout = drho(spec.outer, phi);
        inner_pos += (di > 0.0) as usize;
        outer_neg += (dout < 0.0) as usize;
        imin = imin.min(di);
        omax = omax.max(dout);
    }
    Ok(AnnulusReport {
        spec,
        inner_fraction: inner_pos as f64 / n as f64,
        outer_fraction: outer_neg as f64 / n as f64,
        inner_min_drho: imin,
        outer_max_drho: omax,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GrazingEstimate {
    /// Largest `H` over the sampled orbit.
    pub min_h: f64,
    pub grazing_gap: f64,
    pub samples: usize,
}

/// Largest `H` along the orbit, or the first non-negative value if the orbit
/// leaves the domain (with the iteration index).
fn grazing_scan(map: &BoundedMap, z0: &DVector<f64>, alpha: &Params, transient: usize, samples: usize) -> Result<(f64, Option<usize>)> {
    let mut z = z0.clone();
    let mut best = f64::NEG_INFINITY;
    for k in 0..transient + samples {
        let h = map.boundary(&z, alpha)?;
        if h >= map.tol_h(&z) || h.is_nan() {
            return Ok((h, Some(k)));
        }
        if k >= transient {
            best = best.max(h);
        }
        z = map.eval_raw(&z, alpha)?;
    }
    Ok((best, None))
}

/// Closest approach of a (quasi-periodic) orbit to the boundary.
pub fn torus_grazing_estimate(
    map: &BoundedMap,
    z0: &DVector<f64>,
    alpha: &Params,
    transient: usize,
    samples: usize,
) -> Result<GrazingEstimate> {
    match grazing_scan(map, z0, alpha, transient, samples)? {
        (_, Some(k)) => Err(Error::OrbitEscaped { iteration: k }),
        (h, None) => Ok(GrazingEstimate { min_h: h, grazing_gap: -h, samples }),
    }
}

#[derive(Debug, Clone)]
pub struct GrazingTrace {
    /// Index of the parameter solved for; the other one is prescribed.
    pub solve: usize,
    pub transient: usize,
    pub samples: usize,
    pub tol: f64,
}

impl Default for GrazingTrace {
    fn default() -> Self {
        GrazingTrace { solve: 0, transient: 200, samples: 1000, tol: 1e-13 }
    }
}

/// Traces the torus-grazing curve as the zero set of the grazing monitor:
/// for each prescribed value of the other parameter the solved one is found
/// by Illinois iteration inside `bracket(value)`.
pub fn trace_grazing_curve<B, Z>(map: &BoundedMap, values: &[f64], bracket: B, z0: Z, opts: &GrazingTrace) -> Result<BifCurve>
where
    B: Fn(f64) -> (f64, f64),
    Z: Fn(&Params) -> DVector<f64>,
{
    let other = 1 - opts.solve;
    let mut curve = BifCurve::new(CurveKind::GrazingTorus, vec![], vec!["min_H".into()]);
    for &v in values {
        let monitor = |x: f64| -> Result<f64> {
            let mut a = [0.0; 2];
            a[opts.solve] = x;
            a[other] = v;
            Ok(grazing_scan(map, &z0(&a), &a, opts.transient, opts.samples)?.0)
        };
        let (mut lo, mut hi) = bracket(v);
        let mut flo = monitor(lo)?;
        let mut fhi = monitor(hi)?;
        let mut tries = 0;
        while flo.signum() == fhi.signum() && tries < 30 {
            let w = hi - lo;
            if flo.abs() < fhi.abs() {
                lo -= w;
                flo = monitor(lo)?;
            } else {
                hi += w;
                fhi = monitor(hi)?;
            }
            tries += 1;
        }
        if flo.signum() == fhi.signum() {
            return Err(Error::NoConvergence { iterations: tries, residual: flo.abs().min(fhi.abs()) });
        }
        let mut side = 0;
        let mut x = lo;
        let mut fx = flo;
        for _ in 0..200 {
            x = (lo * fhi - hi * flo) / (fhi - flo);
            fx = monitor(x)?;
            if fx.abs() <= opts.tol || (hi - lo).abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
            if fx.signum() == flo.signum() {
                lo = x;
                flo = fx;
                if side == -1 {
                    fhi *= 0.5;
                }
                side = -1;
            } else {
                hi = x;
                fhi = fx;
                if side == 1 {
                    flo *= 0.5;
                }
                side = 1;
            }
        }
        let mut a = [0.0; 2];
        a[opts.solve] = x;
        a[other] = v;
        curve.points.push(CurvePoint { alpha: a, y: vec![], monitors: vec![fx], step: 0.0, residual: fx.abs(), is_virtual: false });
    }
    curve.stop = StopReason::Budget;
    Ok(curve)
}
