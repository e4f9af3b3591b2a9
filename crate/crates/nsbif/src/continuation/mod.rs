//! Newton solver, pseudo-arclength continuation and the defining systems of
//! smooth and border-collision bifurcation curves.

pub mod systems;

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::bounded_map::Params;
use crate::error::{Error, Result};

pub use systems::{codim2_system, eigen_seed, make_defining_system, ns_growth};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 50;
pub const MAX_CONDITION: f64 = 1e14;
pub const SEP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    FixedPoint,
    Fold,
    Flip,
    Ns,
    BcFixed,
    BcPeriod2,
    GrazingTorus,
    Custom,
}

impl CurveKind {
    pub fn tag(self) -> &'static str {
        match self {
            CurveKind::FixedPoint => "fixed_point",
            CurveKind::Fold => "fold",
            CurveKind::Flip => "flip",
            CurveKind::Ns => "ns",
            CurveKind::BcFixed => "bc_fixed",
            CurveKind::BcPeriod2 => "bc_period2",
            CurveKind::GrazingTorus => "grazing_torus",
            CurveKind::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.replace('-', "_").as_str() {
            "fixed_point" => CurveKind::FixedPoint,
            "fold" => CurveKind::Fold,
            "flip" => CurveKind::Flip,
            "ns" => CurveKind::Ns,
            "bc_fixed" => CurveKind::BcFixed,
            "bc_period2" => CurveKind::BcPeriod2,
            "grazing_torus" => CurveKind::GrazingTorus,
            _ => return None,
        })
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

pub type ResidualFn = dyn Fn(&DVector<f64>, &Params) -> Result<DVector<f64>> + Send + Sync;
pub type MonitorFn = dyn Fn(&DVector<f64>, &Params) -> Result<f64> + Send + Sync;

#[derive(Clone)]
pub struct Monitor {
    pub name: String,
    f: Arc<MonitorFn>,
}

impl Monitor {
    pub fn new<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &Params) -> Result<f64> + Send + Sync + 'static,
    {
        Monitor { name: name.into(), f: Arc::new(f) }
    }

    pub fn eval(&self, y: &DVector<f64>, alpha: &Params) -> Result<f64> {
        (self.f)(y, alpha)
    }
}

/// Residual `G(y, alpha)` with monitors. Unknowns of a curve are laid out as
/// `X = [y, alpha_1, alpha_2]`.
#[derive(Clone)]
pub struct DefiningSystem {
    pub kind: CurveKind,
    /// Number of `y` unknowns.
    pub n_y: usize,
    /// Number of residual equations.
    pub n_eq: usize,
    pub labels: Vec<String>,
    residual: Arc<ResidualFn>,
    pub monitors: Vec<Monitor>,
    /// Monitor whose positive values mark virtual points (object on the
    /// undescribed side).
    pub h_monitor: Option<usize>,
    /// Finite-difference step for the Jacobian of `G`.
    pub fd_step: f64,
}

impl fmt::Debug for DefiningSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DefiningSystem")
            .field("kind", &self.kind)
            .field("n_y", &self.n_y)
            .field("n_eq", &self.n_eq)
            .field("labels", &self.labels)
            .field("monitors", &self.monitors.iter().map(|m| &m.name).collect::<Vec<_>>())
            .finish()
    }
}

impl DefiningSystem {
    pub fn new<G>(kind: CurveKind, n_y: usize, n_eq: usize, residual: G) -> Self
    where
        G: Fn(&DVector<f64>, &Params) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        DefiningSystem {
            kind,
            n_y,
            n_eq,
            labels: (1..=n_y).map(|i| format!("y{i}")).collect(),
            residual: Arc::new(residual),
            monitors: vec![],
            h_monitor: None,
            fd_step: 1e-7,
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = labels;
        self
    }

    pub fn with_monitor(mut self, m: Monitor) -> Self {
        self.monitors.push(m);
        self
    }

    pub fn with_h_monitor(mut self, m: Monitor) -> Self {
        self.h_monitor = Some(self.monitors.len());
        self.monitors.push(m);
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn residual(&self, y: &DVector<f64>, alpha: &Params) -> Result<DVector<f64>> {
        (self.residual)(y, alpha)
    }

    pub fn residual_x(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (y, a) = split_x(x, self.n_y);
        self.residual(&y, &a)
    }

    pub fn monitor_values(&self, y: &DVector<f64>, alpha: &Params) -> Vec<f64> {
        self.monitors.iter().map(|m| m.eval(y, alpha).unwrap_or(f64::NAN)).collect()
    }

    /// Jacobian of `G` with respect to the full unknown vector `X`.
    pub fn jacobian_x(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let nx = x.len();
        let mut j = DMatrix::zeros(self.n_eq, nx);
        for c in 0..nx {
            let h = self.fd_step * x[c].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let col = (self.residual_x(&xp)? - self.residual_x(&xm)?) / (2.0 * h);
            j.set_column(c, &col);
        }
        Ok(j)
    }
}

pub fn split_x(x: &DVector<f64>, n_y: usize) -> (DVector<f64>, Params) {
    (x.rows(0, n_y).into_owned(), [x[n_y], x[n_y + 1]])
}

pub fn join_x(y: &DVector<f64>, a: &Params) -> DVector<f64> {
    let mut x = DVector::zeros(y.len() + 2);
    x.rows_mut(0, y.len()).copy_from(y);
    x[y.len()] = a[0];
    x[y.len() + 1] = a[1];
    x
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Damped Newton on a square system `r(u) = 0` with Jacobian `jac(u)`.
fn newton_core(
    u0: DVector<f64>,
    r: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    jac: &dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize, f64)> {
    let mut u = u0;
    let mut g = r(&u)?;
    let mut gn = g.norm();
    for it in 0..max_iter {
        let j = jac(&u)?;
        let cond = condition(&j);
        if !(cond <= MAX_CONDITION) {
            return Err(Error::SingularJacobian { condition: cond });
        }
        let du = j.lu().solve(&(-&g)).ok_or(Error::SingularJacobian { condition: cond })?;
        let step_norm = du.norm();
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..10 {
            let trial = &u + &du * lambda;
            if let Ok(gt) = r(&trial) {
                let n = gt.norm();
                if n.is_finite() && (n < gn || n <= tol) {
                    accepted = Some((trial, gt, n));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let (trial, gt, n) = match accepted {
            Some(v) => v,
            None => {
                if gn <= tol {
                    return Ok((u, it, gn));
                }
                return Err(Error::NoConvergence { iterations: it + 1, residual: gn });
            }
        };
        u = trial;
        g = gt;
        gn = n;
        let small = step_norm * lambda <= 1e-12 * u.norm().max(1.0);
        if gn <= tol && (small || gn <= tol * 1e-3 || it + 1 >= 3) {
            return Ok((u, it + 1, gn));
        }
    }
    if gn <= tol {
        return Ok((u, max_iter, gn));
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: gn })
}

/// Newton solve of `G(y, alpha) = 0` for `y` and the parameters listed in
/// `free` (indices into `alpha`); the system must be square.
pub fn newton_solve(sys: &DefiningSystem, y0: &DVector<f64>, alpha: &Params, free: &[usize]) -> Result<(DVector<f64>, Params)> {
    let nu = sys.n_y + free.len();
    if nu != sys.n_eq {
        return Err(Error::InvalidParams(format!(
            "{} equations for {} unknowns ({} free parameters)",
            sys.n_eq,
            nu,
            free.len()
        )));
    }
    let pack = |y: &DVector<f64>, a: &Params| {
        let mut u = DVector::zeros(nu);
        u.rows_mut(0, sys.n_y).copy_from(y);
        for (k, i) in free.iter().enumerate() {
            u[sys.n_y + k] = a[*i];
        }
        u
    };
    let unpack = |u: &DVector<f64>| {
        let y = u.rows(0, sys.n_y).into_owned();
        let mut a = *alpha;
        for (k, i) in free.iter().enumerate() {
            a[*i] = u[sys.n_y + k];
        }
        (y, a)
    };
    let r = |u: &DVector<f64>| {
        let (y, a) = unpack(u);
        sys.residual(&y, &a)
    };
    let jac = |u: &DVector<f64>| {
        let (y, a) = unpack(u);
        let jx = sys.jacobian_x(&join_x(&y, &a))?;
        let mut j = DMatrix::zeros(sys.n_eq, nu);
        j.columns_mut(0, sys.n_y).copy_from(&jx.columns(0, sys.n_y));
        for (k, i) in free.iter().enumerate() {
            j.set_column(sys.n_y + k, &jx.column(sys.n_y + i));
        }
        Ok(j)
    };
    let (u, _, _) = newton_core(pack(y0, alpha), &r, &jac, NEWTON_TOL, NEWTON_MAX_ITER)?;
    Ok(unpack(&u))
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub alpha: Params,
    pub y: Vec<f64>,
    pub monitors: Vec<f64>,
    pub step: f64,
    pub residual: f64,
    #[serde(rename = "virtual")]
    pub is_virtual: bool,
}

impl CurvePoint {
    pub fn x(&self) -> DVector<f64> {
        join_x(&DVector::from_column_slice(&self.y), &self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    LeftBox,
    Stalled,
    Virtual,
    Closed,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpecialPoint {
    pub monitor: String,
    /// Index of the curve point preceding the sign change.
    pub after: usize,
    pub alpha: Params,
    pub y: Vec<f64>,
    pub value: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BifCurve {
    pub kind: CurveKind,
    pub labels: Vec<String>,
    pub monitor_names: Vec<String>,
    pub points: Vec<CurvePoint>,
    pub special: Vec<SpecialPoint>,
    pub stop: StopReason,
}

impl BifCurve {
    pub fn new(kind: CurveKind, labels: Vec<String>, monitor_names: Vec<String>) -> Self {
        BifCurve { kind, labels, monitor_names, points: vec![], special: vec![], stop: StopReason::Budget }
    }

    pub fn alphas(&self) -> Vec<Params> {
        self.points.iter().map(|p| p.alpha).collect()
    }

    /// Joins a backward run (reversed, without its start) in front of `self`.
    pub fn prepend_reversed(&mut self, other: BifCurve) {
        let mut pts: Vec<CurvePoint> = other.points.into_iter().skip(1).collect();
        pts.reverse();
        let shift = pts.len();
        pts.append(&mut self.points);
        self.points = pts;
        for s in &mut self.special {
            s.after += shift;
        }
    }

    /// `alpha1, alpha2, y..., monitors..., tag` with the versioned header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# nsbif-csv v1")?;
        let mut head = vec!["alpha1".to_string(), "alpha2".to_string()];
        head.extend(self.labels.iter().cloned());
        head.extend(self.monitor_names.iter().cloned());
        head.push("tag".into());
        writeln!(w, "{}", head.join(","))?;
        for p in &self.points {
            write!(w, "{:.15e},{:.15e}", p.alpha[0], p.alpha[1])?;
            for v in p.y.iter().chain(&p.monitors) {
                write!(w, ",{v:.15e}")?;
            }
            let tag = if p.is_virtual { "virtual" } else { self.kind.tag() };
            writeln!(w, ",{tag}")?;
        }
        Ok(())
    }

    /// Reads the `alpha1, alpha2` columns (and `y` where labels match) of a
    /// curve CSV written by [`BifCurve::write_csv`].
    pub fn read_csv(text: &str) -> std::result::Result<BifCurve, String> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let head: Vec<&str> = lines.next().ok_or("empty curve file")?.split(',').collect();
        if head.len() < 3 || head[0] != "alpha1" || head[1] != "alpha2" {
            return Err("curve header must start with alpha1,alpha2".into());
        }
        let mut kind = CurveKind::Custom;
        let mut points = vec![];
        for (ln, l) in lines.enumerate() {
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != head.len() {
                return Err(format!("row {} has {} columns, expected {}", ln + 1, cols.len(), head.len()));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("row {}: {e}", ln + 1));
            let tag = cols[cols.len() - 1];
            if let Some(k) = CurveKind::parse(tag) {
                kind = k;
            }
            let vals: Vec<f64> = cols[2..cols.len() - 1].iter().map(|s| num(s)).collect::<std::result::Result<_, _>>()?;
            points.push(CurvePoint {
                alpha: [num(cols[0])?, num(cols[1])?],
                y: vals,
                monitors: vec![],
                step: 0.0,
                residual: 0.0,
                is_virtual: tag == "virtual",
            });
        }
        Ok(BifCurve {
            kind,
            labels: head[2..head.len() - 1].iter().map(|s| s.to_string()).collect(),
            monitor_names: vec![],
            points,
            special: vec![],
            stop: StopReason::Budget,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ContinuationOptions {
    pub steps: usize,
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Parameter box `[[a1_lo, a1_hi], [a2_lo, a2_hi]]`.
    pub bounds: Option<[[f64; 2]; 2]>,
    pub stop_at_virtual: bool,
    pub corrector_iter: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            steps: 200,
            h0: 1e-3,
            h_min: 1e-6,
            h_max: 1e-2,
            bounds: None,
            stop_at_virtual: false,
            corrector_iter: 12,
        }
    }
}

fn tangent(j: &DMatrix<f64>, prev: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let nx = j.ncols();
    let t = match prev {
        Some(tp) => {
            let mut b = DMatrix::zeros(nx, nx);
            b.rows_mut(0, nx - 1).copy_from(j);
            b.row_mut(nx - 1).copy_from(&tp.transpose());
            let mut rhs = DVector::zeros(nx);
            rhs[nx - 1] = 1.0;
            let cond = condition(&b);
            if !(cond <= MAX_CONDITION) {
                return Err(Error::SingularJacobian { condition: cond });
            }
            b.lu().solve(&rhs).ok_or(Error::SingularJacobian { condition: cond })?
        }
        None => {
            // null vector of the (nx-1) x nx Jacobian
            let mut sq = DMatrix::zeros(nx, nx);
            sq.rows_mut(0, nx - 1).copy_from(j);
            let svd = sq.svd(false, true);
            let vt = svd.v_t.expect("requested");
            let (imin, _) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, s)| {
                if *s < acc.1 {
                    (i, *s)
                } else {
                    acc
                }
            });
            vt.row(imin).transpose()
        }
    };
    Ok(t.normalize())
}

/// Corrector: Newton on `[G(X); t.(X - Xp)] = 0`.
fn correct(sys: &DefiningSystem, xp: &DVector<f64>, t: &DVector<f64>, max_iter: usize) -> Result<(DVector<f64>, usize, f64)> {
    let nx = xp.len();
    let r = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let g = sys.residual_x(x)?;
        let mut out = DVector::zeros(nx);
        out.rows_mut(0, nx - 1).copy_from(&g);
        out[nx - 1] = t.dot(&(x - xp));
        Ok(out)
    };
    let jac = |x: &DVector<f64>| -> Result<DMatrix<f64>> {
        let j = sys.jacobian_x(x)?;
        let mut b = DMatrix::zeros(nx, nx);
        b.rows_mut(0, nx - 1).copy_from(&j);
        b.row_mut(nx - 1).copy_from(&t.transpose());
        Ok(b)
    };
    newton_core(xp.clone(), &r, &jac, NEWTON_TOL, max_iter)
}

fn make_point(sys: &DefiningSystem, x: &DVector<f64>, step: f64) -> Result<CurvePoint> {
    let (y, a) = split_x(x, sys.n_y);
    let residual = sys.residual(&y, &a)?.norm();
    let monitors = sys.monitor_values(&y, &a);
    let is_virtual = sys.h_monitor.is_some_and(|i| monitors[i] > 1e-9 * (1.0 + y.norm()));
    Ok(CurvePoint { alpha: a, y: y.iter().copied().collect(), monitors, step, residual, is_virtual })
}

fn in_box(a: &Params, b: &Option<[[f64; 2]; 2]>) -> bool {
    match b {
        None => true,
        Some(bx) => (0..2).all(|i| a[i] >= bx[i][0] && a[i] <= bx[i][1]),
    }
}

/// Pseudo-arclength continuation from `start` (a full `X` vector). The
/// initial tangent is oriented to have a positive component along
/// `direction`, when given.
pub fn continue_curve(
    sys: &DefiningSystem,
    start: &DVector<f64>,
    direction: Option<&DVector<f64>>,
    opts: &ContinuationOptions,
) -> Result<BifCurve> {
    if sys.n_eq + 1 != sys.n_y + 2 || start.len() != sys.n_y + 2 {
        return Err(Error::InvalidParams(format!(
            "curve needs n_eq = n_y + 1 (n_eq {}, n_y {}, start {})",
            sys.n_eq,
            sys.n_y,
            start.len()
        )));
    }
    let r0 = sys.residual_x(start).map(|g| g.norm()).unwrap_or(f64::INFINITY);
    let mut x = start.clone();
    if r0 > NEWTON_TOL {
        let j = sys.jacobian_x(start).map_err(|_| Error::InitialPointInvalid { residual: r0 })?;
        let t0 = tangent(&j, None).map_err(|_| Error::InitialPointInvalid { residual: r0 })?;
        x = correct(sys, start, &t0, NEWTON_MAX_ITER).map_err(|_| Error::InitialPointInvalid { residual: r0 })?.0;
    }
    let mut t = tangent(&sys.jacobian_x(&x)?, None)?;
    if let Some(d) = direction {
        if t.dot(d) < 0.0 {
            t = -t;
        }
    }
    let mut curve = BifCurve::new(
        sys.kind,
        sys.labels.clone(),
        sys.monitors.iter().map(|m| m.name.clone()).collect(),
    );
    curve.points.push(make_point(sys, &x, 0.0)?);
    let mut h = opts.h0.min(opts.h_max);
    let x0 = x.clone();
    while curve.points.len() <= opts.steps {
        let xp = &x + &t * h;
        match correct(sys, &xp, &t, opts.corrector_iter) {
            Ok((xn, iters, _)) if (&xn - &x).norm() <= 2.0 * h + 1e-14 => {
                let tn = match sys.jacobian_x(&xn).and_then(|j| tangent(&j, Some(&t))) {
                    Ok(v) => v,
                    Err(_) => {
                        h *= 0.5;
                        if h < opts.h_min {
                            break;
                        }
                        continue;
                    }
                };
                let pt = make_point(sys, &xn, h)?;
                let outside = !in_box(&pt.alpha, &opts.bounds);
                let virt = pt.is_virtual;
                curve.points.push(pt);
                if outside {
                    curve.stop = StopReason::LeftBox;
                    return Ok(curve);
                }
                if virt && opts.stop_at_virtual {
                    curve.stop = StopReason::Virtual;
                    return Ok(curve);
                }
                if curve.points.len() > 3 && (&xn - &x0).norm() < 0.5 * h && tn.dot(&t) > 0.0 {
                    curve.stop = StopReason::Closed;
                    return Ok(curve);
                }
                x = xn;
                t = if tn.dot(&t) < 0.0 { -tn } else { tn };
                if iters <= 3 {
                    h = (h * 1.3).min(opts.h_max);
                }
            }
            _ => {
                h *= 0.5;
                if h < opts.h_min {
                    if curve.points.len() == 1 {
                        return Err(Error::StallError { step: h });
                    }
                    curve.stop = StopReason::Stalled;
                    return Ok(curve);
                }
            }
        }
    }
    if curve.points.len() <= opts.steps {
        curve.stop = StopReason::Stalled;
    }
    Ok(curve)
}

/// Runs `continue_curve` in both directions from `start` and joins the halves.
pub fn continue_both(sys: &DefiningSystem, start: &DVector<f64>, opts: &ContinuationOptions, threads: usize) -> Result<BifCurve> {
    let j = sys.jacobian_x(start)?;
    let t = tangent(&j, None)?;
    let neg = -&t;
    let (fw, bw) = if threads > 1 {
        std::thread::scope(|s| {
            let a = s.spawn(|| continue_curve(sys, start, Some(&t), opts));
            let b = continue_curve(sys, start, Some(&neg), opts);
            (a.join().expect("continuation thread panicked"), b)
        })
    } else {
        (continue_curve(sys, start, Some(&t), opts), continue_curve(sys, start, Some(&neg), opts))
    };
    let mut fw = fw?;
    if let Ok(bw) = bw {
        fw.prepend_reversed(bw);
    }
    Ok(fw)
}

/// Sign changes of monitor `monitor` between consecutive points, each
/// localized on the curve by a secant iteration on the chord parameter.
pub fn detect_special_points(sys: &DefiningSystem, curve: &BifCurve, monitor: usize) -> Vec<SpecialPoint> {
    let mut out = vec![];
    if monitor >= sys.monitors.len() || curve.points.len() < 2 {
        return out;
    }
    let m = &sys.monitors[monitor];
    for i in 0..curve.points.len() - 1 {
        let (p, q) = (&curve.points[i], &curve.points[i + 1]);
        let (ma, mb) = (p.monitors[monitor], q.monitors[monitor]);
        if !(ma.is_finite() && mb.is_finite()) || ma * mb > 0.0 || (ma == 0.0 && i > 0) {
            continue;
        }
        let xa = p.x();
        let xb = q.x();
        let d = &xb - &xa;
        let dn2 = d.dot(&d);
        if dn2 == 0.0 {
            continue;
        }
        let dir = &d / dn2.sqrt();
        let point_at = |s: f64| -> Option<(DVector<f64>, f64)> {
            let xp = &xa + &d * s;
            let (x, _, _) = correct(sys, &xp, &dir, NEWTON_MAX_ITER).ok()?;
            let (y, a) = split_x(&x, sys.n_y);
            let v = m.eval(&y, &a).ok()?;
            Some((x, v))
        };
        let (mut s0, mut f0) = (0.0, ma);
        let (mut s1, mut f1) = (1.0, mb);
        let mut best: Option<(DVector<f64>, f64)> = None;
        let mut side = 0i8;
        for _ in 0..100 {
            let s = if f1 != f0 { s1 - f1 * (s1 - s0) / (f1 - f0) } else { 0.5 * (s0 + s1) };
            let s = if s <= s0.min(s1) || s >= s0.max(s1) { 0.5 * (s0 + s1) } else { s };
            let Some((x, v)) = point_at(s) else { break };
            best = Some((x, v));
            if v == 0.0 || (s1 - s0).abs() * dn2.sqrt() <= 1e-10 {
                break;
            }
            // Illinois bracketing in s
            if v * f1 < 0.0 {
                s0 = s1;
                f0 = f1;
                s1 = s;
                f1 = v;
                side = 0;
            } else {
                s1 = s;
                f1 = v;
                if side == 1 {
                    f0 *= 0.5;
                }
                side = 1;
            }
            if (s1 - s0).abs() * dn2.sqrt() <= 1e-10 {
                break;
            }
        }
        if let Some((x, v)) = best {
            let (y, a) = split_x(&x, sys.n_y);
            let residual = sys.residual(&y, &a).map(|g| g.norm()).unwrap_or(f64::NAN);
            out.push(SpecialPoint {
                monitor: m.name.clone(),
                after: i,
                alpha: a,
                y: y.iter().copied().collect(),
                value: v,
                residual,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle() -> DefiningSystem {
        DefiningSystem::new(CurveKind::Custom, 0, 1, |_, a| Ok(DVector::from_element(1, a[0] * a[0] + a[1] * a[1] - 1.0)))
            .with_monitor(Monitor::new("a2+3", |_, a| Ok(a[1] + 3.0)))
    }

    #[test]
    fn circle_benchmark() {
        let sys = circle();
        let opts = ContinuationOptions { steps: 200, h0: 0.02, h_max: 0.05, ..Default::default() };
        let c = continue_curve(&sys, &DVector::from_vec(vec![1.0, 0.0]), None, &opts).unwrap();
        assert!(c.points.len() >= 100);
        for p in &c.points {
            assert!(p.residual <= 1e-10);
            let r = (p.alpha[0].powi(2) + p.alpha[1].powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-10);
        }
        assert!(detect_special_points(&sys, &c, 0).is_empty());
    }

    #[test]
    fn newton_on_scalar_quadratic() {
        let sys = DefiningSystem::new(CurveKind::FixedPoint, 1, 1, |y, a| {
            Ok(DVector::from_element(1, a[0] + y[0] + y[0] * y[0] - y[0]))
        });
        let (y, _) = newton_solve(&sys, &DVector::from_element(1, -0.15), &[-0.04, 0.5], &[]).unwrap();
        assert!((y[0] + 0.2).abs() < 1e-10);
    }

    #[test]
    fn sign_change_is_localized() {
        let sys = DefiningSystem::new(CurveKind::Custom, 0, 1, |_, a| Ok(DVector::from_element(1, a[0] - 2.0 * a[1])))
            .with_monitor(Monitor::new("a2-0.3", |_, a| Ok(a[1] - 0.3)));
        let opts = ContinuationOptions { steps: 40, h0: 0.05, h_max: 0.05, ..Default::default() };
        let c = continue_curve(&sys, &DVector::from_vec(vec![0.0, 0.0]), Some(&DVector::from_vec(vec![1.0, 1.0])), &opts)
            .unwrap();
        let sp = detect_special_points(&sys, &c, 0);
        assert_eq!(sp.len(), 1);
        assert!((sp[0].alpha[1] - 0.3).abs() < 1e-10);
        assert!((sp[0].alpha[0] - 0.6).abs() < 1e-10);
    }

    #[test]
    fn csv_round_trip() {
        let sys = circle();
        let opts = ContinuationOptions { steps: 5, h0: 0.1, h_max: 0.1, ..Default::default() };
        let c = continue_curve(&sys, &DVector::from_vec(vec![1.0, 0.0]), None, &opts).unwrap();
        let mut buf = vec![];
        c.write_csv(&mut buf).unwrap();
        let back = BifCurve::read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.points.len(), c.points.len());
        assert!((back.points[3].alpha[1] - c.points[3].alpha[1]).abs() < 1e-14);
    }
}
