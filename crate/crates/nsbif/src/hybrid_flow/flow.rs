use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::integrator::{Dopri5, Step, Tolerances};
use super::{BoundaryKind, Direction, HybridSystem};
use crate::bounded_map::Params;
use crate::error::{Error, Result};

/// A scalar event function that is not one of the system boundaries, e.g. a
/// section or the tangency function. Receives the active region index.
pub(crate) struct Extra<'a> {
    pub f: Box<dyn Fn(usize, &[f64]) -> f64 + 'a>,
    pub dir: Direction,
    pub initial_sign: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Hit {
    Boundary(usize),
    Extra(usize),
}

pub(crate) struct Advance {
    pub t: f64,
    pub x: Vec<f64>,
    pub phi: Option<DMatrix<f64>>,
    pub hit: Option<Hit>,
    pub degenerate: bool,
    pub steps: Vec<Step>,
    /// Sign of the hit function just after the event.
    pub post_sign: f64,
}

#[derive(Default)]
pub(crate) struct AdvanceSpec<'a> {
    pub disabled: &'a [usize],
    pub forced: &'a [(usize, f64)],
    pub extras: &'a [Extra<'a>],
    pub record: bool,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Integrates the smooth field of `region` from `(t0, x0)` until the first
/// event or `t_end`. With `phi0`, the variational matrix is carried along.
pub(crate) fn advance(
    sys: &HybridSystem,
    region: usize,
    t0: f64,
    x0: &[f64],
    phi0: Option<&DMatrix<f64>>,
    alpha: &Params,
    t_end: f64,
    spec: &AdvanceSpec<'_>,
) -> Result<Advance> {
    let n = sys.dim;
    let opts = sys.options;
    let reg = &sys.regions[region];
    let cols = phi0.map_or(0, |p| p.ncols());
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        (reg.rhs)(t, &y[..n], alpha, &mut dy[..n]);
        if cols > 0 {
            let j = reg.jacobian(t, &y[..n], alpha);
            for c in 0..cols {
                let base = n + c * n;
                for i in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += j[(i, k)] * y[base + k];
                    }
                    dy[base + i] = acc;
                }
            }
        }
    };
    let total = n + cols * n;
    let ig = Dopri5::new(&rhs, total, Tolerances { rtol: opts.rtol, atol: opts.atol });

    let mut y: Vec<f64> = x0.to_vec();
    if let Some(p) = phi0 {
        y.extend(p.iter());
    }

    let state_b: Vec<usize> = (0..sys.boundaries.len())
        .filter(|b| {
            let bd = &sys.boundaries[*b];
            !bd.is_timed() && bd.monitored_in(region) && !spec.disabled.contains(b) && bd.value(x0, alpha).is_some()
        })
        .collect();
    let timed_b: Vec<usize> = (0..sys.boundaries.len())
        .filter(|b| {
            let bd = &sys.boundaries[*b];
            bd.is_timed() && bd.monitored_in(region) && !spec.disabled.contains(b)
        })
        .collect();
    let eval_b = |b: usize, x: &[f64]| sys.boundaries[b].value(x, alpha).unwrap_or(f64::NAN);

    let mut cur_b: Vec<f64> = state_b.iter().map(|b| eval_b(*b, x0)).collect();
    let mut sgn_b: Vec<f64> = state_b
        .iter()
        .zip(&cur_b)
        .map(|(b, v)| spec.forced.iter().find(|(fb, _)| fb == b).map_or(sign(*v), |f| f.1))
        .collect();
    let mut cur_tan: Vec<f64> = state_b.iter().map(|b| tangency_in(sys, region, *b, x0, alpha)).collect();
    let mut cur_e: Vec<f64> = spec.extras.iter().map(|e| (e.f)(region, x0)).collect();
    let mut sgn_e: Vec<f64> = spec.extras.iter().zip(&cur_e).map(|(e, v)| e.initial_sign.unwrap_or(sign(*v))).collect();

    let (t_timed, timed_hits) = {
        let mut best = f64::INFINITY;
        let mut who: Vec<usize> = vec![];
        for b in &timed_b {
            if let Some(tk) = sys.boundaries[*b].next_time(t0) {
                if tk < best - 1e-13 {
                    best = tk;
                    who = vec![*b];
                } else if (tk - best).abs() <= 1e-13 {
                    who.push(*b);
                }
            }
        }
        (best, who)
    };

    let mut t = t0;
    let mut k1 = ig.rhs(t, &y);
    let target0 = t_end.min(t_timed);
    let mut h = if target0 > t { ig.initial_step(t, &y, &k1, target0 - t) } else { 0.0 };
    let mut steps = Vec::new();
    let mut count = 0usize;

    let split_phi = |y: &[f64]| -> Option<DMatrix<f64>> {
        (cols > 0).then(|| DMatrix::from_column_slice(n, cols, &y[n..]))
    };

    loop {
        let target = t_end.min(t_timed);
        if t >= target {
            let hit = if t_timed <= t_end && t >= t_timed { timed_hits.first().map(|b| Hit::Boundary(*b)) } else { None };
            return Ok(Advance {
                t,
                x: y[..n].to_vec(),
                phi: split_phi(&y),
                hit,
                degenerate: timed_hits.len() > 1 && hit.is_some(),
                steps,
                post_sign: 0.0,
            });
        }
        count += 1;
        if count > opts.max_steps {
            return Err(Error::StiffnessFailure { t });
        }
        let span = target - t;
        let st = ig.step(t, &y, &k1, &mut h, span)?;
        let t1 = if st.h == span { target } else { st.t1() };
        let x1 = &st.y1[..n];

        // state-dependent events inside (t, t1]
        let mut cands: Vec<Cand> = vec![];
        let new_b: Vec<f64> = state_b.iter().map(|b| eval_b(*b, x1)).collect();
        let new_tan: Vec<f64> = state_b.iter().map(|b| tangency_in(sys, region, *b, x1, alpha)).collect();
        for (i, b) in state_b.iter().enumerate() {
            let bd = &sys.boundaries[*b];
            let g = |x: &[f64]| eval_b(*b, x);
            if bd.direction.triggers(sgn_b[i], new_b[i]) {
                let fa = anchored(cur_b[i], sgn_b[i]);
                let tau = dense_root(&st, t, t1, fa, new_b[i], &g, n, opts.event_tol);
                cands.push(Cand { tau, hit: Hit::Boundary(*b), order: *b, bracket: Some((t, fa, t1, new_b[i])) });
                continue;
            }
            // touch or excursion inside the step: the tangency changes sign
            // towards a maximum of the oriented D
            let o = match bd.direction {
                Direction::Rising => 1.0,
                Direction::Falling => -1.0,
                Direction::Either => continue,
            };
            if o * sgn_b[i] < 0.0 && o * cur_tan[i] > 0.0 && o * new_tan[i] <= 0.0 {
                let gt = |x: &[f64]| tangency_in(sys, region, *b, x, alpha);
                let tau = dense_root(&st, t, t1, cur_tan[i], new_tan[i], &gt, n, 1e-14);
                let d = g(&st.eval(tau)[..n]);
                if o * d > 0.0 {
                    let fa = anchored(cur_b[i], sgn_b[i]);
                    let tr = dense_root(&st, t, tau, fa, d, &g, n, opts.event_tol);
                    cands.push(Cand { tau: tr, hit: Hit::Boundary(*b), order: *b, bracket: Some((t, fa, tau, d)) });
                } else if o * d >= -opts.event_tol {
                    cands.push(Cand { tau, hit: Hit::Boundary(*b), order: *b, bracket: None });
                }
            }
        }
        let new_e: Vec<f64> = spec.extras.iter().map(|e| (e.f)(region, x1)).collect();
        for (i, e) in spec.extras.iter().enumerate() {
            if e.dir.triggers(sgn_e[i], new_e[i]) {
                let g = |x: &[f64]| (e.f)(region, x);
                let fa = anchored(cur_e[i], sgn_e[i]);
                let tau = dense_root(&st, t, t1, fa, new_e[i], &g, n, opts.event_tol);
                cands.push(Cand {
                    tau,
                    hit: Hit::Extra(i),
                    order: sys.boundaries.len() + i,
                    bracket: Some((t, fa, t1, new_e[i])),
                });
            }
        }
        if !cands.is_empty() {
            cands.sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap().then(a.order.cmp(&b.order)));
            let first = cands[0].tau;
            let mut tied: Vec<&Cand> = cands.iter().filter(|c| c.tau - first <= opts.simultaneity_tol).collect();
            tied.sort_by_key(|c| c.order);
            let chosen = tied[0];
            let degenerate = tied.len() > 1;
            let (prev_sign, dir) = match chosen.hit {
                Hit::Boundary(b) => {
                    let i = state_b.iter().position(|x| *x == b).unwrap();
                    (sgn_b[i], sys.boundaries[b].direction)
                }
                Hit::Extra(e) => (sgn_e[e], spec.extras[e].dir),
            };
            let g: Box<dyn Fn(&[f64]) -> f64> = match chosen.hit {
                Hit::Boundary(b) => Box::new(move |x: &[f64]| eval_b(b, x)),
                Hit::Extra(e) => Box::new(move |x: &[f64]| (spec.extras[e].f)(region, x)),
            };
            let (te, part) = match chosen.bracket {
                Some((a, fa, b, fb)) => refine_root(&ig, &st, a, fa, b, fb, chosen.tau, &*g, n, opts.event_tol),
                None => (chosen.tau, ig.attempt(t, &st.y0, &st.k[0], chosen.tau - t).0),
            };
            let post_sign = match dir {
                Direction::Rising => 1.0,
                Direction::Falling => -1.0,
                Direction::Either => -prev_sign,
            };
            let y_e = part.y1.clone();
            if spec.record {
                steps.push(part);
            }
            return Ok(Advance {
                t: te,
                x: y_e[..n].to_vec(),
                phi: split_phi(&y_e),
                hit: Some(chosen.hit),
                degenerate,
                steps,
                post_sign,
            });
        }

        for (i, v) in new_b.iter().enumerate() {
            if *v != 0.0 {
                sgn_b[i] = sign(*v);
            }
        }
        for (i, v) in new_e.iter().enumerate() {
            if *v != 0.0 {
                sgn_e[i] = sign(*v);
            }
        }
        cur_b = new_b;
        cur_tan = new_tan;
        cur_e = new_e;
        t = t1;
        y = st.y1.clone();
        k1 = st.k[6].clone();
        if spec.record {
            steps.push(st);
        }
    }
}

struct Cand {
    tau: f64,
    hit: Hit,
    order: usize,
    /// Sign-change bracket; `None` for a touch located at `tau` exactly.
    bracket: Option<(f64, f64, f64, f64)>,
}

/// Value at the bracket start carrying the logical sign (which may have been
/// forced right after a crossing).
fn anchored(value: f64, logical: f64) -> f64 {
    if sign(value) == logical && value != 0.0 {
        value
    } else {
        logical * 1e-300
    }
}

fn dense_root(st: &Step, a: f64, b: f64, fa: f64, fb: f64, g: &dyn Fn(&[f64]) -> f64, n: usize, tol: f64) -> f64 {
    illinois(a, fa, b, fb, tol * 0.1, |t| g(&st.eval(t)[..n])).0
}

/// Event time refined on true integration steps from the step start, so the
/// reported state is an integrator solution rather than an interpolant.
#[allow(clippy::too_many_arguments)]
fn refine_root(
    ig: &Dopri5<'_>,
    st: &Step,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    guess: f64,
    g: &dyn Fn(&[f64]) -> f64,
    n: usize,
    tol: f64,
) -> (f64, Step) {
    let k1 = &st.k[0];
    let take = |t: f64| ig.attempt(a, &st.y0, k1, t - a).0;
    let gt = |t: f64| g(&take(t).y1[..n]);
    let (mut lo, mut flo, mut hi, mut fhi) = (a, fa, b, fb);
    let x = guess.clamp(a, b);
    let fx = gt(x);
    if fx.abs() <= tol {
        return (x, take(x));
    }
    if sign(fx) == sign(flo) {
        lo = x;
        flo = fx;
    } else {
        hi = x;
        fhi = fx;
    }
    let (t, _) = illinois(lo, flo, hi, fhi, tol, gt);
    (t, take(t))
}

/// Illinois false position on a bracket with `fa * fb <= 0`. Returns the
/// root estimate and its function value.
fn illinois(mut a: f64, mut fa: f64, mut b: f64, mut fb: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    if fb.abs() <= tol {
        return (b, fb);
    }
    let mut side = 0i8;
    let mut best = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    for _ in 0..200 {
        let x = if fb != fa { (a * fb - b * fa) / (fb - fa) } else { 0.5 * (a + b) };
        let x = if x <= a.min(b) || x >= a.max(b) { 0.5 * (a + b) } else { x };
        let fx = f(x);
        if fx.abs() < best.1.abs() || (fx.abs() <= tol) {
            best = (x, fx);
        }
        if fx.abs() <= tol {
            return (x, fx);
        }
        if sign(fx) == sign(fb) {
            b = x;
            fb = fx;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = x;
            fa = fx;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if (b - a).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0) {
            break;
        }
    }
    // prefer the endpoint that is past the event so the caller sees the switch
    if fb.abs() <= fa.abs() * 1e3 || best.1.abs() > tol {
        (b, fb)
    } else {
        best
    }
}

/// Event record attached to a segment.
#[derive(Debug, Clone, Serialize)]
pub struct EventRecord {
    pub boundary: usize,
    pub time: f64,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub region_after: usize,
    /// `D` at the reported pre-event state (zero for timed events).
    pub residual: f64,
    /// `<f, grad D>` just before the event.
    pub tangency: f64,
    pub grazing: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct TrajectorySegment {
    pub region: usize,
    pub t0: f64,
    pub t1: f64,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub steps: Vec<Step>,
    pub event: Option<EventRecord>,
}

impl TrajectorySegment {
    /// Dense-output state at `t` in `[t0, t1]`.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let n = self.x0.len();
        for s in &self.steps {
            if t <= s.t1() + 1e-15 {
                return s.eval(t)[..n].to_vec();
            }
        }
        self.x1.clone()
    }
}

pub(crate) fn apply_event(
    sys: &HybridSystem,
    b: usize,
    region: usize,
    x: &[f64],
    alpha: &Params,
) -> Result<(usize, Vec<f64>)> {
    let bd = &sys.boundaries[b];
    if bd.sliding {
        return Err(Error::NotSupported(format!("flow reaches sliding boundary '{}'", bd.name)));
    }
    let x2 = match bd.kind {
        BoundaryKind::Crossing => x.to_vec(),
        _ => bd.apply_reset(x, alpha),
    };
    let r2 = bd.next_region(region, &x2, alpha, sys.regions.len());
    if r2 >= sys.regions.len() {
        return Err(Error::InvalidParams(format!("switch rule returned unknown region {r2}")));
    }
    Ok((r2, x2))
}

/// Saltation matrix of event `b` taking `(region, x_pre)` to `(region2, x_post)` at time `t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn saltation(
    sys: &HybridSystem,
    b: usize,
    region: usize,
    region2: usize,
    t: f64,
    x_pre: &[f64],
    x_post: &[f64],
    alpha: &Params,
) -> DMatrix<f64> {
    let bd = &sys.boundaries[b];
    let n = sys.dim;
    let rx = if bd.has_reset() && bd.kind != BoundaryKind::Crossing {
        bd.reset_jacobian(x_pre, alpha)
    } else {
        DMatrix::identity(n, n)
    };
    if bd.is_timed() {
        return rx;
    }
    let grad = DVector::from_vec(bd.gradient(x_pre, alpha).unwrap_or_else(|| vec![0.0; n]));
    let fm = DVector::from_vec(sys.rhs(region, t, x_pre, alpha));
    let fp = DVector::from_vec(sys.rhs(region2, t, x_post, alpha));
    let denom = grad.dot(&fm);
    if denom.abs() < 1e-300 {
        return rx;
    }
    let corr = (fp - &rx * &fm) * grad.transpose() / denom;
    rx + corr
}

pub(crate) fn event_record(
    sys: &HybridSystem,
    b: usize,
    region: usize,
    t: f64,
    pre: &[f64],
    post: Vec<f64>,
    region_after: usize,
    alpha: &Params,
    degenerate: bool,
) -> EventRecord {
    let bd = &sys.boundaries[b];
    let (residual, tangency) = if bd.is_timed() {
        (0.0, f64::NAN)
    } else {
        let r = bd.value(pre, alpha).unwrap_or(0.0);
        let g = bd.gradient(pre, alpha).unwrap_or_default();
        let f = sys.rhs(region, t, pre, alpha);
        (r, g.iter().zip(&f).map(|(a, b)| a * b).sum())
    };
    EventRecord {
        boundary: b,
        time: t,
        pre: pre.to_vec(),
        post,
        region_after,
        residual,
        tangency,
        grazing: tangency.abs() < sys.options.grazing_tol,
        degenerate,
    }
}

/// Integrates from `x0` until the first event of any boundary. When `t_max`
/// is reached first the segment is returned with `event: None`.
pub fn integrate_segment(sys: &HybridSystem, x0: &[f64], alpha: &Params, t_max: f64) -> Result<TrajectorySegment> {
    let region = sys.locate(x0, alpha)?;
    segment_from(sys, region, 0.0, x0, alpha, t_max, &[])
}

fn segment_from(
    sys: &HybridSystem,
    region: usize,
    t0: f64,
    x0: &[f64],
    alpha: &Params,
    t_max: f64,
    forced: &[(usize, f64)],
) -> Result<TrajectorySegment> {
    let spec = AdvanceSpec { forced, record: true, ..Default::default() };
    let adv = advance(sys, region, t0, x0, None, alpha, t_max, &spec)?;
    let event = match adv.hit {
        Some(Hit::Boundary(b)) => {
            let (r2, post) = apply_event(sys, b, region, &adv.x, alpha)?;
            Some(event_record(sys, b, region, adv.t, &adv.x, post, r2, alpha, adv.degenerate))
        }
        _ => None,
    };
    Ok(TrajectorySegment { region, t0, t1: adv.t, x0: x0.to_vec(), x1: adv.x, steps: adv.steps, event })
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub segments: Vec<TrajectorySegment>,
    pub degenerate: bool,
}

impl Trajectory {
    pub fn events(&self) -> impl Iterator<Item = &EventRecord> {
        self.segments.iter().filter_map(|s| s.event.as_ref())
    }

    pub fn final_state(&self) -> Vec<f64> {
        let last = self.segments.last().expect("trajectory has a segment");
        match &last.event {
            Some(e) => e.post.clone(),
            None => last.x1.clone(),
        }
    }

    /// Smallest event period `q` such that the last post-event state recurs
    /// `q` events earlier within `tol`, checked over two consecutive windows.
    pub fn detect_period(&self, tol: f64) -> Option<usize> {
        let ev: Vec<&EventRecord> = self.events().collect();
        let m = ev.len();
        for q in 1..=m / 3 {
            let ok = (0..q.max(2)).all(|j| {
                let a = &ev[m - 1 - j];
                let b = &ev[m - 1 - j - q];
                a.boundary == b.boundary
                    && a.post.iter().zip(&b.post).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) <= tol
            });
            if ok {
                return Some(q);
            }
        }
        None
    }

    /// Writes `t, x1..xn, region_id, event_flag` rows (event rows flagged 1).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.segments.first().map_or(0, |s| s.x0.len());
        writeln!(w, "# nsbif-csv v1")?;
        let mut head = vec!["t".to_string()];
        head.extend((1..=n).map(|i| format!("x{i}")));
        head.push("region_id".into());
        head.push("event_flag".into());
        writeln!(w, "{}", head.join(","))?;
        let row = |w: &mut W, t: f64, x: &[f64], r: usize, flag: u8| -> io::Result<()> {
            write!(w, "{t:.12e}")?;
            for v in x {
                write!(w, ",{v:.12e}")?;
            }
            writeln!(w, ",{r},{flag}")
        };
        for s in &self.segments {
            row(&mut w, s.t0, &s.x0, s.region, 0)?;
            for st in s.steps.iter().take(s.steps.len().saturating_sub(1)) {
                row(&mut w, st.t1(), &st.y1[..n], s.region, 0)?;
            }
            row(&mut w, s.t1, &s.x1, s.region, u8::from(s.event.is_some()))?;
        }
        Ok(())
    }
}

/// Chains segments through resets and switches until `t_max`.
pub fn simulate(sys: &HybridSystem, x0: &[f64], alpha: &Params, t_max: f64) -> Result<Trajectory> {
    let mut region = sys.locate(x0, alpha)?;
    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut forced: Vec<(usize, f64)> = vec![];
    let mut segments = vec![];
    let mut degenerate = false;
    let mut events = 0usize;
    loop {
        let spec = AdvanceSpec { forced: &forced, record: true, ..Default::default() };
        let adv = advance(sys, region, t, &x, None, alpha, t_max, &spec)?;
        match adv.hit {
            Some(Hit::Boundary(b)) => {
                events += 1;
                if events > sys.options.max_events {
                    return Err(Error::EventAccumulation { max_events: sys.options.max_events });
                }
                degenerate |= adv.degenerate;
                let (r2, post) = apply_event(sys, b, region, &adv.x, alpha)?;
                let rec = event_record(sys, b, region, adv.t, &adv.x, post.clone(), r2, alpha, adv.degenerate);
                forced = if sys.boundaries[b].kind == BoundaryKind::Crossing {
                    vec![(b, adv.post_sign)]
                } else {
                    vec![]
                };
                segments.push(TrajectorySegment {
                    region,
                    t0: t,
                    t1: adv.t,
                    x0: x,
                    x1: adv.x,
                    steps: adv.steps,
                    event: Some(rec),
                });
                region = r2;
                x = post;
                t = adv.t;
                if t >= t_max {
                    break;
                }
            }
            _ => {
                segments.push(TrajectorySegment {
                    region,
                    t0: t,
                    t1: adv.t,
                    x0: x,
                    x1: adv.x,
                    steps: adv.steps,
                    event: None,
                });
                break;
            }
        }
    }
    Ok(Trajectory { segments, degenerate })
}

/// Flow of a single region for a fixed duration, ignoring all boundaries,
/// optionally with the state-transition matrix.
pub fn flow_for(
    sys: &HybridSystem,
    region: usize,
    x0: &[f64],
    alpha: &Params,
    duration: f64,
    with_jacobian: bool,
) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
    let all: Vec<usize> = (0..sys.boundaries.len()).collect();
    let spec = AdvanceSpec { disabled: &all, ..Default::default() };
    let eye = DMatrix::identity(sys.dim, sys.dim);
    let adv = advance(sys, region, 0.0, x0, with_jacobian.then_some(&eye), alpha, duration, &spec)?;
    Ok((adv.x, adv.phi))
}

/// `<f_active(x), grad D_b(x)>`.
pub fn tangency_value(sys: &HybridSystem, boundary: usize, x: &[f64], alpha: &Params) -> Result<f64> {
    let region = sys.locate(x, alpha)?;
    Ok(tangency_in(sys, region, boundary, x, alpha))
}

pub(crate) fn tangency_in(sys: &HybridSystem, region: usize, boundary: usize, x: &[f64], alpha: &Params) -> f64 {
    let Some(g) = sys.boundaries[boundary].gradient(x, alpha) else {
        return 0.0;
    };
    let f = sys.rhs(region, 0.0, x, alpha);
    g.iter().zip(&f).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid_flow::{Boundary, Region};

    fn bush() -> HybridSystem {
        let r = Region::new("growth", |_, x, _, d| {
            d[0] = 0.375 * x[0] * (1.0 - x[0]);
            d[1] = 0.0;
        });
        let b = Boundary::impact("bush", |x, _| x[0] - 0.85, |x, _| vec![0.03 * 0.85, x[1]]);
        HybridSystem::new("bush", 2, vec![r], vec![b])
    }

    fn parabola() -> HybridSystem {
        let r = Region::new("drift", |_, x, _, d| {
            d[0] = 1.0;
            d[1] = x[0];
        });
        let b = Boundary::impact("wall", |x, _| 1.0 - x[1], |x, _| x.to_vec());
        HybridSystem::new("parabola", 2, vec![r], vec![b])
    }

    #[test]
    fn logistic_event_time() {
        let seg = integrate_segment(&bush(), &[0.5, 0.0], &[0.0, 0.0], 100.0).unwrap();
        let ev = seg.event.unwrap();
        let exact = (17.0f64 / 3.0).ln() / 0.375;
        assert!((ev.time - exact).abs() < 1e-6, "{}", ev.time);
        assert!(ev.residual.abs() <= 1e-12);
        assert!((ev.post[0] - 0.0255).abs() < 1e-15);
    }

    #[test]
    fn grazing_parabola() {
        // x2 = 1.5 - t + t^2/2 touches 1 at t = 1
        let seg = integrate_segment(&parabola(), &[-1.0, 1.5], &[0.0, 0.0], 5.0).unwrap();
        let ev = seg.event.expect("grazing event");
        assert!((ev.time - 1.0).abs() < 1e-5, "{}", ev.time);
        assert!(ev.residual.abs() <= 1e-12);
        assert!(ev.grazing || ev.tangency.abs() < 1e-5);
    }

    #[test]
    fn no_event_returns_open_segment() {
        let seg = integrate_segment(&parabola(), &[-1.0, 2.0], &[0.0, 0.0], 1.0).unwrap();
        assert!(seg.event.is_none());
        assert!((seg.t1 - 1.0).abs() < 1e-15);
        assert!((seg.x1[1] - 1.5).abs() < 1e-10);
    }

    #[test]
    fn timed_event_is_exact() {
        let r = Region::new("still", |_, x, _, d| d[0] = -x[0]);
        let b = Boundary::timed("tick", 3.2, 0.0);
        let sys = HybridSystem::new("tick", 1, vec![r], vec![b]);
        let seg = integrate_segment(&sys, &[1.0], &[0.0, 0.0], 10.0).unwrap();
        assert_eq!(seg.event.unwrap().time, 3.2);
        let tr = simulate(&sys, &[1.0], &[0.0, 0.0], 10.0).unwrap();
        let times: Vec<f64> = tr.events().map(|e| e.time).collect();
        assert_eq!(times.len(), 3);
        assert!((times[2] - 9.6).abs() < 1e-12);
    }

    #[test]
    fn tangency_of_drift_flow() {
        let sys = parabola();
        for x1 in [-0.7, 0.0, 1.3] {
            let t = tangency_value(&sys, 0, &[x1, 0.4], &[0.0, 0.0]).unwrap();
            // D = 1 - x2, so <f, grad D> = -x1
            assert!((t + x1).abs() < 1e-8);
        }
    }

    #[test]
    fn flow_for_jacobian_matches_exponential() {
        let r = Region::new("lin", |_, x, _, d| {
            d[0] = -x[0];
            d[1] = 2.0 * x[1];
        });
        let sys = HybridSystem::new("lin", 2, vec![r], vec![]);
        let (x, phi) = flow_for(&sys, 0, &[1.0, 1.0], &[0.0, 0.0], 0.5, true).unwrap();
        let phi = phi.unwrap();
        assert!((x[0] - (-0.5f64).exp()).abs() < 1e-9);
        assert!((phi[(1, 1)] - 1f64.exp()).abs() < 1e-8);
        assert!(phi[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn csv_has_header_and_event_rows() {
        let tr = simulate(&bush(), &[0.5, 0.0], &[0.0, 0.0], 20.0).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("# nsbif-csv v1"));
        assert_eq!(lines.next(), Some("t,x1,x2,region_id,event_flag"));
        assert!(s.lines().filter(|l| l.ends_with(",1")).count() >= 2);
    }
}
