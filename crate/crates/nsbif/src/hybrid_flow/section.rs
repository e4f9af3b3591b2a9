use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::flow::{advance, apply_event, saltation, tangency_in, AdvanceSpec, Extra, Hit};
use super::{BoundaryKind, Direction, HybridSystem};
use crate::bounded_map::{BoundedMap, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SectionKind {
    /// `<normal, x - anchor> = 0`, crossed in the direction the flow has at the anchor.
    Hyperplane { normal: Vec<f64> },
    /// Pre-event states of a boundary. The event is applied first, and the
    /// map returns at the next event of the same boundary.
    Event { boundary: usize },
}

/// How the one-sided domain function `H` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// No boundary studied, `H = -1` everywhere.
    None,
    /// `H` is `D_b` at the first zero of the tangency function; `b` is ignored
    /// by the map itself so that it extends smoothly across `H = 0`.
    Tangency(usize),
    /// `H = orientation * D_b` at the section point (guards of timed events).
    Guard { boundary: usize, orientation: f64 },
}

#[derive(Debug, Clone)]
pub struct PoincareSection {
    pub kind: SectionKind,
    pub anchor: Vec<f64>,
    /// Orthonormal columns spanning the section coordinates.
    pub chart: DMatrix<f64>,
    /// Region of the flow at section points.
    pub region: usize,
    /// Time at the section (matters for timed boundaries).
    pub t0: f64,
    pub t_max: f64,
    pub target: Target,
}

impl PoincareSection {
    /// Hyperplane section with a chart spanning the orthogonal complement of `normal`.
    pub fn hyperplane(sys: &HybridSystem, anchor: Vec<f64>, normal: Vec<f64>, alpha: &Params) -> Result<Self> {
        let n = DVector::from_vec(normal);
        let norm = n.norm();
        if norm == 0.0 || n.len() != sys.dim || anchor.len() != sys.dim {
            return Err(Error::InvalidSection("normal and anchor must be nonzero vectors of the state dimension".into()));
        }
        let n = n / norm;
        let region = sys.locate(&anchor, alpha)?;
        let f = DVector::from_vec(sys.rhs(region, 0.0, &anchor, alpha));
        let flux = f.dot(&n);
        if flux.abs() <= 1e-8 * f.norm().max(1.0) {
            return Err(Error::InvalidSection(format!("flow not transverse at anchor (<f, n> = {flux:.3e})")));
        }
        Ok(PoincareSection {
            chart: complement(&n),
            kind: SectionKind::Hyperplane { normal: n.iter().copied().collect() },
            anchor,
            region,
            t0: 0.0,
            t_max: 1e3,
            target: Target::None,
        })
    }

    /// Section at the pre-event states of boundary `b` with an explicit chart.
    pub fn at_event(boundary: usize, anchor: Vec<f64>, chart: DMatrix<f64>, region: usize) -> Self {
        PoincareSection {
            kind: SectionKind::Event { boundary },
            anchor,
            chart,
            region,
            t0: 0.0,
            t_max: 1e3,
            target: Target::None,
        }
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = target;
        self
    }

    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_chart(mut self, chart: DMatrix<f64>) -> Self {
        self.chart = chart;
        self
    }

    pub fn dim(&self) -> usize {
        self.chart.ncols()
    }

    pub fn to_state(&self, z: &DVector<f64>) -> Vec<f64> {
        let x = DVector::from_column_slice(&self.anchor) + &self.chart * z;
        x.iter().copied().collect()
    }

    pub fn to_coords(&self, x: &[f64]) -> DVector<f64> {
        let d = DVector::from_column_slice(x) - DVector::from_column_slice(&self.anchor);
        self.chart.transpose() * d
    }

    fn target_boundary(&self) -> Option<usize> {
        match self.target {
            Target::Tangency(b) => Some(b),
            _ => None,
        }
    }
}

/// Orthonormal basis of the complement of the unit vector `n` (Householder).
fn complement(n: &DVector<f64>) -> DMatrix<f64> {
    let d = n.len();
    let mut v = n.clone();
    let s = if n[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += s;
    let vv = v.dot(&v);
    let h = DMatrix::identity(d, d) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, d - 1).into_owned()
}

struct Return {
    z: DVector<f64>,
    time: f64,
    jac: Option<DMatrix<f64>>,
}

enum Stop {
    Return,
    Tangency,
}

/// Shared driver: starts at the section point for `z` and chains events
/// until a section return (or the tangency zero when `tangency` is set).
fn run(
    sys: &HybridSystem,
    sec: &PoincareSection,
    z: &DVector<f64>,
    alpha: &Params,
    with_jac: bool,
    tangency: Option<usize>,
) -> Result<(Stop, f64, Vec<f64>, usize, Option<DMatrix<f64>>)> {
    if z.len() != sec.dim() {
        return Err(Error::InvalidSection(format!("expected {} coordinates, got {}", sec.dim(), z.len())));
    }
    let disabled: Vec<usize> = sec.target_boundary().into_iter().collect();
    let mut x = sec.to_state(z);
    let mut region = sec.region;
    let mut t = sec.t0;
    let mut phi = with_jac.then(|| sec.chart.clone());
    let mut forced: Vec<(usize, f64)> = vec![];

    if let SectionKind::Event { boundary } = sec.kind {
        let (r2, x2) = apply_event(sys, boundary, region, &x, alpha)?;
        if let Some(p) = phi.as_mut() {
            *p = saltation(sys, boundary, region, r2, t, &x, &x2, alpha) * &*p;
        }
        let bd = &sys.boundaries[boundary];
        if bd.kind == BoundaryKind::Crossing {
            let post = match bd.direction {
                Direction::Rising => 1.0,
                Direction::Falling => -1.0,
                Direction::Either => -bd.value(&x, alpha).unwrap_or(0.0).signum(),
            };
            forced.push((boundary, post));
        }
        region = r2;
        x = x2;
    }

    let section_extra = match &sec.kind {
        SectionKind::Hyperplane { normal } => {
            let f0 = sys.rhs(sec.region, sec.t0, &sec.to_state(z), alpha);
            let flux: f64 = normal.iter().zip(&f0).map(|(a, b)| a * b).sum();
            let anchor = sec.anchor.clone();
            let nrm = normal.clone();
            let (dir, sgn) = if flux >= 0.0 { (Direction::Rising, 1.0) } else { (Direction::Falling, -1.0) };
            Some((nrm, anchor, dir, sgn))
        }
        SectionKind::Event { .. } => None,
    };

    let t_end = sec.t0 + sec.t_max;
    let mut first = true;
    let mut events = 0usize;
    loop {
        let mut extras: Vec<Extra<'_>> = vec![];
        if let Some((nrm, anchor, dir, sgn)) = &section_extra {
            let (nrm, anchor) = (nrm.clone(), anchor.clone());
            extras.push(Extra {
                f: Box::new(move |_, x: &[f64]| nrm.iter().zip(x.iter().zip(&anchor)).map(|(n, (a, b))| n * (a - b)).sum()),
                dir: *dir,
                initial_sign: first.then_some(*sgn),
            });
        }
        if let Some(b) = tangency {
            extras.push(Extra {
                f: Box::new(move |r, x: &[f64]| tangency_in(sys, r, b, x, alpha)),
                dir: Direction::Either,
                initial_sign: None,
            });
        }
        let spec = AdvanceSpec { disabled: &disabled, forced: &forced, extras: &extras, record: false };
        let adv = advance(sys, region, t, &x, phi.as_ref(), alpha, t_end, &spec)?;
        first = false;
        let hit = match adv.hit {
            None => {
                return Err(if tangency.is_some() { Error::NoTangency } else { Error::NoReturn });
            }
            Some(h) => h,
        };
        let is_return = match (&sec.kind, hit) {
            (SectionKind::Hyperplane { .. }, Hit::Extra(0)) => true,
            (SectionKind::Event { boundary }, Hit::Boundary(b)) => b == *boundary,
            _ => false,
        };
        if is_return {
            if tangency.is_some() {
                return Err(Error::NoTangency);
            }
            // event-time variation along the return surface
            let jac = adv.phi.map(|p| {
                let grad = match &sec.kind {
                    SectionKind::Hyperplane { normal } => Some(normal.clone()),
                    SectionKind::Event { boundary } => {
                        let bd = &sys.boundaries[*boundary];
                        if bd.is_timed() {
                            None
                        } else {
                            bd.gradient(&adv.x, alpha)
                        }
                    }
                };
                let proj = match grad {
                    Some(g) => {
                        let g = DVector::from_vec(g);
                        let f = DVector::from_vec(sys.rhs(region, adv.t, &adv.x, alpha));
                        DMatrix::identity(sys.dim, sys.dim) - (&f * g.transpose()) / g.dot(&f)
                    }
                    None => DMatrix::identity(sys.dim, sys.dim),
                };
                sec.chart.transpose() * proj * p
            });
            return Ok((Stop::Return, adv.t, adv.x, region, jac));
        }
        if matches!(hit, Hit::Extra(_)) {
            // tangency zero
            return Ok((Stop::Tangency, adv.t, adv.x, region, None));
        }
        let Hit::Boundary(b) = hit else { unreachable!() };
        events += 1;
        if events > sys.options.max_events {
            return Err(Error::EventAccumulation { max_events: sys.options.max_events });
        }
        let (r2, x2) = apply_event(sys, b, region, &adv.x, alpha)?;
        phi = adv.phi.map(|p| saltation(sys, b, region, r2, adv.t, &adv.x, &x2, alpha) * p);
        forced = if sys.boundaries[b].kind == BoundaryKind::Crossing { vec![(b, adv.post_sign)] } else { vec![] };
        region = r2;
        x = x2;
        t = adv.t;
    }
}

/// One-sided domain function of the section map at coordinates `z`.
pub fn boundary_h(sys: &HybridSystem, sec: &PoincareSection, z: &DVector<f64>, alpha: &Params) -> Result<f64> {
    match sec.target {
        Target::None => Ok(-1.0),
        Target::Guard { boundary, orientation } => {
            let x = sec.to_state(z);
            sys.boundaries[boundary]
                .value(&x, alpha)
                .map(|d| orientation * d)
                .ok_or_else(|| Error::InvalidSection("guard boundary has no scalar function".into()))
        }
        Target::Tangency(b) => {
            let (_, _, x, _, _) = run(sys, sec, z, alpha, false, Some(b))?;
            Ok(sys.boundaries[b].value(&x, alpha).unwrap_or(0.0))
        }
    }
}

fn map_ext(
    sys: &HybridSystem,
    sec: &PoincareSection,
    z: &DVector<f64>,
    alpha: &Params,
    with_jac: bool,
) -> Result<Return> {
    let (_, t, x, _, jac) = run(sys, sec, z, alpha, with_jac, None)?;
    Ok(Return { z: sec.to_coords(&x), time: t - sec.t0, jac })
}

/// Next section coordinates and the return time. Refuses points with
/// `H >= tol_H`.
pub fn poincare_map(
    sys: &HybridSystem,
    sec: &PoincareSection,
    z: &DVector<f64>,
    alpha: &Params,
) -> Result<(DVector<f64>, f64)> {
    let h = boundary_h(sys, sec, z, alpha)?;
    let tol = crate::bounded_map::DEFAULT_TOL_H * (1.0 + z.norm());
    if !(h < tol) {
        return Err(Error::DomainViolation { h_value: h });
    }
    let r = map_ext(sys, sec, z, alpha, false)?;
    Ok((r.z, r.time))
}

/// The section map as a [`BoundedMap`]. The evaluator ignores the target
/// boundary, hence is the smooth extension across `H = 0`; the Jacobian
/// comes from the variational equations with saltation corrections.
pub fn as_bounded_map(sys: &HybridSystem, sec: &PoincareSection) -> BoundedMap {
    let s1 = Arc::new(sys.clone());
    let p1 = Arc::new(sec.clone());
    let (s2, p2) = (s1.clone(), p1.clone());
    let (s3, p3) = (s1.clone(), p1.clone());
    let name = format!("{} section map", sys.name);
    BoundedMap::new(
        name,
        sec.dim(),
        move |z, a| map_ext(&s1, &p1, z, a, false).map(|r| r.z),
        move |z, a| boundary_h(&s2, &p2, z, a),
    )
    .with_jacobian(move |z, a| {
        map_ext(&s3, &p3, z, a, true).map(|r| r.jac.expect("variational matrix requested"))
    })
    .with_smooth_extension(true)
}
