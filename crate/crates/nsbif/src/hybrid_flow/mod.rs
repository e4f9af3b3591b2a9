//! Nonsmooth ODEs with crossing, impact and timed boundaries, and the
//! one-sided Poincaré maps they induce.

mod flow;
pub mod integrator;
mod section;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::bounded_map::Params;
use crate::error::{Error, Result};

pub use flow::{
    flow_for, integrate_segment, simulate, tangency_value, EventRecord, Trajectory, TrajectorySegment,
};
pub use section::{as_bounded_map, boundary_h, poincare_map, PoincareSection, SectionKind, Target};

pub type RhsFn = dyn Fn(f64, &[f64], &Params, &mut [f64]) + Send + Sync;
pub type RhsJacobianFn = dyn Fn(f64, &[f64], &Params) -> DMatrix<f64> + Send + Sync;
pub type EventFn = dyn Fn(&[f64], &Params) -> f64 + Send + Sync;
pub type ResetFn = dyn Fn(&[f64], &Params) -> Vec<f64> + Send + Sync;
pub type SwitchFn = dyn Fn(usize, &[f64], &Params) -> usize + Send + Sync;
pub type LocateFn = dyn Fn(&[f64], &Params) -> usize + Send + Sync;

#[derive(Clone)]
pub struct Region {
    pub name: String,
    rhs: Arc<RhsFn>,
    jac: Option<Arc<RhsJacobianFn>>,
}

impl Region {
    pub fn new<F>(name: impl Into<String>, rhs: F) -> Self
    where
        F: Fn(f64, &[f64], &Params, &mut [f64]) + Send + Sync + 'static,
    {
        Region { name: name.into(), rhs: Arc::new(rhs), jac: None }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(f64, &[f64], &Params) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(jac));
        self
    }

    pub fn eval(&self, t: f64, x: &[f64], alpha: &Params) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        (self.rhs)(t, x, alpha, &mut out);
        out
    }

    pub fn jacobian(&self, t: f64, x: &[f64], alpha: &Params) -> DMatrix<f64> {
        if let Some(j) = &self.jac {
            return j(t, x, alpha);
        }
        let n = x.len();
        let mut m = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            let fp = self.eval(t, &xp, alpha);
            xp[j] = x[j] - h;
            let fm = self.eval(t, &xp, alpha);
            xp[j] = x[j];
            for i in 0..n {
                m[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryKind {
    Crossing,
    Impact,
    Timed { period: f64, phase: f64 },
}

/// Which sign changes of `D` count as events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rising,
    Falling,
    Either,
}

impl Direction {
    pub(crate) fn triggers(self, prev: f64, new: f64) -> bool {
        match self {
            Direction::Rising => prev < 0.0 && new >= 0.0,
            Direction::Falling => prev > 0.0 && new <= 0.0,
            Direction::Either => (prev < 0.0 && new >= 0.0) || (prev > 0.0 && new <= 0.0),
        }
    }
}

#[derive(Clone)]
pub struct Boundary {
    pub name: String,
    pub kind: BoundaryKind,
    func: Option<Arc<EventFn>>,
    reset: Option<Arc<ResetFn>>,
    switch: Option<Arc<SwitchFn>>,
    pub direction: Direction,
    /// Regions in which the boundary is monitored; `None` means all.
    pub active_in: Option<Vec<usize>>,
    /// Sliding-type boundary: representable, but flowing onto it is refused.
    pub sliding: bool,
}

impl fmt::Debug for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Boundary").field("name", &self.name).field("kind", &self.kind).finish()
    }
}

impl Boundary {
    fn base(name: impl Into<String>, kind: BoundaryKind) -> Self {
        Boundary {
            name: name.into(),
            kind,
            func: None,
            reset: None,
            switch: None,
            direction: Direction::Rising,
            active_in: None,
            sliding: false,
        }
    }

    /// Impact boundary `D = 0` with a state jump `x -> R(x)`.
    pub fn impact<D, R>(name: impl Into<String>, d: D, reset: R) -> Self
    where
        D: Fn(&[f64], &Params) -> f64 + Send + Sync + 'static,
        R: Fn(&[f64], &Params) -> Vec<f64> + Send + Sync + 'static,
    {
        let mut b = Self::base(name, BoundaryKind::Impact);
        b.func = Some(Arc::new(d));
        b.reset = Some(Arc::new(reset));
        b
    }

    /// Crossing boundary `D = 0` where the right-hand side changes.
    pub fn crossing<D, S>(name: impl Into<String>, d: D, switch: S) -> Self
    where
        D: Fn(&[f64], &Params) -> f64 + Send + Sync + 'static,
        S: Fn(usize, &[f64], &Params) -> usize + Send + Sync + 'static,
    {
        let mut b = Self::base(name, BoundaryKind::Crossing);
        b.func = Some(Arc::new(d));
        b.switch = Some(Arc::new(switch));
        b.direction = Direction::Either;
        b
    }

    /// Timed boundary firing at `phase + k * period`.
    pub fn timed(name: impl Into<String>, period: f64, phase: f64) -> Self {
        Self::base(name, BoundaryKind::Timed { period, phase })
    }

    /// Scalar guard of a timed boundary (used by switch rules and as `H`).
    pub fn with_guard<D>(mut self, d: D) -> Self
    where
        D: Fn(&[f64], &Params) -> f64 + Send + Sync + 'static,
    {
        self.func = Some(Arc::new(d));
        self
    }

    pub fn with_reset<R>(mut self, reset: R) -> Self
    where
        R: Fn(&[f64], &Params) -> Vec<f64> + Send + Sync + 'static,
    {
        self.reset = Some(Arc::new(reset));
        self
    }

    pub fn with_switch<S>(mut self, switch: S) -> Self
    where
        S: Fn(usize, &[f64], &Params) -> usize + Send + Sync + 'static,
    {
        self.switch = Some(Arc::new(switch));
        self
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn active_in(mut self, regions: Vec<usize>) -> Self {
        self.active_in = Some(regions);
        self
    }

    pub fn sliding(mut self) -> Self {
        self.sliding = true;
        self
    }

    pub fn is_timed(&self) -> bool {
        matches!(self.kind, BoundaryKind::Timed { .. })
    }

    pub fn value(&self, x: &[f64], alpha: &Params) -> Option<f64> {
        self.func.as_ref().map(|d| d(x, alpha))
    }

    pub fn gradient(&self, x: &[f64], alpha: &Params) -> Option<Vec<f64>> {
        let d = self.func.as_ref()?;
        let mut xp = x.to_vec();
        let mut g = vec![0.0; x.len()];
        for j in 0..x.len() {
            let h = 1e-7 * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            let p = d(&xp, alpha);
            xp[j] = x[j] - h;
            let m = d(&xp, alpha);
            xp[j] = x[j];
            g[j] = (p - m) / (2.0 * h);
        }
        Some(g)
    }

    pub(crate) fn monitored_in(&self, region: usize) -> bool {
        self.active_in.as_ref().is_none_or(|r| r.contains(&region))
    }

    pub(crate) fn apply_reset(&self, x: &[f64], alpha: &Params) -> Vec<f64> {
        match &self.reset {
            Some(r) => r(x, alpha),
            None => x.to_vec(),
        }
    }

    pub(crate) fn has_reset(&self) -> bool {
        self.reset.is_some()
    }

    pub(crate) fn reset_jacobian(&self, x: &[f64], alpha: &Params) -> DMatrix<f64> {
        let n = x.len();
        let Some(r) = &self.reset else {
            return DMatrix::identity(n, n);
        };
        let mut m = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        for j in 0..n {
            let h = 1e-7 * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            let p = r(&xp, alpha);
            xp[j] = x[j] - h;
            let q = r(&xp, alpha);
            xp[j] = x[j];
            for i in 0..n {
                m[(i, j)] = (p[i] - q[i]) / (2.0 * h);
            }
        }
        m
    }

    pub(crate) fn next_region(&self, region: usize, x: &[f64], alpha: &Params, n_regions: usize) -> usize {
        match (&self.switch, self.kind) {
            (Some(s), _) => s(region, x, alpha),
            (None, BoundaryKind::Crossing) if n_regions == 2 => 1 - region,
            _ => region,
        }
    }

    /// Next firing time strictly after `t`.
    pub(crate) fn next_time(&self, t: f64) -> Option<f64> {
        let BoundaryKind::Timed { period, phase } = self.kind else {
            return None;
        };
        let mut k = ((t - phase) / period).floor() + 1.0;
        let mut tk = phase + k * period;
        while tk <= t + 1e-12 * t.abs().max(1.0) {
            k += 1.0;
            tk = phase + k * period;
        }
        Some(tk)
    }
}

/// Integration and event settings shared by all flow operations.
#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub event_tol: f64,
    pub max_events: usize,
    pub max_steps: usize,
    /// `|<f, grad D>|` below this at an event flags it as grazing.
    pub grazing_tol: f64,
    /// Two events closer than this in time are simultaneous.
    pub simultaneity_tol: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            rtol: 1e-10,
            atol: 1e-12,
            event_tol: 1e-12,
            max_events: 100_000,
            max_steps: 10_000_000,
            grazing_tol: 1e-8,
            simultaneity_tol: 1e-10,
        }
    }
}

#[derive(Clone)]
pub struct HybridSystem {
    pub name: String,
    /// State dimension (the `n + 1` of the section maps).
    pub dim: usize,
    pub regions: Vec<Region>,
    pub boundaries: Vec<Boundary>,
    locate: Arc<LocateFn>,
    pub options: FlowOptions,
}

impl fmt::Debug for HybridSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("regions", &self.regions.iter().map(|r| &r.name).collect::<Vec<_>>())
            .field("boundaries", &self.boundaries)
            .finish()
    }
}

impl HybridSystem {
    pub fn new(name: impl Into<String>, dim: usize, regions: Vec<Region>, boundaries: Vec<Boundary>) -> Self {
        HybridSystem {
            name: name.into(),
            dim,
            regions,
            boundaries,
            locate: Arc::new(|_, _| 0),
            options: FlowOptions::default(),
        }
    }

    pub fn with_locator<L>(mut self, locate: L) -> Self
    where
        L: Fn(&[f64], &Params) -> usize + Send + Sync + 'static,
    {
        self.locate = Arc::new(locate);
        self
    }

    pub fn with_options(mut self, options: FlowOptions) -> Self {
        self.options = options;
        self
    }

    pub fn locate(&self, x: &[f64], alpha: &Params) -> Result<usize> {
        let r = (self.locate)(x, alpha);
        if r >= self.regions.len() {
            return Err(Error::InvalidParams(format!("state maps to unknown region {r}")));
        }
        Ok(r)
    }

    pub fn rhs(&self, region: usize, t: f64, x: &[f64], alpha: &Params) -> Vec<f64> {
        self.regions[region].eval(t, x, alpha)
    }
}
