use nalgebra::{DMatrix, DVector};

use super::{resolve, to_array, ParamSet};
use crate::bounded_map::{BoundedMap, Params};
use crate::error::{Error, Result};
use crate::hybrid_flow::{flow_for, Boundary, HybridSystem, Region};

pub const TWO_PARTY_PARAMS: [(&str, f64); 10] = [
    ("a_R", 1.0),
    ("a_D", 0.38),
    ("r", 0.2),
    ("e_D", 6.0),
    ("e_R", 6.0),
    ("d_D", 1.8),
    ("d_R", 1.8),
    ("k_D", 0.06),
    ("k_R", 0.06),
    ("T", 3.2),
];

const A_R: usize = 0;
const A_D: usize = 1;
const R: usize = 2;
const E_D: usize = 3;
const E_R: usize = 4;
const D_D: usize = 5;
const D_R: usize = 6;
const K_D: usize = 7;
const K_R: usize = 8;
const T: usize = 9;

/// Which party forms the government. Doubles as the region index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gov {
    D = 0,
    R = 1,
}

impl Gov {
    pub fn region(self) -> usize {
        self as usize
    }

    /// Sign with which the margin `a_D L_D - a_R L_R` is negative when this party wins.
    fn orientation(self) -> f64 {
        match self {
            Gov::D => 1.0,
            Gov::R => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoParty {
    pub values: [f64; 10],
    pub plane: [usize; 2],
}

impl Default for TwoParty {
    fn default() -> Self {
        let p = ParamSet::new(&TWO_PARTY_PARAMS, ["a_D", "T"]).unwrap();
        TwoParty { values: to_array(&p), plane: p.plane }
    }
}

impl TwoParty {
    pub fn from_params(p: &ParamSet) -> Result<TwoParty> {
        if p.values.len() != TWO_PARTY_PARAMS.len() {
            return Err(Error::InvalidParams("two-party expects 10 parameters".into()));
        }
        let tp = TwoParty { values: to_array(p), plane: p.plane };
        tp.validate()?;
        Ok(tp)
    }

    pub fn alpha(&self) -> Params {
        [self.values[self.plane[0]], self.values[self.plane[1]]]
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.values;
        if !(v[T] > 0.0) || !v[T].is_finite() {
            return Err(Error::InvalidParams(format!("election period T must be positive (got {})", v[T])));
        }
        for i in [A_R, A_D, R] {
            if !(v[i] > 0.0) {
                return Err(Error::InvalidParams(format!("{} must be positive (got {})", TWO_PARTY_PARAMS[i].0, v[i])));
            }
        }
        for i in [E_D, E_R, D_D, D_R, K_D, K_R] {
            if !(v[i] >= 0.0) {
                return Err(Error::InvalidParams(format!("{} must be non-negative (got {})", TWO_PARTY_PARAMS[i].0, v[i])));
            }
        }
        Ok(())
    }
}

/// `a_D L_D - a_R L_R`; D wins when negative.
fn margin(x: &[f64], p: &[f64; 10]) -> f64 {
    p[A_D] * x[1] - p[A_R] * x[2]
}

fn winner(incumbent: usize, m: f64) -> usize {
    if m < 0.0 {
        Gov::D.region()
    } else if m > 0.0 {
        Gov::R.region()
    } else {
        incumbent
    }
}

fn rhs_d(x: &[f64], p: &[f64; 10], d: &mut [f64]) {
    let (w, ld, lr) = (x[0], x[1], x[2]);
    d[0] = p[R] * (1.0 - w - p[A_D] * ld) * w;
    d[1] = (p[E_D] * p[A_D] * w - p[D_D]) * ld + p[K_R] * lr;
    d[2] = -(p[D_R] + p[K_R]) * lr;
}

fn rhs_r(x: &[f64], p: &[f64; 10], d: &mut [f64]) {
    let (w, ld, lr) = (x[0], x[1], x[2]);
    d[0] = p[R] * (1.0 - w - p[A_R] * lr) * w;
    d[1] = -(p[D_D] + p[K_D]) * ld;
    d[2] = (p[E_R] * p[A_R] * w - p[D_R]) * lr + p[K_D] * ld;
}

fn jac_d(x: &[f64], p: &[f64; 10]) -> DMatrix<f64> {
    let (w, ld) = (x[0], x[1]);
    DMatrix::from_row_slice(
        3,
        3,
        &[
            p[R] * (1.0 - 2.0 * w - p[A_D] * ld),
            -p[R] * p[A_D] * w,
            0.0,
            p[E_D] * p[A_D] * ld,
            p[E_D] * p[A_D] * w - p[D_D],
            p[K_R],
            0.0,
            0.0,
            -(p[D_R] + p[K_R]),
        ],
    )
}

fn jac_r(x: &[f64], p: &[f64; 10]) -> DMatrix<f64> {
    let (w, lr) = (x[0], x[2]);
    DMatrix::from_row_slice(
        3,
        3,
        &[
            p[R] * (1.0 - 2.0 * w - p[A_R] * lr),
            0.0,
            -p[R] * p[A_R] * w,
            0.0,
            -(p[D_D] + p[K_D]),
            0.0,
            p[E_R] * p[A_R] * lr,
            p[K_D],
            p[E_R] * p[A_R] * w - p[D_R],
        ],
    )
}

/// State `(W, L_D, L_R)`, regions `D` and `R`, elections every `T` (the
/// period of the timed boundary is the base value, not a plane parameter).
/// The initial government is chosen by the election rule with D as incumbent.
pub fn build_two_party(tp: &TwoParty) -> Result<HybridSystem> {
    tp.validate()?;
    let base = tp.values;
    let plane = tp.plane;
    let gov_d = Region::new("D", move |_, x, a, d| rhs_d(x, &resolve(&base, plane, a), d))
        .with_jacobian(move |_, x, a| jac_d(x, &resolve(&base, plane, a)));
    let gov_r = Region::new("R", move |_, x, a, d| rhs_r(x, &resolve(&base, plane, a), d))
        .with_jacobian(move |_, x, a| jac_r(x, &resolve(&base, plane, a)));
    let election = Boundary::timed("election", base[T], 0.0)
        .with_guard(move |x, a| margin(x, &resolve(&base, plane, a)))
        .with_switch(move |inc, x, a| winner(inc, margin(x, &resolve(&base, plane, a))));
    Ok(HybridSystem::new("two-party", 3, vec![gov_d, gov_r], vec![election])
        .with_locator(move |x, a| winner(Gov::D.region(), margin(x, &resolve(&base, plane, a)))))
}

/// Map from the pre-election state to the pre-election state `pattern.len()`
/// terms later, with the government of term `k` forced to `pattern[k]`.
/// `H` is the oriented margin at election `designated` (the state after
/// `designated` terms) for the outcome that opens the next term, so `H < 0`
/// while that outcome agrees with the election rule. The map extends
/// smoothly across `H = 0` because outcomes are forced.
pub fn two_party_election_map(tp: &TwoParty, pattern: &[Gov], designated: usize) -> Result<BoundedMap> {
    tp.validate()?;
    if pattern.is_empty() {
        return Err(Error::InvalidParams("election pattern is empty".into()));
    }
    if designated >= pattern.len() {
        return Err(Error::InvalidParams(format!("designated election {designated} outside a pattern of length {}", pattern.len())));
    }
    let sys = build_two_party(tp)?;
    let base = tp.values;
    let plane = tp.plane;
    let pattern = pattern.to_vec();
    let tag: String = pattern.iter().map(|g| if *g == Gov::D { 'D' } else { 'R' }).collect();

    let period = move |a: &Params| -> Result<f64> {
        let t = resolve(&base, plane, a)[T];
        if t > 0.0 {
            Ok(t)
        } else {
            Err(Error::InvalidParams(format!("election period T must be positive (got {t})")))
        }
    };

    let (s1, pat1) = (sys.clone(), pattern.clone());
    let f = move |z: &DVector<f64>, a: &Params| -> Result<DVector<f64>> {
        let t = period(a)?;
        let mut x: Vec<f64> = z.iter().copied().collect();
        for g in &pat1 {
            x = flow_for(&s1, g.region(), &x, a, t, false)?.0;
        }
        Ok(DVector::from_vec(x))
    };
    let (s2, pat2) = (sys.clone(), pattern.clone());
    let h = move |z: &DVector<f64>, a: &Params| -> Result<f64> {
        let t = period(a)?;
        let mut x: Vec<f64> = z.iter().copied().collect();
        for g in &pat2[..designated] {
            x = flow_for(&s2, g.region(), &x, a, t, false)?.0;
        }
        Ok(pat2[designated].orientation() * margin(&x, &resolve(&base, plane, a)))
    };
    let jac = move |z: &DVector<f64>, a: &Params| -> Result<DMatrix<f64>> {
        let t = period(a)?;
        let mut x: Vec<f64> = z.iter().copied().collect();
        let mut m = DMatrix::identity(3, 3);
        for g in &pattern {
            let (xn, phi) = flow_for(&sys, g.region(), &x, a, t, true)?;
            m = phi.expect("requested transition matrix") * m;
            x = xn;
        }
        Ok(m)
    };
    Ok(BoundedMap::new(format!("two-party-{tag}"), 3, f, h).with_jacobian(jac).with_smooth_extension(true))
}
