use nalgebra::DMatrix;

use super::{resolve, to_array, ParamSet};
use crate::bounded_map::Params;
use crate::error::{Error, Result};
use crate::hybrid_flow::{Boundary, HybridSystem, PoincareSection, Region, Target};

pub const FOREST_FIRE_PARAMS: [(&str, f64); 11] = [
    ("r_B", 0.375),
    ("r_T", 0.0625),
    ("alpha", 0.43),
    ("K_B", 1.0),
    ("K_T", 1.0),
    ("rho_B", 0.85),
    ("rho_T", 0.93),
    ("lambda_B", 0.03),
    ("lambda_T", 0.01),
    ("sigma_B", 0.61),
    ("sigma_T", 0.3),
];

const R_B: usize = 0;
const R_T: usize = 1;
const ALPHA: usize = 2;
const K_B: usize = 3;
const K_T: usize = 4;
const RHO_B: usize = 5;
const RHO_T: usize = 6;
const LAMBDA_B: usize = 7;
const LAMBDA_T: usize = 8;
const SIGMA_B: usize = 9;
const SIGMA_T: usize = 10;

/// Boundary indices.
pub const BUSH: usize = 0;
pub const TREE: usize = 1;
pub const MIXED: usize = 2;

/// Height of the hyperplane section `T = const` used for return maps.
pub const SECTION_T: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestFire {
    pub values: [f64; 11],
    pub plane: [usize; 2],
}

impl Default for ForestFire {
    fn default() -> Self {
        let p = ParamSet::new(&FOREST_FIRE_PARAMS, ["rho_B", "rho_T"]).unwrap();
        ForestFire { values: to_array(&p), plane: p.plane }
    }
}

impl ForestFire {
    pub fn from_params(p: &ParamSet) -> Result<ForestFire> {
        if p.values.len() != FOREST_FIRE_PARAMS.len() {
            return Err(Error::InvalidParams("forest-fire expects 11 parameters".into()));
        }
        let ff = ForestFire { values: to_array(p), plane: p.plane };
        ff.validate()?;
        Ok(ff)
    }

    pub fn alpha(&self) -> Params {
        [self.values[self.plane[0]], self.values[self.plane[1]]]
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.values;
        let name = |i: usize| FOREST_FIRE_PARAMS[i].0;
        for i in [R_B, R_T, K_B, K_T] {
            if !(v[i] > 0.0) {
                return Err(Error::InvalidParams(format!("{} must be positive (got {})", name(i), v[i])));
            }
        }
        if !(v[ALPHA] >= 0.0) {
            return Err(Error::InvalidParams(format!("alpha must be non-negative (got {})", v[ALPHA])));
        }
        for i in [RHO_B, RHO_T, LAMBDA_B, LAMBDA_T, SIGMA_B, SIGMA_T] {
            if !(v[i] > 0.0 && v[i] < 1.0) {
                return Err(Error::InvalidParams(format!("{} must lie in (0, 1) (got {})", name(i), v[i])));
            }
        }
        if v[SIGMA_B] >= v[RHO_B] || v[SIGMA_T] >= v[RHO_T] {
            return Err(Error::InvalidParams("mixed-fire segment needs sigma_B < rho_B and sigma_T < rho_T".into()));
        }
        Ok(())
    }
}

/// Mixed-fire line through `(sigma_B K_B, rho_T K_T)` and `(rho_B K_B, sigma_T K_T)`,
/// negative on the origin side.
fn mixed_d(x: &[f64], p: &[f64; 11]) -> f64 {
    (p[RHO_T] - p[SIGMA_T]) * p[K_T] * (x[0] - p[SIGMA_B] * p[K_B])
        + (p[RHO_B] - p[SIGMA_B]) * p[K_B] * (x[1] - p[RHO_T] * p[K_T])
}

pub fn build_forest_fire(ff: &ForestFire) -> Result<HybridSystem> {
    ff.validate()?;
    let base = ff.values;
    let plane = ff.plane;
    let growth = Region::new("growth", move |_, x, a, d| {
        let p = resolve(&base, plane, a);
        d[0] = p[R_B] * x[0] * (1.0 - x[0] / p[K_B]) - p[ALPHA] * x[0] * x[1];
        d[1] = p[R_T] * x[1] * (1.0 - x[1] / p[K_T]);
    })
    .with_jacobian(move |_, x, a| {
        let p = resolve(&base, plane, a);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                p[R_B] * (1.0 - 2.0 * x[0] / p[K_B]) - p[ALPHA] * x[1],
                -p[ALPHA] * x[0],
                0.0,
                p[R_T] * (1.0 - 2.0 * x[1] / p[K_T]),
            ],
        )
    });
    let bush = Boundary::impact(
        "bush",
        move |x, a| {
            let p = resolve(&base, plane, a);
            x[0] - p[RHO_B] * p[K_B]
        },
        move |x, a| {
            let p = resolve(&base, plane, a);
            vec![p[LAMBDA_B] * p[RHO_B] * p[K_B], x[1]]
        },
    );
    let tree = Boundary::impact(
        "tree",
        move |x, a| {
            let p = resolve(&base, plane, a);
            x[1] - p[RHO_T] * p[K_T]
        },
        move |x, a| {
            let p = resolve(&base, plane, a);
            vec![x[0], p[LAMBDA_T] * p[RHO_T] * p[K_T]]
        },
    );
    let mixed = Boundary::impact(
        "mixed",
        move |x, a| mixed_d(x, &resolve(&base, plane, a)),
        move |x, a| {
            let p = resolve(&base, plane, a);
            vec![p[LAMBDA_B] * x[0], p[LAMBDA_T] * x[1]]
        },
    );
    Ok(HybridSystem::new("forest-fire", 2, vec![growth], vec![bush, tree, mixed]))
}

/// Return map to `T = SECTION_T` (crossed upwards) with coordinate `z = B`.
/// With `bush_target` the bush threshold is the studied boundary (it is then
/// removed from the flow and `H` is its value at the maximum of `B`).
pub fn forest_fire_section(sys: &HybridSystem, ff: &ForestFire, bush_target: bool) -> Result<PoincareSection> {
    let sec = PoincareSection::hyperplane(sys, vec![0.5, SECTION_T], vec![0.0, 1.0], &ff.alpha())?
        .with_chart(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))
        .with_t_max(2e3);
    Ok(if bush_target { sec.with_target(Target::Tangency(BUSH)) } else { sec })
}
