use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hybrid_flow::{Boundary, HybridSystem, PoincareSection, Region, Target};

/// `x1' = 1`, `x2' = -(x2 - 1)`, with `x1 -> 0` every `period`.
pub fn clock_system(period: f64) -> Result<HybridSystem> {
    if !(period > 0.0) {
        return Err(Error::InvalidParams(format!("period must be positive (got {period})")));
    }
    let r = Region::new("relax", |_, x, _, d| {
        d[0] = 1.0;
        d[1] = -(x[1] - 1.0);
    })
    .with_jacobian(|_, _, _| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -1.0]));
    let tick = Boundary::timed("tick", period, 0.0).with_reset(|x, _| vec![0.0, x[1]]);
    Ok(HybridSystem::new("clock", 2, vec![r], vec![tick]))
}

/// Pre-tick states with coordinate `x2`; the map is `x2 -> 1 + (x2 - 1) e^-period`.
pub fn clock_section() -> PoincareSection {
    PoincareSection::at_event(0, vec![0.0, 0.0], DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), 0)
}

/// `x' = (1, x1)`. Boundary 0 is the wall `x2 = c` with `D = c - x2`;
/// boundary 1 at `x1 = 2` sends the orbit back to `x1 = -1` so that the return
/// map to `x1 = -1` is the identity.
pub fn drift_system(c: f64) -> HybridSystem {
    let r = Region::new("drift", |_, x, _, d| {
        d[0] = 1.0;
        d[1] = x[0];
    })
    .with_jacobian(|_, _, _| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]));
    let wall = Boundary::impact("wall", move |x, _| c - x[1], |x, _| x.to_vec());
    let back = Boundary::impact("back", |x, _| x[0] - 2.0, |x, _| vec![-1.0, x[1] - 1.5]);
    HybridSystem::new("drift", 2, vec![r], vec![wall, back])
}

/// Section `x1 = -1` with coordinate `x2`, studying the wall. From `x2 = z`
/// the orbit bottoms out at `z - 1/2`, so `H = c + 1/2 - z`.
pub fn drift_section(sys: &HybridSystem) -> Result<PoincareSection> {
    Ok(PoincareSection::hyperplane(sys, vec![-1.0, 0.0], vec![1.0, 0.0], &[0.0, 0.0])?
        .with_chart(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]))
        .with_target(Target::Tangency(0)))
}
