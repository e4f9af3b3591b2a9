//! Codimension-two border-fold, border-flip and border-Neimark-Sacker
//! bifurcations of one-sided Poincaré maps.

pub mod bounded_map;
pub mod codim2;
pub mod continuation;
pub mod error;
pub mod hybrid_flow;
pub mod model_zoo;

pub use bounded_map::{BoundedMap, DerivativeBundle, Orbit, Params};
pub use error::{Error, Result};
