//! Built-in systems: two hybrid models with their published parameter
//! regimes and truncated normal-form maps with known bifurcation geometry.

mod forest_fire;
mod nf_test;
mod simple;
mod two_party;

use crate::bounded_map::{BoundedMap, Params};
use crate::error::{Error, Result};
use crate::hybrid_flow::{HybridSystem, PoincareSection};

pub use forest_fire::{build_forest_fire, forest_fire_section, ForestFire, BUSH, FOREST_FIRE_PARAMS, MIXED, SECTION_T, TREE};
pub use nf_test::{build_nf_test, NfCase, NfTest};
pub use simple::{clock_section, clock_system, drift_section, drift_system};
pub use two_party::{build_two_party, two_party_election_map, Gov, TwoParty, TWO_PARTY_PARAMS};

/// Named parameters of a model together with the two that form the
/// continuation plane `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
    pub plane: [usize; 2],
}

impl ParamSet {
    pub fn new(defaults: &[(&'static str, f64)], plane: [&str; 2]) -> Result<ParamSet> {
        let names: Vec<&'static str> = defaults.iter().map(|d| d.0).collect();
        let values = defaults.iter().map(|d| d.1).collect();
        let mut p = ParamSet { names, values, plane: [0, 1] };
        p.set_plane(plane)?;
        Ok(p)
    }

    /// Exact name first, then `r_1`/`r_2` for `r_B`/`r_T`, then a unique
    /// match ignoring case and underscores (`rhoB` for `rho_B`).
    pub fn index(&self, name: &str) -> Result<usize> {
        if let Some(i) = self.names.iter().position(|n| *n == name) {
            return Ok(i);
        }
        let alias = match name {
            "r_1" | "r1" => Some("r_B"),
            "r_2" | "r2" => Some("r_T"),
            _ => None,
        };
        if let Some(i) = alias.and_then(|a| self.names.iter().position(|n| *n == a)) {
            return Ok(i);
        }
        let norm = |s: &str| s.replace('_', "").to_lowercase();
        let key = norm(name);
        let hits: Vec<usize> = (0..self.names.len()).filter(|&i| norm(self.names[i]) == key).collect();
        match hits[..] {
            [i] => Ok(i),
            _ => Err(Error::InvalidParams(format!("unknown parameter `{name}` (known: {})", self.names.join(", ")))),
        }
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(self.values[self.index(name)?])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self.index(name)?;
        self.values[i] = value;
        Ok(())
    }

    pub fn set_plane(&mut self, plane: [&str; 2]) -> Result<()> {
        let a = self.index(plane[0])?;
        let b = self.index(plane[1])?;
        if a == b {
            return Err(Error::InvalidParams(format!("plane uses `{}` twice", plane[0])));
        }
        self.plane = [a, b];
        Ok(())
    }

    pub fn plane_names(&self) -> [&'static str; 2] {
        [self.names[self.plane[0]], self.names[self.plane[1]]]
    }

    /// Current values of the plane parameters.
    pub fn alpha(&self) -> Params {
        [self.values[self.plane[0]], self.values[self.plane[1]]]
    }
}

/// Copies `base` and overwrites the plane entries with `alpha`.
#[inline]
pub(crate) fn resolve<const N: usize>(base: &[f64; N], plane: [usize; 2], alpha: &Params) -> [f64; N] {
    let mut p = *base;
    p[plane[0]] = alpha[0];
    p[plane[1]] = alpha[1];
    p
}

pub(crate) fn to_array<const N: usize>(p: &ParamSet) -> [f64; N] {
    let mut a = [0.0; N];
    a.copy_from_slice(&p.values);
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Hybrid,
    Map,
}

#[derive(Debug, Clone)]
pub struct ModelDescriptor {
    pub name: &'static str,
    pub kind: ModelKind,
    pub params: Vec<(&'static str, f64)>,
    pub plane: [&'static str; 2],
    pub doc: &'static str,
}

impl ModelDescriptor {
    pub fn param_set(&self) -> ParamSet {
        ParamSet::new(&self.params, self.plane).expect("descriptor plane names are valid")
    }
}

const NF_PARAMS: [(&str, f64); 5] = [("beta1", 0.0), ("beta2", 0.0), ("sigma_slope", 1.0), ("s", 1.0), ("theta", 1.0)];

pub fn descriptors() -> Vec<ModelDescriptor> {
    vec![
        ModelDescriptor {
            name: "forest-fire",
            kind: ModelKind::Hybrid,
            params: FOREST_FIRE_PARAMS.to_vec(),
            plane: ["rho_B", "rho_T"],
            doc: "Bush/tree logistic growth with three impacting fire boundaries (bush threshold, tree threshold, \
                  mixed-fire segment). The mixed-fire reset is the surrogate (B, T) -> (lambda_B B, lambda_T T).",
        },
        ModelDescriptor {
            name: "two-party",
            kind: ModelKind::Hybrid,
            params: TWO_PARTY_PARAMS.to_vec(),
            plane: ["a_D", "T"],
            doc: "Welfare and two lobbies under alternating governments; elections every T years are won by the \
                  party with the less damaging lobby (ties: incumbent retains).",
        },
        ModelDescriptor {
            name: "nf-fold",
            kind: ModelKind::Map,
            params: NF_PARAMS.to_vec(),
            plane: ["beta1", "beta2"],
            doc: "v -> beta1 + v + s v^2 with boundary h = v - sigma_slope beta2.",
        },
        ModelDescriptor {
            name: "nf-flip",
            kind: ModelKind::Map,
            params: NF_PARAMS.to_vec(),
            plane: ["beta1", "beta2"],
            doc: "v -> -(1 + beta1) v + s v^3 with boundary h = v - sigma_slope beta2.",
        },
        ModelDescriptor {
            name: "nf-ns",
            kind: ModelKind::Map,
            params: vec![("beta1", 0.0), ("beta2", 0.0), ("sigma_slope", 1.0), ("a", -1.0), ("theta", 1.0)],
            plane: ["beta1", "beta2"],
            doc: "z -> R(theta) z (1 + beta1 + a |z|^2) with boundary h = z1 - sigma_slope beta2.",
        },
        ModelDescriptor {
            name: "clock",
            kind: ModelKind::Hybrid,
            params: vec![("period", 1.0), ("unused", 0.0)],
            plane: ["period", "unused"],
            doc: "x1' = 1, x2' = -(x2 - 1) with a timed reset x1 -> 0 every period.",
        },
        ModelDescriptor {
            name: "drift",
            kind: ModelKind::Hybrid,
            params: vec![("c", 1.0), ("unused", 0.0)],
            plane: ["c", "unused"],
            doc: "x' = (1, x1) with the boundary x2 = c; orbits are parabolas touching it at x1 = 0.",
        },
    ]
}

pub fn descriptor(name: &str) -> Option<ModelDescriptor> {
    descriptors().into_iter().find(|d| d.name == name)
}

pub fn system_names() -> Vec<&'static str> {
    descriptors().iter().map(|d| d.name).collect()
}

/// A constructed model.
#[derive(Clone)]
pub enum Model {
    Hybrid { sys: HybridSystem, section: Option<PoincareSection>, x0: Vec<f64> },
    Map { map: BoundedMap, z0: Vec<f64> },
}

/// Builds the named model from a parameter set (as produced by
/// [`ModelDescriptor::param_set`], possibly modified).
pub fn build(name: &str, p: &ParamSet) -> Result<Model> {
    match name {
        "forest-fire" => {
            let ff = ForestFire::from_params(p)?;
            let sys = build_forest_fire(&ff)?;
            let section = forest_fire_section(&sys, &ff, false)?;
            Ok(Model::Hybrid { sys, section: Some(section), x0: vec![0.5, 0.5] })
        }
        "two-party" => {
            let tp = TwoParty::from_params(p)?;
            let sys = build_two_party(&tp)?;
            Ok(Model::Hybrid { sys, section: None, x0: vec![0.4366, 7.43e-5, 4.16] })
        }
        "nf-fold" | "nf-flip" | "nf-ns" => {
            let case = match name {
                "nf-fold" => NfCase::Fold,
                "nf-flip" => NfCase::Flip,
                _ => NfCase::Ns,
            };
            let t = NfTest::from_params(case, p)?;
            let map = build_nf_test(&t)?;
            Ok(Model::Map { z0: vec![0.0; map.dim()], map })
        }
        "clock" => {
            let sys = clock_system(p.get("period")?)?;
            Ok(Model::Hybrid { section: Some(clock_section()), sys, x0: vec![0.0, 2.0] })
        }
        "drift" => {
            let sys = drift_system(p.get("c")?);
            let sec = drift_section(&sys)?;
            Ok(Model::Hybrid { sys, section: Some(sec), x0: vec![-1.0, 1.4] })
        }
        _ => Err(Error::InvalidParams(format!("unknown system `{name}` (available: {})", system_names().join(", ")))),
    }
}

/// The one-sided map studied for the named model together with a starting
/// state. Forest fire: return map to `T = 0.2` with the bush threshold as the
/// studied boundary. Two party: the forced D,R election map with `H` the
/// margin of the R election.
pub fn bounded_map(name: &str, p: &ParamSet) -> Result<(BoundedMap, Vec<f64>)> {
    match name {
        "forest-fire" => {
            let ff = ForestFire::from_params(p)?;
            let sys = build_forest_fire(&ff)?;
            let sec = forest_fire_section(&sys, &ff, true)?;
            Ok((crate::hybrid_flow::as_bounded_map(&sys, &sec), vec![0.3]))
        }
        "two-party" => {
            let tp = TwoParty::from_params(p)?;
            let map = two_party_election_map(&tp, &[Gov::D, Gov::R], 1)?;
            Ok((map, vec![0.4366, 7.43e-5, 4.16]))
        }
        _ => match build(name, p)? {
            Model::Map { map, z0 } => Ok((map, z0)),
            Model::Hybrid { sys, section: Some(sec), x0 } => {
                let z0 = sec.to_coords(&x0).iter().copied().collect();
                Ok((crate::hybrid_flow::as_bounded_map(&sys, &sec), z0))
            }
            Model::Hybrid { section: None, .. } => Err(Error::NotSupported(format!("`{name}` has no return map"))),
        },
    }
}

#[cfg(test)]
mod tests;
