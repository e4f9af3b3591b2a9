//! Run configuration: a TOML file merged with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use evalexpr::{build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use nalgebra::DVector;
use nsbif::model_zoo::{self, ParamSet};
use nsbif::{BoundedMap, Params};
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub system: Option<String>,
    pub plane: Option<[String; 2]>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub map: Option<MapConfig>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default, rename = "continue")]
    pub cont: ContinueConfig,
    #[serde(default)]
    pub codim2: Codim2Config,
    #[serde(default)]
    pub tangency: TangencyConfig,
}

/// A map given by expressions in `z1..zn` and the parameter names.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub f: Vec<String>,
    pub h: String,
    /// Parameters with defaults; the first two form the default plane.
    pub params: BTreeMap<String, f64>,
    pub plane: Option<[String; 2]>,
    pub z0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub t_max: Option<f64>,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinueConfig {
    pub curve: Option<String>,
    pub steps: Option<usize>,
    pub h0: Option<f64>,
    pub h_max: Option<f64>,
    pub start_z: Option<Vec<f64>>,
    pub start_alpha: Option<[f64; 2]>,
    pub bounds: Option<[[f64; 2]; 2]>,
    /// Distance along the flip curve at which a period-two curve is seeded.
    pub seed_offset: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Codim2Config {
    pub case: Option<String>,
    pub z: Option<Vec<f64>>,
    pub alpha: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TangencyConfig {
    pub primary: Option<PathBuf>,
    pub secondary: Option<PathBuf>,
    pub record: Option<PathBuf>,
    pub point: Option<[f64; 2]>,
    pub window: Option<[f64; 2]>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(p) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(p).map_err(|e| Failure::config(format!("cannot read {}: {e}", p.display())))?;
    toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))
}

pub fn parse_set(s: &str) -> Result<(String, f64), Failure> {
    let (k, v) = s.split_once('=').ok_or_else(|| Failure::config(format!("--set expects key=value, got `{s}`")))?;
    let v: f64 = v.trim().parse().map_err(|_| Failure::config(format!("--set {k}: `{v}` is not a number")))?;
    Ok((k.trim().to_string(), v))
}

pub fn parse_pair(s: &str, what: &str) -> Result<[String; 2], Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts[..] {
        [a, b] => Ok([a.to_string(), b.to_string()]),
        _ => Err(Failure::config(format!("{what} expects two comma-separated entries, got `{s}`"))),
    }
}

pub fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Failure::config(format!("{what}: `{t}` is not a number"))))
        .collect()
}

/// Resolved system: a built-in name, or a map defined in the config file.
#[derive(Clone)]
pub enum System {
    Builtin { name: String, params: ParamSet },
    Custom { map: BoundedMap, z0: Vec<f64>, alpha: Params, plane: [String; 2] },
}

impl System {
    pub fn name(&self) -> &str {
        match self {
            System::Builtin { name, .. } => name,
            System::Custom { .. } => "custom",
        }
    }

    pub fn plane_names(&self) -> [String; 2] {
        match self {
            System::Builtin { params, .. } => params.plane_names().map(String::from),
            System::Custom { plane, .. } => plane.clone(),
        }
    }

    pub fn alpha(&self) -> Params {
        match self {
            System::Builtin { params, .. } => params.alpha(),
            System::Custom { alpha, .. } => *alpha,
        }
    }

    pub fn bounded_map(&self) -> Result<(BoundedMap, Vec<f64>), Failure> {
        match self {
            System::Builtin { name, params } => model_zoo::bounded_map(name, params).map_err(Failure::from),
            System::Custom { map, z0, .. } => Ok((map.clone(), z0.clone())),
        }
    }

    pub fn surrogate_note(&self) -> Option<&'static str> {
        (self.name() == "forest-fire")
            .then_some("mixed-fire reset is the surrogate (B, T) -> (lambda_B B, lambda_T T)")
    }
}

pub fn resolve_system(
    cfg: &FileConfig,
    system: Option<&str>,
    sets: &[(String, f64)],
    plane: Option<[String; 2]>,
) -> Result<System, Failure> {
    let name = system.map(str::to_string).or_else(|| cfg.system.clone());
    let plane = plane.or_else(|| cfg.plane.clone());
    let mut values: BTreeMap<String, f64> = cfg.params.clone();
    values.extend(sets.iter().cloned());
    match name.as_deref() {
        None => Err(Failure::config(format!(
            "no system given (use --system; available: {}, or `custom` with a [map] table)",
            model_zoo::system_names().join(", ")
        ))),
        Some("custom") => {
            let mc = cfg.map.as_ref().ok_or_else(|| Failure::config("system `custom` needs a [map] table"))?;
            custom_map(mc, &values, plane)
        }
        Some(n) => {
            let d = model_zoo::descriptor(n).ok_or_else(|| {
                Failure::config(format!("unknown system `{n}` (available: {})", model_zoo::system_names().join(", ")))
            })?;
            let mut p = d.param_set();
            for (k, v) in &values {
                p.set(k, *v).map_err(Failure::from)?;
            }
            if let Some(pl) = &plane {
                p.set_plane([pl[0].as_str(), pl[1].as_str()]).map_err(Failure::from)?;
            }
            Ok(System::Builtin { name: n.to_string(), params: p })
        }
    }
}

fn compile(src: &str) -> Result<Node<DefaultNumericTypes>, Failure> {
    build_operator_tree::<DefaultNumericTypes>(src).map_err(|e| Failure::config(format!("expression `{src}`: {e}")))
}

fn custom_map(mc: &MapConfig, overrides: &BTreeMap<String, f64>, plane: Option<[String; 2]>) -> Result<System, Failure> {
    let n = mc.f.len();
    if n == 0 {
        return Err(Failure::config("[map] needs at least one component in f"));
    }
    let names: Vec<String> = mc.params.keys().cloned().collect();
    let mut base: Vec<f64> = mc.params.values().copied().collect();
    for (k, v) in overrides {
        let i = names.iter().position(|m| m == k).ok_or_else(|| Failure::config(format!("unknown parameter `{k}`")))?;
        base[i] = *v;
    }
    let plane = plane.or_else(|| mc.plane.clone()).unwrap_or_else(|| {
        [names.first().cloned().unwrap_or_default(), names.get(1).cloned().unwrap_or_default()]
    });
    let idx = |s: &str| {
        names.iter().position(|m| m == s).ok_or_else(|| Failure::config(format!("plane parameter `{s}` is not in [map.params]")))
    };
    let pl = [idx(&plane[0])?, idx(&plane[1])?];
    if pl[0] == pl[1] {
        return Err(Failure::config("plane uses the same parameter twice"));
    }
    let f: Vec<Node<DefaultNumericTypes>> = mc.f.iter().map(|s| compile(s)).collect::<Result<_, _>>()?;
    let h = compile(&mc.h)?;
    let ctx = Arc::new(ExprContext { names: names.clone(), base: base.clone(), plane: pl });
    let (cf, ch) = (ctx.clone(), ctx.clone());
    let map = BoundedMap::new(
        "custom",
        n,
        move |z, a| {
            let c = cf.build(z, a)?;
            let v: Vec<f64> = f.iter().map(|e| eval(e, &c)).collect::<nsbif::Result<_>>()?;
            Ok(DVector::from_vec(v))
        },
        move |z, a| eval(&h, &ch.build(z, a)?),
    )
    .with_smooth_extension(true);
    let z0 = mc.z0.clone().unwrap_or_else(|| vec![0.0; n]);
    if z0.len() != n {
        return Err(Failure::config(format!("[map] z0 has {} entries, f has {n}", z0.len())));
    }
    let alpha = [base[pl[0]], base[pl[1]]];
    // evaluate once so that unknown variables surface as config errors
    map.eval_raw(&DVector::from_column_slice(&z0), &alpha).map_err(|e| Failure::config(format!("[map] f: {e}")))?;
    map.boundary(&DVector::from_column_slice(&z0), &alpha).map_err(|e| Failure::config(format!("[map] h: {e}")))?;
    Ok(System::Custom { map, z0, alpha, plane: [names[pl[0]].clone(), names[pl[1]].clone()] })
}

struct ExprContext {
    names: Vec<String>,
    base: Vec<f64>,
    plane: [usize; 2],
}

impl ExprContext {
    fn build(&self, z: &DVector<f64>, a: &Params) -> nsbif::Result<HashMapContext<DefaultNumericTypes>> {
        let mut c = HashMapContext::<DefaultNumericTypes>::new();
        let mut vals = self.base.clone();
        vals[self.plane[0]] = a[0];
        vals[self.plane[1]] = a[1];
        let set = |c: &mut HashMapContext<DefaultNumericTypes>, k: String, v: f64| {
            c.set_value(k, Value::Float(v)).map_err(|e| nsbif::Error::InvalidParams(e.to_string()))
        };
        for (k, v) in self.names.iter().zip(vals) {
            set(&mut c, k.clone(), v)?;
        }
        for (i, v) in z.iter().enumerate() {
            set(&mut c, format!("z{}", i + 1), *v)?;
        }
        Ok(c)
    }
}

fn eval(e: &Node<DefaultNumericTypes>, c: &HashMapContext<DefaultNumericTypes>) -> nsbif::Result<f64> {
    e.eval_number_with_context(c).map_err(|err| nsbif::Error::InvalidParams(format!("expression: {err}")))
}
