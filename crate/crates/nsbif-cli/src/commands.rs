use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use nsbif::codim2::{analyze_codim2, period2_bc_seed, verify_tangency, Case, TangencyOptions};
use nsbif::continuation::systems::{eigen_seed, make_defining_system};
use nsbif::continuation::{
    continue_both, detect_special_points, join_x, newton_solve, BifCurve, ContinuationOptions, CurveKind, NEWTON_TOL,
};
use nsbif::hybrid_flow::{as_bounded_map, simulate as run_flow, PoincareSection};
use nsbif::model_zoo::{self, Model};
use nsbif::{BoundedMap, Error, Params};
use serde_json::{json, Value};

use crate::config::{self, FileConfig, System};
use crate::{Common, Failure};

struct Run {
    cfg: FileConfig,
    system: System,
    out_dir: PathBuf,
    seed: u64,
}

fn prepare(c: &Common) -> Result<Run, Failure> {
    let cfg = config::load(c.config.as_deref())?;
    let sets: Vec<(String, f64)> = c.set.iter().map(|s| config::parse_set(s)).collect::<Result<_, _>>()?;
    let plane = c.plane.as_deref().map(|p| config::parse_pair(p, "--plane")).transpose()?;
    let system = config::resolve_system(&cfg, c.system.as_deref(), &sets, plane)?;
    let out_dir = c.out_dir.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).map_err(|e| Failure::config(format!("cannot create {}: {e}", out_dir.display())))?;
    let seed = c.seed.or(cfg.seed).unwrap_or(0);
    Ok(Run { cfg, system, out_dir, seed })
}

fn threads() -> usize {
    std::env::var("NSBIF_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(2).max(1)
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, v).map_err(|e| Failure::config(e.to_string()))?;
    writeln!(f)?;
    Ok(())
}

fn header(run: &Run) -> Value {
    let mut v = json!({
        "system": run.system.name(),
        "plane": run.system.plane_names(),
        "alpha": run.system.alpha(),
        "seed": run.seed,
    });
    if let System::Builtin { params, .. } = &run.system {
        let p: serde_json::Map<String, Value> =
            params.names.iter().zip(&params.values).map(|(k, x)| (k.to_string(), json!(x))).collect();
        v["params"] = Value::Object(p);
    }
    if let Some(n) = run.system.surrogate_note() {
        v["surrogate"] = json!(n);
    }
    v
}

fn period_tag(k: Option<usize>) -> String {
    const WORDS: [&str; 9] = ["one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];
    match k {
        Some(k) if (1..=9).contains(&k) => format!("period-{}", WORDS[k - 1]),
        Some(k) => format!("period-{k}"),
        None => "aperiodic".into(),
    }
}

/// Smallest `k <= 8` with `F^k(z) = z` after a transient, for a return map.
fn return_period(map: &BoundedMap, z0: DVector<f64>, a: &Params) -> Option<usize> {
    let mut z = z0;
    for _ in 0..60 {
        z = map.eval_raw(&z, a).ok()?;
    }
    let mut w = z.clone();
    for k in 1..=8 {
        w = map.eval_raw(&w, a).ok()?;
        if (&w - &z).amax() <= 1e-6 {
            return Some(k);
        }
    }
    None
}

/// Fixed point of the second stroboscopic iterate (one D term then one R
/// term) refined from `z`, with its multipliers.
fn nearby_cycle(name: &str, params: &model_zoo::ParamSet, z: &[f64], a: &Params) -> Value {
    let found = (|| -> nsbif::Result<Value> {
        let (map, _) = model_zoo::bounded_map(name, params)?;
        let fixed = make_defining_system(CurveKind::FixedPoint, &map)?;
        let z0 = DVector::from_column_slice(z);
        let (zs, _) = newton_solve(&fixed, &z0, a, &[])?;
        let mut ev: Vec<(f64, f64)> =
            map.jacobian(&zs, a)?.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
        ev.sort_by(|p, q| (q.0.hypot(q.1)).total_cmp(&p.0.hypot(p.1)));
        Ok(json!({
            "state": zs.as_slice(),
            "distance_from_trajectory": (&zs - &z0).amax(),
            "H": map.boundary(&zs, a)?,
            "multipliers": ev,
        }))
    })();
    found.unwrap_or_else(|e| json!({ "error": e.to_string() }))
}

fn floats_arg(flag: Option<&str>, cfg: Option<Vec<f64>>, what: &str) -> Result<Option<Vec<f64>>, Failure> {
    match flag {
        Some(s) => Ok(Some(config::parse_floats(s, what)?)),
        None => Ok(cfg),
    }
}

fn alpha_arg(flag: Option<&str>, cfg: Option<[f64; 2]>) -> Result<Option<Params>, Failure> {
    match flag {
        Some(s) => match config::parse_floats(s, "--alpha")?[..] {
            [a, b] => Ok(Some([a, b])),
            _ => Err(Failure::config("--alpha expects two values")),
        },
        None => Ok(cfg),
    }
}

pub fn simulate(c: &Common) -> Result<u8, Failure> {
    let run = prepare(c)?;
    let t_max = c.t_max.or(run.cfg.simulate.t_max).unwrap_or(100.0);
    if !(t_max > 0.0) {
        return Err(Failure::config(format!("--t-max must be positive (got {t_max})")));
    }
    let a = run.system.alpha();
    let model = match &run.system {
        System::Builtin { name, params } => model_zoo::build(name, params)?,
        System::Custom { map, z0, .. } => Model::Map { map: map.clone(), z0: z0.clone() },
    };
    let x0 = floats_arg(c.x0.as_deref(), run.cfg.simulate.x0.clone(), "--x0")?;
    let mut summary = header(&run);
    match model {
        Model::Hybrid { sys, section, x0: default_x0 } => {
            let x0 = x0.unwrap_or(default_x0);
            if x0.len() != sys.dim {
                return Err(Failure::config(format!("x0 has {} entries, the state has {}", x0.len(), sys.dim)));
            }
            let tr = run_flow(&sys, &x0, &a, t_max)?;
            let path = run.out_dir.join("trajectory.csv");
            tr.write_csv(BufWriter::new(File::create(&path)?))?;
            let events: Vec<_> = tr.events().collect();
            let mut counts = serde_json::Map::new();
            for b in &sys.boundaries {
                counts.insert(b.name.clone(), json!(0));
            }
            for e in &events {
                let k = &sys.boundaries[e.boundary].name;
                counts[k] = json!(counts[k].as_u64().unwrap_or(0) + 1);
            }
            let max_res = events.iter().filter(|e| !sys.boundaries[e.boundary].is_timed()).map(|e| e.residual.abs()).fold(0.0, f64::max);
            let event_period = tr.detect_period(1e-6);
            let final_state = tr.final_state();
            let map_period = section.as_ref().and_then(|sec: &PoincareSection| {
                let m = as_bounded_map(&sys, sec);
                return_period(&m, sec.to_coords(&final_state), &a)
            });
            summary["t_max"] = json!(t_max);
            summary["x0"] = json!(x0);
            summary["event_count"] = json!(events.len());
            summary["events_by_boundary"] = Value::Object(counts);
            summary["event_times"] = json!(events.iter().map(|e| e.time).collect::<Vec<_>>());
            summary["max_event_residual"] = json!(max_res);
            summary["event_period"] = json!(event_period);
            if section.is_some() {
                summary["return_map_period"] = json!(map_period);
            }
            summary["period_tag"] = json!(period_tag(if section.is_some() { map_period } else { event_period }));
            summary["final_state"] = json!(final_state);
            summary["degenerate_events"] = json!(tr.degenerate);
            summary["trajectory"] = json!(path.file_name().and_then(|s| s.to_str()));
            if let System::Builtin { name, params } = &run.system {
                if name == "two-party" {
                    let start = events.iter().rev().find(|e| e.region_after == model_zoo::Gov::D.region()).map(|e| e.post.clone());
                    if let Some(z) = start {
                        summary["period_2T_cycle"] = nearby_cycle(name, params, &z, &a);
                    }
                }
            }
        }
        Model::Map { map, z0 } => {
            let z0 = x0.unwrap_or(z0);
            if z0.len() != map.dim() {
                return Err(Failure::config(format!("x0 has {} entries, the map has {}", z0.len(), map.dim())));
            }
            let steps = c.steps.unwrap_or(1000);
            let path = run.out_dir.join("orbit.csv");
            let mut w = BufWriter::new(File::create(&path)?);
            writeln!(w, "# nsbif-csv v1")?;
            let mut head = vec!["k".to_string()];
            head.extend((1..=map.dim()).map(|i| format!("z{i}")));
            head.push("H".into());
            writeln!(w, "{}", head.join(","))?;
            let mut z = DVector::from_vec(z0.clone());
            let mut last = 0;
            for k in 0..=steps {
                let h = map.boundary(&z, &a)?;
                write!(w, "{k}")?;
                for v in z.iter() {
                    write!(w, ",{v:.15e}")?;
                }
                writeln!(w, ",{h:.15e}")?;
                last = k;
                if k < steps {
                    z = map.eval_raw(&z, &a)?;
                }
            }
            w.flush()?;
            summary["iterations"] = json!(last);
            summary["x0"] = json!(z0);
            summary["period_tag"] = json!(period_tag(return_period(&map, z.clone(), &a)));
            summary["final_state"] = json!(z.as_slice());
            summary["trajectory"] = json!(path.file_name().and_then(|s| s.to_str()));
        }
    }
    write_json(&run.out_dir.join("summary.json"), &summary)?;
    println!("{}", summary["period_tag"].as_str().unwrap_or(""));
    Ok(0)
}

fn parse_kind(s: &str) -> Result<CurveKind, Failure> {
    match CurveKind::parse(s) {
        Some(CurveKind::GrazingTorus) | Some(CurveKind::Custom) | None => Err(Failure::config(format!(
            "unknown curve `{s}` (one of fixed-point, fold, flip, ns, bc-fixed, bc-period2)"
        ))),
        Some(k) => Ok(k),
    }
}

/// Relaxes `z` onto an attracting fixed point of `map` if iteration converges;
/// otherwise returns it unchanged.
fn relax(map: &BoundedMap, z: DVector<f64>, a: &Params) -> DVector<f64> {
    let mut w = z.clone();
    for _ in 0..200 {
        match map.eval_raw(&w, a) {
            Ok(v) => {
                let d = (&v - &w).norm();
                w = v;
                if d <= 1e-13 * (1.0 + w.norm()) {
                    return w;
                }
            }
            Err(_) => return z,
        }
    }
    if w.iter().all(|v| v.is_finite()) {
        w
    } else {
        z
    }
}

fn default_case(system: &System) -> Option<Case> {
    match system.name() {
        "nf-fold" | "forest-fire" => Some(Case::Fold),
        "nf-flip" | "two-party" => Some(Case::Flip),
        "nf-ns" => Some(Case::Ns),
        _ => None,
    }
}

/// Starting point `X = (y, alpha)` on the curve of the given kind.
fn locate_start(
    map: &BoundedMap,
    sys: &nsbif::continuation::DefiningSystem,
    kind: CurveKind,
    z: &DVector<f64>,
    alpha: &Params,
    seed_offset: Option<f64>,
) -> Result<DVector<f64>, Failure> {
    let (z, alpha) = (z.clone(), *alpha);
    Ok(if kind == CurveKind::BcPeriod2 {
        let rec = analyze_codim2(map, Case::Flip, &z, &alpha)?;
        period2_bc_seed(map, &rec, seed_offset.unwrap_or(1e-2))?
    } else {
        let y0 = eigen_seed(kind, map, &z, &alpha)?;
        let r0 = sys.residual(&y0, &alpha)?.norm();
        if r0 <= NEWTON_TOL {
            join_x(&y0, &alpha)
        } else {
            let mut found = None;
            let mut last = Error::InitialPointInvalid { residual: r0 };
            for free in [[1usize], [0]] {
                match newton_solve(sys, &y0, &alpha, &free) {
                    Ok((y, a)) => {
                        found = Some(join_x(&y, &a));
                        break;
                    }
                    Err(e) => last = e,
                }
            }
            found.ok_or_else(|| Failure::from(last))?
        }
    })
}

pub fn continue_cmd(c: &Common) -> Result<u8, Failure> {
    let run = prepare(c)?;
    let cc = &run.cfg.cont;
    let kind_s = c.curve.clone().or_else(|| cc.curve.clone()).ok_or_else(|| Failure::config("--curve is required"))?;
    let kind = parse_kind(&kind_s)?;
    let (map, z0) = run.system.bounded_map()?;
    let given_z = floats_arg(c.z.as_deref(), cc.start_z.clone(), "--z")?;
    let explicit = given_z.is_some();
    let alpha = alpha_arg(c.alpha.as_deref(), cc.start_alpha)?.unwrap_or_else(|| run.system.alpha());
    let z = DVector::from_vec(given_z.unwrap_or(z0));
    if z.len() != map.dim() {
        return Err(Failure::config(format!("start state has {} entries, the map has {}", z.len(), map.dim())));
    }
    let z = if explicit { z } else { relax(&map, z, &alpha) };
    let sys = make_defining_system(kind, &map)?;
    let start = locate_start(&map, &sys, kind, &z, &alpha, cc.seed_offset)
        .map_err(|e| Failure { message: format!("could not locate a starting point on the {kind} curve: {}", e.message), ..e })?;
    let opts = ContinuationOptions {
        steps: c.steps.or(cc.steps).unwrap_or(200),
        h0: cc.h0.unwrap_or(1e-3),
        h_max: cc.h_max.unwrap_or(1e-2),
        bounds: cc.bounds,
        ..Default::default()
    };
    let mut curve = continue_both(&sys, &start, &opts, threads())?;
    for m in 0..sys.monitors.len() {
        let sp = detect_special_points(&sys, &curve, m);
        curve.special.extend(sp);
    }
    let path = run.out_dir.join("curve.csv");
    curve.write_csv(BufWriter::new(File::create(&path)?))?;
    let max_res = curve.points.iter().map(|p| p.residual).fold(0.0, f64::max);
    let mut out = header(&run);
    out["curve"] = json!(kind.tag());
    out["points"] = json!(curve.points.len());
    out["stop"] = json!(curve.stop);
    out["max_residual"] = json!(max_res);
    out["special_points"] = serde_json::to_value(&curve.special).map_err(|e| Failure::numerical(e.to_string()))?;
    out["curve_file"] = json!(path.file_name().and_then(|s| s.to_str()));
    write_json(&run.out_dir.join("special_points.json"), &out)?;
    println!("{} points, {} special", curve.points.len(), curve.special.len());
    Ok(0)
}

pub fn analyze(c: &Common) -> Result<u8, Failure> {
    let run = prepare(c)?;
    let k = &run.cfg.codim2;
    let case = match c.curve.clone().or_else(|| k.case.clone()) {
        Some(s) => Case::parse(&s).ok_or_else(|| Failure::config(format!("unknown codimension-two case `{s}` (fold, flip, ns)")))?,
        None => default_case(&run.system).ok_or_else(|| Failure::config("--curve fold|flip|ns is required"))?,
    };
    let (map, z0) = run.system.bounded_map()?;
    let z = DVector::from_vec(floats_arg(c.z.as_deref(), k.z.clone(), "--z")?.unwrap_or(z0));
    if z.len() != map.dim() {
        return Err(Failure::config(format!("state has {} entries, the map has {}", z.len(), map.dim())));
    }
    let alpha = alpha_arg(c.alpha.as_deref(), k.alpha)?.unwrap_or_else(|| run.system.alpha());
    let rec = analyze_codim2(&map, case, &z, &alpha)?;
    let mut out = header(&run);
    out["record"] = serde_json::to_value(&rec).map_err(|e| Failure::numerical(e.to_string()))?;
    out["all_checks_pass"] = json!(rec.all_pass());
    write_json(&run.out_dir.join("codim2.json"), &out)?;
    for ch in &rec.checks {
        println!("{:<48} {:>14.6e}  {}", ch.name, ch.value, if ch.pass { "ok" } else { "FAIL" });
    }
    for w in &rec.warnings {
        println!("warning: {w}");
    }
    Ok(if rec.all_pass() { 0 } else { 4 })
}

fn read_curve(p: &Path) -> Result<BifCurve, Failure> {
    let text = fs::read_to_string(p).map_err(|e| Failure::config(format!("cannot read {}: {e}", p.display())))?;
    BifCurve::read_csv(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))
}

/// `(alpha, normal hint)` from a record written by `analyze-codim2`.
fn read_record(p: &Path) -> Result<(Params, Option<[f64; 2]>), Failure> {
    let text = fs::read_to_string(p).map_err(|e| Failure::config(format!("cannot read {}: {e}", p.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
    let r = v.get("record").unwrap_or(&v);
    let pair = |x: &Value| -> Option<[f64; 2]> { Some([x.get(0)?.as_f64()?, x.get(1)?.as_f64()?]) };
    let alpha = r.get("alpha").and_then(pair).ok_or_else(|| Failure::config(format!("{}: no alpha", p.display())))?;
    Ok((alpha, r.get("asymptote").and_then(|a| a.get("normal")).and_then(pair)))
}

pub fn verify(c: &Common) -> Result<u8, Failure> {
    let cfg = config::load(c.config.as_deref())?;
    let t = &cfg.tangency;
    let out_dir = c.out_dir.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;
    let primary = c.primary.clone().or_else(|| t.primary.clone()).ok_or_else(|| Failure::config("--primary is required"))?;
    let secondary =
        c.secondary.clone().or_else(|| t.secondary.clone()).ok_or_else(|| Failure::config("--secondary is required"))?;
    let (point, normal) = match (c.record.clone().or_else(|| t.record.clone()), alpha_arg(c.alpha.as_deref(), t.point)?) {
        (_, Some(a)) => (a, None),
        (Some(r), None) => read_record(&r)?,
        (None, None) => return Err(Failure::config("--record or --alpha (the codimension-two point) is required")),
    };
    let mut opts = TangencyOptions { normal, ..Default::default() };
    if let Some(w) = t.window {
        opts.window = (w[0], w[1]);
    }
    let fit = verify_tangency(&read_curve(&primary)?, &read_curve(&secondary)?, &point, &opts)?;
    let pass = (1.9..=2.1).contains(&fit.exponent) && fit.angle <= 1e-2;
    let out = json!({
        "point": point,
        "angle": fit.angle,
        "exponent": fit.exponent,
        "kappa": fit.kappa,
        "validity_radius": fit.validity_radius,
        "n_points": fit.n_points,
        "max_relative_residual": fit.residual,
        "tangent": fit.tangent,
        "accepted": pass,
        "seed": c.seed.or(cfg.seed).unwrap_or(0),
    });
    write_json(&out_dir.join("tangency.json"), &out)?;
    println!("angle {:.3e} rad, exponent {:.4}, kappa {:.4e}", fit.angle, fit.exponent, fit.kappa);
    Ok(if pass { 0 } else { 5 })
}

pub fn list_systems() -> Result<u8, Failure> {
    let mut out = std::io::stdout().lock();
    // a closed pipe (e.g. `| head`) is not an error
    let _ = write_systems(&mut out);
    Ok(0)
}

fn write_systems(out: &mut impl Write) -> std::io::Result<()> {
    for d in model_zoo::descriptors() {
        let kind = match d.kind {
            model_zoo::ModelKind::Hybrid => "hybrid",
            model_zoo::ModelKind::Map => "map",
        };
        writeln!(out, "{} ({kind}, plane {},{})", d.name, d.plane[0], d.plane[1])?;
        let ps: Vec<String> = d.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(out, "  params: {}", ps.join(" "))?;
        writeln!(out, "  {}", d.doc.split_whitespace().collect::<Vec<_>>().join(" "))?;
    }
    Ok(())
}
