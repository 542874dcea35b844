//! Browser bindings: the kept velocity mesh, projection bound curves, and a
//! small relaxation run. Every export returns JSON so the page stays plain JS.

use boltzwave_core::collision_tensor::build;
use boltzwave_core::haar_basis::{verify_assumption2, verify_assumption3, FilteredBasis, VerifyOptions};
use boltzwave_core::scenario_io::{parse_config, run_scenario};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest level the page may request; N=3 already has a few hundred cells.
pub const MAX_WEB_LEVEL: u32 = 3;

#[derive(Serialize)]
struct MeshCell {
    bar: [f64; 4],
    v: [f64; 4],
}

#[derive(Serialize)]
struct Mesh {
    level: u32,
    delta: f64,
    cells: usize,
    zeta: f64,
    v_extent: f64,
    slice: Vec<MeshCell>,
}

fn basis(level: u32, delta: f64) -> Result<FilteredBasis, String> {
    FilteredBasis::new(level, delta).map_err(|e| e.to_string())
}

/// Kept cells crossing the plane `vb_z = 0`, with their `[x_lo, x_hi, y_lo, y_hi]`
/// in bar and in physical coordinates.
#[wasm_bindgen]
pub fn mesh_slice(level: u32, delta: f64) -> Result<String, String> {
    if level > 6 {
        return Err("the mesh view is limited to level 6".into());
    }
    let b = basis(level, delta)?;
    let slice = (0..b.len())
        .filter_map(|i| {
            let c = b.cell(i);
            if c.bar_lo[2] <= 0.0 && 0.0 < c.bar_hi[2] {
                let e = b.v_extent_of(i);
                Some(MeshCell {
                    bar: [c.bar_lo[0], c.bar_hi[0], c.bar_lo[1], c.bar_hi[1]],
                    v: [e[0].0, e[0].1, e[1].0, e[1].1],
                })
            } else {
                None
            }
        })
        .collect();
    let m = Mesh {
        level,
        delta,
        cells: b.len(),
        zeta: b.zeta(),
        v_extent: b.v_extent(),
        slice,
    };
    Ok(serde_json::to_string(&m).expect("mesh serialises"))
}

#[derive(Serialize)]
struct RatioPoint {
    s: f64,
    min: f64,
    max: f64,
    lower: f64,
    upper: f64,
}

#[derive(Serialize)]
struct EpsPoint {
    level: u32,
    eps: f64,
    bound: f64,
}

#[derive(Serialize)]
struct Curves {
    ratios: Vec<RatioPoint>,
    eps: Vec<EpsPoint>,
}

/// Projection ratio range against `3^±|s|` for `steps` powers in
/// `[s_min, s_max]` at one level, and the sup error of `x = (|vb|/(1-|vb|))^2`
/// against its bound for levels 1 to `max_level`.
#[wasm_bindgen]
pub fn assumption_curves(
    level: u32,
    delta: f64,
    s_min: f64,
    s_max: f64,
    steps: u32,
    max_level: u32,
) -> Result<String, String> {
    if !(s_min.is_finite() && s_max.is_finite() && s_min <= s_max) {
        return Err(format!("bad power range [{s_min}, {s_max}]"));
    }
    if steps == 0 || steps > 200 {
        return Err("steps must be in 1..=200".into());
    }
    if max_level > 5 {
        return Err("max_level is limited to 5 here".into());
    }
    let opts = VerifyOptions {
        quad_splits: 1,
        samples_per_axis: 5,
        ..Default::default()
    };
    let b = basis(level, delta)?;
    let ratios = (0..steps)
        .map(|i| {
            let s = if steps == 1 {
                s_min
            } else {
                s_min + (s_max - s_min) * i as f64 / (steps - 1) as f64
            };
            let r = verify_assumption2(&b, s, &opts);
            RatioPoint {
                s,
                min: r.min_ratio,
                max: r.max_ratio,
                lower: r.lower_bound,
                upper: r.upper_bound,
            }
        })
        .collect();
    let eps = (1..=max_level)
        .filter_map(|n| {
            let b = FilteredBasis::new(n, delta).ok()?;
            let r = verify_assumption3(&b, 1, &opts);
            Some(EpsPoint {
                level: n,
                eps: r.measured_eps,
                bound: r.bound,
            })
        })
        .collect();
    Ok(serde_json::to_string(&Curves { ratios, eps }).expect("curves serialise"))
}

#[derive(Serialize)]
struct Series {
    t: Vec<f64>,
    mass: Vec<f64>,
    energy: Vec<f64>,
    entropy: Vec<f64>,
    dist_eq: Vec<f64>,
    min_cell: Vec<f64>,
    collision_time: f64,
    rate: Option<f64>,
    cells: usize,
}

/// Builds the tensor for a scenario config (JSON, level at most
/// [`MAX_WEB_LEVEL`]) and runs it, returning the diagnostic time series.
#[wasm_bindgen]
pub fn relax(config_json: &str) -> Result<String, String> {
    let cfg = parse_config(config_json).map_err(|e| e.to_string())?;
    if cfg.level > MAX_WEB_LEVEL {
        return Err(format!(
            "level {} is too large for the browser (max {MAX_WEB_LEVEL})",
            cfg.level
        ));
    }
    let b = cfg.basis().map_err(|e| e.to_string())?;
    let kernel = cfg.kernel_spec().map_err(|e| e.to_string())?;
    let t = build(&b, &kernel, &cfg.build_options()).map_err(|e| e.to_string())?;
    let mut s = Series {
        t: vec![],
        mass: vec![],
        energy: vec![],
        entropy: vec![],
        dist_eq: vec![],
        min_cell: vec![],
        collision_time: 0.0,
        rate: None,
        cells: b.len(),
    };
    let summary = run_scenario(&cfg, &b, &t, |_, r| {
        s.t.push(r.t);
        s.mass.push(r.mass);
        s.energy.push(r.energy);
        s.entropy.push(r.entropy);
        s.dist_eq.push(r.dist_eq);
        s.min_cell.push(r.min_cell);
    })
    .map_err(|e| e.to_string())?;
    s.collision_time = summary.collision_time;
    s.rate = summary.rate_fit.map(|f| f.c);
    Ok(serde_json::to_string(&s).expect("series serialise"))
}
