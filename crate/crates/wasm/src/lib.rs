//! Browser bindings: three interactive views over the core toolkit, each a
//! JSON-in / JSON-out function so the page stays a single static file.
//! Build with `wasm-pack build crates/wasm --target web` and open
//! `crates/wasm/www/index.html` from a static file server.

use wasm_bindgen::prelude::wasm_bindgen;

use shellspec::boundary::EvalPolicy;
use shellspec::models::{build_model, fourth_moment_run, ModelSpec};
use shellspec::spectral::{density_curve, mollified_density};
use shellspec::weyl::limit_point_diagnostic;
use shellspec::c64;

fn err_json(msg: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": msg.to_string() }).to_string()
}

/// Density curve of a model spec over [lmin, lmax]: raw per-depth values
/// plus the mollified weak-limit proxy and the detected point masses.
#[wasm_bindgen]
pub fn density_json(spec_json: &str, lmin: f64, lmax: f64, points: usize, depth: usize) -> String {
    if points < 2 || !(lmin < lmax) {
        return err_json("need points >= 2 and lmin < lmax");
    }
    let spec = match ModelSpec::from_json(spec_json) {
        Ok(s) => s,
        Err(e) => return err_json(e),
    };
    let depth = depth.min(spec.depth);
    let (so, cd) = match build_model(&spec) {
        Ok(x) => x,
        Err(e) => return err_json(e),
    };
    let grid: Vec<f64> = (0..points)
        .map(|k| lmin + (lmax - lmin) * k as f64 / (points - 1) as f64)
        .collect();
    let policy = EvalPolicy::default();
    let est = match density_curve(&so, &cd, &grid, depth, &policy) {
        Ok(e) => e,
        Err(e) => return err_json(e),
    };
    let sigma = (3.0 / depth.max(1) as f64).max(0.02);
    let smooth = mollified_density(&so, &cd, &grid, depth, sigma, &policy).unwrap_or_default();
    serde_json::json!({
        "grid": est.grid,
        "density": est.density,
        "mollified": smooth,
        "flags": est.flags.iter().map(|f| f.as_str()).collect::<Vec<_>>(),
        "masses": est.point_masses,
        "depth": depth,
    })
    .to_string()
}

/// Weyl discs across depths at z = z_re + i z_im, with the deepest dense
/// resolvent entry as the reference point.
#[wasm_bindgen]
pub fn weyl_json(spec_json: &str, z_re: f64, z_im: f64, depth: usize) -> String {
    if !(z_im > 0.0) {
        return err_json("need Im z > 0");
    }
    let spec = match ModelSpec::from_json(spec_json) {
        Ok(s) => s,
        Err(e) => return err_json(e),
    };
    let depth = depth.min(spec.depth);
    let (so, cd) = match build_model(&spec) {
        Ok(x) => x,
        Err(e) => return err_json(e),
    };
    let depths: Vec<usize> = (0..=depth).collect();
    let rows = match limit_point_diagnostic(&so, &cd, c64(z_re, z_im), &depths, &EvalPolicy::default())
    {
        Ok(r) => r,
        Err(e) => return err_json(e),
    };
    let truth = rows.last().map(|r| (r.truth.re, r.truth.im)).unwrap_or((0.0, 0.0));
    serde_json::json!({
        "rows": rows
            .iter()
            .map(|r| serde_json::json!({
                "n": r.depth,
                "center_re": r.center.re,
                "center_im": r.center.im,
                "radius": r.radius,
            }))
            .collect::<Vec<_>>(),
        "truth_re": truth.0,
        "truth_im": truth.1,
    })
    .to_string()
}

/// Fourth-moment Monte Carlo trend of the conjugated transfer chain.
#[wasm_bindgen]
pub fn mc_json(spec_json: &str, lambdas_csv: &str, every: usize, trials: usize) -> String {
    let spec = match ModelSpec::from_json(spec_json) {
        Ok(s) => s,
        Err(e) => return err_json(e),
    };
    let lambdas: Vec<f64> = match lambdas_csv
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
    {
        Ok(v) if !v.is_empty() => v,
        _ => return err_json("bad lambda list"),
    };
    let every = every.max(1);
    let depths: Vec<usize> = (1..=spec.depth / every).map(|k| k * every).collect();
    if depths.is_empty() {
        return err_json("no recordable depths");
    }
    let res = match fourth_moment_run(
        &spec,
        &lambdas,
        &depths,
        trials.max(2),
        (c64(1.0, 0.0), c64(0.0, 0.0)),
    ) {
        Ok(r) => r,
        Err(e) => return err_json(e),
    };
    serde_json::json!({
        "lambdas": res.lambdas,
        "depths": res.depths,
        "fourth_moment": res.fourth_moment,
        "stderr": res.stderr,
        "bound_product": res.bound_product,
        "trials": res.trials,
    })
    .to_string()
}
