//! Browser bindings for the interactive demo page.
//!
//! Three parameter-explorable views, each returning a JSON payload the
//! page renders onto canvases:
//! - the ensemble-averaged portfolio loss density against its
//!   infinite-portfolio limit,
//! - the heavy-tailed single-component return density against the
//!   Gaussian it degenerates to,
//! - the Gaussian copula heatmap for a given loss correlation.

use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

use wishrisk_core::copula::gaussian_copula_histogram;
use wishrisk_core::merton::{
    avg_loss_density, limiting_loss_density, uniform_grid, PortfolioSpec, QuadratureSettings,
};
use wishrisk_core::wishart::{univariate_aggregated_density, FluctuationN};

#[derive(Serialize)]
struct CurvePayload {
    grid: Vec<f64>,
    density: Vec<f64>,
    limiting: Vec<f64>,
    normalization_defect: f64,
}

#[derive(Serialize)]
struct ReturnDensityPayload {
    x: Vec<f64>,
    heavy: Vec<f64>,
    gaussian: Vec<f64>,
}

#[derive(Serialize)]
struct HeatmapPayload {
    bins: usize,
    density: Vec<f64>,
}

fn err_json(msg: impl std::fmt::Display) -> String {
    format!("{{\"error\":{}}}", serde_json::json!(msg.to_string()))
}

/// Portfolio loss density for a homogeneous book of `k` contracts with
/// effective correlation `c` and fluctuation strength `n` (pass 0 for the
/// fixed-covariance limit), plus the infinite-portfolio curve.
#[wasm_bindgen]
pub fn loss_density_curve(
    c: f64,
    n: f64,
    k: u32,
    mu: f64,
    rho: f64,
    leverage: f64,
    points: u32,
) -> String {
    let k = k.clamp(2, 500) as usize;
    let points = points.clamp(64, 1024) as usize;
    let fluct = if n <= 0.0 {
        FluctuationN::Infinite
    } else {
        FluctuationN::Finite(n)
    };
    let spec = match PortfolioSpec::homogeneous(k, 100.0 * leverage, 100.0, mu, rho, 1.0) {
        Ok(s) => s,
        Err(e) => return err_json(e),
    };
    let grid = uniform_grid(points);
    // modest node counts keep slider interaction fluid
    let settings = QuadratureSettings {
        z_nodes: 64,
        u_nodes: (4 * k).clamp(64, 640),
        refine_check: false,
        tolerance: 1e-4,
        check_floor: 0.02,
    };
    let curve = match avg_loss_density(&grid, &spec, c, fluct, &settings) {
        Ok(curve) => curve,
        Err(e) => return err_json(e),
    };
    let limiting = if c > 0.0 {
        match limiting_loss_density(&grid, &spec, c, fluct, &settings) {
            Ok(l) => l.density,
            Err(_) => vec![0.0; grid.len()],
        }
    } else {
        vec![0.0; grid.len()]
    };
    serde_json::to_string(&CurvePayload {
        grid,
        density: curve.density,
        limiting,
        normalization_defect: curve.normalization_defect,
    })
    .unwrap_or_else(err_json)
}

/// Single-component return density under covariance fluctuations of
/// strength `n` (0 for the Gaussian limit), with the standard normal for
/// comparison.
#[wasm_bindgen]
pub fn return_density_curve(n: f64, x_max: f64, points: u32) -> String {
    let points = points.clamp(64, 2048) as usize;
    let x_max = x_max.clamp(1.0, 30.0);
    let n_eff = if n <= 0.0 { f64::INFINITY } else { n };
    let xs: Vec<f64> = (0..points)
        .map(|i| -x_max + 2.0 * x_max * i as f64 / (points - 1) as f64)
        .collect();
    let mut heavy = Vec::with_capacity(points);
    let mut gaussian = Vec::with_capacity(points);
    for &x in &xs {
        match univariate_aggregated_density(x, n_eff) {
            Ok(p) => heavy.push(p),
            Err(e) => return err_json(e),
        }
        gaussian.push((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt());
    }
    serde_json::to_string(&ReturnDensityPayload {
        x: xs,
        heavy,
        gaussian,
    })
    .unwrap_or_else(err_json)
}

/// Bin-integrated Gaussian copula density for a loss correlation.
#[wasm_bindgen]
pub fn gaussian_copula_heatmap(correlation: f64, bins: u32) -> String {
    let bins = bins.clamp(4, 60) as usize;
    let correlation = correlation.clamp(-0.995, 0.995);
    match gaussian_copula_histogram(correlation, bins) {
        Ok(hist) => serde_json::to_string(&HeatmapPayload {
            bins,
            density: hist.density,
        })
        .unwrap_or_else(err_json),
        Err(e) => err_json(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payloads_are_valid_json() {
        let v: serde_json::Value =
            serde_json::from_str(&loss_density_curve(0.28, 6.0, 50, 0.17, 0.35, 0.75, 128))
                .unwrap();
        assert_eq!(v["grid"].as_array().unwrap().len(), 128);
        assert!(v["normalization_defect"].as_f64().unwrap() >= 0.0);

        let v: serde_json::Value =
            serde_json::from_str(&return_density_curve(5.0, 6.0, 128)).unwrap();
        assert_eq!(v["heavy"].as_array().unwrap().len(), 128);

        let v: serde_json::Value =
            serde_json::from_str(&gaussian_copula_heatmap(0.752, 20)).unwrap();
        assert_eq!(v["density"].as_array().unwrap().len(), 400);
    }

    #[test]
    fn bad_parameters_return_error_payload() {
        let v: serde_json::Value =
            serde_json::from_str(&loss_density_curve(1.5, 6.0, 50, 0.17, 0.35, 0.75, 128))
                .unwrap();
        assert!(v["error"].is_string());
    }
}
