//! Calibrated parameter presets for the analytic loss density.
//!
//! `year` and `month` are the reference calibrations at one-year and
//! one-month maturities; `calm` and `crisis` are the monthly regime
//! calibrations for 2002-2004 and 2008-2010 market conditions.

use crate::CliError;

pub struct LossPreset {
    pub c: f64,
    pub n: f64,
    pub mu: f64,
    pub rho: f64,
    pub face: f64,
    pub v0: f64,
    pub t_m: f64,
    pub k: usize,
}

pub fn lookup(name: &str) -> Result<LossPreset, CliError> {
    let preset = match name {
        // one-year maturity, year units
        "year" => LossPreset {
            c: 0.28,
            n: 6.0,
            mu: 0.17,
            rho: 0.35,
            face: 75.0,
            v0: 100.0,
            t_m: 1.0,
            k: 100,
        },
        // one-month maturity, month units
        "month" => LossPreset {
            c: 0.26,
            n: 4.2,
            mu: 0.013,
            rho: 0.1,
            face: 75.0,
            v0: 100.0,
            t_m: 1.0,
            k: 100,
        },
        // calm regime (2002-2004 monthly calibration)
        "calm" => LossPreset {
            c: 0.30,
            n: 5.0,
            mu: 0.015,
            rho: 0.10,
            face: 75.0,
            v0: 100.0,
            t_m: 1.0,
            k: 100,
        },
        // crisis regime (2008-2010 monthly calibration)
        "crisis" => LossPreset {
            c: 0.46,
            n: 5.0,
            mu: 0.01,
            rho: 0.12,
            face: 75.0,
            v0: 100.0,
            t_m: 1.0,
            k: 100,
        },
        other => {
            return Err(CliError::Usage(format!(
                "unknown preset `{other}`; known: year, month, calm, crisis"
            )))
        }
    };
    Ok(preset)
}
