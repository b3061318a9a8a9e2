//! Batch command-line interface: deterministic runs, flat configuration,
//! plot-ready CSV and JSON reports, and a manifest that reproduces every
//! run bit-exactly.

mod config;
mod output;
mod presets;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use config::{parse_conf_file, split_args, ConfigSchema, KeySpec, Resolved};
use output::{
    copula_csv, curve_csv, date_from_day_offset, fmt_float, matrix_csv, parse_matrix_csv, to_json,
    OutputDir,
};
use wishrisk_core::copula::{scenario_suite, Scenario, ScenarioSettings, TieRule};
use wishrisk_core::market::{
    align_to_common_grid, compute_returns, correlation_matrix, covariance_matrix,
    effective_correlation, estimate_drift_vol, generate_synthetic_market, load_csv,
    normalize_series, rolling_volatility, sliding_correlation_ensemble, CovarianceMatrix,
    ReturnMatrix, SyntheticMarketSpec,
};
use wishrisk_core::merton::{
    avg_loss_density, limiting_loss_density, log_refined_grid, risk_measures_from_curve,
    uniform_grid, PortfolioSpec, QuadratureSettings,
};
use wishrisk_core::monte_carlo::{
    run_losses, var_etl, CovarianceSource, Dynamics, SimulationConfig,
};
use wishrisk_core::wishart::{
    aggregate_returns, fit_n, univariate_aggregated_density, FluctuationN, RotationBasis,
};

/// Failure classes mapped onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unknown keys, malformed input: exit 2.
    Usage(String),
    /// Numerical failure during computation: exit 3.
    Numeric(String),
    /// Filesystem problems: exit 4.
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Numeric(_) => "numeric",
            CliError::Io(_) => "io",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) | CliError::Io(m) => m,
        }
    }
}

impl From<wishrisk_core::Error> for CliError {
    fn from(e: wishrisk_core::Error) -> Self {
        use wishrisk_core::Error as E;
        match e {
            E::Argument(_) | E::Parse { .. } | E::Domain(_) => CliError::Usage(e.to_string()),
            E::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => {}
        Err(e) => {
            let json = format!(
                "{{\"error\":{},\"kind\":\"{}\",\"exit_code\":{}}}",
                serde_json::to_string(e.message()).unwrap_or_else(|_| "\"?\"".to_string()),
                e.kind(),
                e.exit_code()
            );
            eprintln!("{json}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(args: &[String]) -> Result<(), CliError> {
    let Some(subcommand) = args.first() else {
        eprintln!("{}", global_usage());
        return Err(CliError::Usage("missing subcommand".to_string()));
    };
    if subcommand == "--help" || subcommand == "help" {
        println!("{}", global_usage());
        return Ok(());
    }
    let schema = schema_for(subcommand)?;
    let rest = &args[1..];
    if rest.iter().any(|a| a == "--help") {
        println!("{}", schema.usage());
        return Ok(());
    }
    let (flag_pairs, config_path) = split_args(rest)?;
    let file_pairs = match config_path {
        Some(path) => parse_conf_file(std::path::Path::new(&path))?,
        None => BTreeMap::new(),
    };
    let resolved = schema.resolve(file_pairs, flag_pairs)?;
    let started = Instant::now();
    match subcommand.as_str() {
        "synth" => cmd_synth(&resolved, started),
        "estimate" => cmd_estimate(&resolved, started),
        "fit-n" => cmd_fit_n(&resolved, started),
        "loss-dist" => cmd_loss_dist(&resolved, started),
        "var" => cmd_var(&resolved, started),
        "copula" => cmd_copula(&resolved, started),
        other => Err(CliError::Usage(format!("unknown subcommand `{other}`"))),
    }
}

fn global_usage() -> String {
    "wishrisk: credit portfolio risk under fluctuating asset correlations\n\n\
     subcommands:\n\
       synth      generate a synthetic correlated market as price CSV\n\
       estimate   returns, moments, rolling and global correlation structure\n\
       fit-n      fit the covariance fluctuation parameter to aggregated returns\n\
       loss-dist  analytic portfolio loss density and curve risk measures\n\
       var        Monte-Carlo VaR and expected tail loss\n\
       copula     two-portfolio loss copula scenarios\n\n\
     run `wishrisk <subcommand> --help` for keys; `--config FILE` merges a\n\
     flat key-value file (flag > file > default)."
        .to_string()
}

fn schema_for(subcommand: &str) -> Result<ConfigSchema, CliError> {
    let keys = |v: Vec<(&'static str, Option<&'static str>, &'static str)>| {
        v.into_iter()
            .map(|(name, default, help)| KeySpec {
                name,
                default,
                help,
            })
            .collect()
    };
    let schema = match subcommand {
        "synth" => ConfigSchema {
            subcommand: "synth",
            keys: keys(vec![
                ("assets", Some("50"), "number of assets"),
                ("steps", Some("2520"), "trading days to simulate"),
                ("c", Some("0.3"), "pairwise shock correlation"),
                ("rho", Some("0.02"), "per-step return volatility"),
                ("mu", Some("0.001"), "per-step mean return"),
                ("s0", Some("100"), "initial price"),
                ("seed", None, "64-bit random seed"),
                ("out", Some("out"), "output directory"),
            ]),
        },
        "estimate" => ConfigSchema {
            subcommand: "estimate",
            keys: keys(vec![
                ("input", None, "price CSV (date,asset_id,close)"),
                ("delta-t", Some("1"), "return interval in trading days"),
                ("window", Some("60"), "rolling window length"),
                ("stride", Some("0"), "window stride (0 = non-overlapping)"),
                ("t-m", Some("1"), "maturity in return-interval units, for rho"),
                ("out", Some("out"), "output directory"),
            ]),
        },
        "fit-n" => ConfigSchema {
            subcommand: "fit-n",
            keys: keys(vec![
                ("input", Some(""), "price CSV to derive returns from"),
                ("returns", Some(""), "returns matrix CSV (alternative input)"),
                ("delta-t", Some("1"), "return interval when reading prices"),
                ("basis", Some("per-window"), "rotation basis: per-window | global"),
                ("window", Some("25"), "aggregation window (per-window basis)"),
                ("out", Some("out"), "output directory"),
            ]),
        },
        "loss-dist" => ConfigSchema {
            subcommand: "loss-dist",
            keys: keys(vec![
                ("preset", Some("year"), "parameter preset: year | month | calm | crisis"),
                ("c", Some(""), "effective correlation override"),
                ("n", Some(""), "fluctuation parameter override (number or `inf`)"),
                ("k", Some(""), "portfolio size override (number or `inf`)"),
                ("mu", Some(""), "drift per time unit override"),
                ("rho", Some(""), "volatility per sqrt time unit override"),
                ("f", Some(""), "face value override"),
                ("v0", Some(""), "initial asset value override"),
                ("t-m", Some(""), "maturity override"),
                ("grid", Some("512"), "number of loss grid points"),
                ("grid-type", Some("uniform"), "uniform | log"),
                ("grid-floor", Some("1e-6"), "smallest positive point of the log grid"),
                ("z-nodes", Some("0"), "chi-squared quadrature nodes (0 = auto)"),
                ("u-nodes", Some("0"), "market-factor quadrature nodes (0 = auto)"),
                ("alphas", Some("0.99,0.995,0.999"), "quantiles for curve risk measures"),
                ("out", Some("out"), "output directory"),
            ]),
        },
        "var" => ConfigSchema {
            subcommand: "var",
            keys: keys(vec![
                ("trials", Some("100000"), "Monte-Carlo trials"),
                ("seed", None, "64-bit random seed"),
                ("dynamics", Some("fixed"), "fixed | mixture"),
                ("n", Some(""), "fluctuation parameter for mixture dynamics"),
                ("source", Some("effective"), "covariance source: effective | empirical"),
                ("c", Some("0.28"), "effective correlation"),
                ("rho", Some("0.35"), "volatility (effective source)"),
                ("k", Some("100"), "portfolio size (effective source)"),
                ("mu", Some("0.17"), "drift per time unit (effective source)"),
                ("f", Some("75"), "face value"),
                ("v0", Some("100"), "initial asset value"),
                ("t-m", Some("1"), "maturity in time units"),
                ("cov-input", Some(""), "covariance matrix CSV (empirical source)"),
                ("moments-input", Some(""), "moments CSV for drifts (empirical source)"),
                ("alphas", Some("0.99,0.995,0.999"), "quantile levels"),
                ("dump-losses", Some("false"), "also write raw per-trial losses"),
                ("out", Some("out"), "output directory"),
            ]),
        },
        "copula" => ConfigSchema {
            subcommand: "copula",
            keys: keys(vec![
                ("scenario", None, "c0-gaussian | c0-mixture | drift-high | drift-mid | drift-neg | hetero-vol | two-market"),
                ("trials", Some("100000"), "trials per repetition"),
                ("seed", None, "64-bit random seed"),
                ("bins", Some("20"), "copula histogram bins per axis"),
                ("repetitions", Some("0"), "parameter redraws (0 = scenario default)"),
                ("k", Some("50"), "contracts per portfolio"),
                ("tie-rule", Some("jitter"), "rank ties: jitter | midrank"),
                ("out", Some("out"), "output directory"),
            ]),
        },
        other => {
            return Err(CliError::Usage(format!(
                "unknown subcommand `{other}`\n\n{}",
                global_usage()
            )))
        }
    };
    Ok(schema)
}

// --- synth ---

fn cmd_synth(resolved: &Resolved, started: Instant) -> Result<(), CliError> {
    let spec = SyntheticMarketSpec {
        assets: resolved.parse_usize("assets")?,
        steps: resolved.parse_usize("steps")?,
        c: resolved.parse_f64("c")?,
        vols: vec![resolved.parse_f64("rho")?],
        drifts: vec![resolved.parse_f64("mu")?],
        initial_price: resolved.parse_f64("s0")?,
    };
    let seed = resolved.parse_u64("seed")?;
    let series = generate_synthetic_market(&spec, seed)?;
    let mut csv = String::from("date,asset_id,close\n");
    // synthetic timestamps counted from 2000-01-03
    let base = 10_959i64;
    for s in &series {
        for (t, p) in s.timestamps.iter().zip(&s.prices) {
            csv.push_str(&format!(
                "{},{},{}\n",
                date_from_day_offset(base + t),
                s.asset_id,
                fmt_float(*p)
            ));
        }
    }
    let mut out = OutputDir::create(resolved.get("out"))?;
    out.write("prices.csv", &csv)?;
    out.finish(resolved, started.elapsed().as_millis())?;
    Ok(())
}

// --- estimate ---

fn rect_csv(ids: &[String], values: &nalgebra::DMatrix<f64>) -> String {
    let mut out = String::from("asset_id");
    for t in 0..values.ncols() {
        out.push_str(&format!(",t{t}"));
    }
    out.push('\n');
    for (k, id) in ids.iter().enumerate() {
        out.push_str(id);
        for t in 0..values.ncols() {
            out.push_str(&format!(",{}", fmt_float(values[(k, t)])));
        }
        out.push('\n');
    }
    out
}

fn cmd_estimate(resolved: &Resolved, started: Instant) -> Result<(), CliError> {
    let series = load_csv(resolved.get("input"))?;
    let series = align_to_common_grid(series)?;
    let delta_t = resolved.parse_usize("delta-t")?;
    let returns = compute_returns(&series, delta_t)?;
    let t_m = resolved.parse_f64("t-m")?;
    let window = resolved.parse_usize("window")?;
    let stride = match resolved.parse_usize("stride")? {
        0 => window,
        s => s,
    };

    let moments = estimate_drift_vol(&returns, t_m)?;
    let t = returns.observations();
    let normalized = normalize_series(&returns, 0..t)?;
    let corr = correlation_matrix(&normalized)?;
    let cov = covariance_matrix(&returns)?;
    let (c_eff, _) = effective_correlation(&corr);
    let vols = rolling_volatility(&returns, window, stride)?;
    let ensemble = sliding_correlation_ensemble(&returns, window, stride)?;

    let mut out = OutputDir::create(resolved.get("out"))?;
    out.write("returns.csv", &rect_csv(&returns.asset_ids, &returns.values))?;
    {
        let mut csv = String::from("asset_id,mu,sigma,rho\n");
        for (k, id) in returns.asset_ids.iter().enumerate() {
            csv.push_str(&format!(
                "{id},{},{},{}\n",
                fmt_float(moments.mu[k]),
                fmt_float(moments.sigma[k]),
                fmt_float(moments.rho[k])
            ));
        }
        out.write("moments.csv", &csv)?;
    }
    out.write(
        "correlation.csv",
        &matrix_csv(&returns.asset_ids, corr.entries()),
    )?;
    out.write(
        "covariance.csv",
        &matrix_csv(&returns.asset_ids, cov.entries()),
    )?;
    #[derive(Serialize)]
    struct MatrixJson<'a> {
        dim: usize,
        entries: Vec<Vec<f64>>,
        asset_ids: &'a [String],
        delta_t: usize,
        observations: usize,
    }
    let to_nested = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    };
    for (name, entries) in [
        ("correlation.json", corr.entries()),
        ("covariance.json", cov.entries()),
    ] {
        out.write(
            name,
            &to_json(&MatrixJson {
                dim: entries.nrows(),
                entries: to_nested(entries),
                asset_ids: &returns.asset_ids,
                delta_t,
                observations: t,
            })?,
        )?;
    }
    {
        let mut csv = String::from("asset_id,window_start,sigma\n");
        let starts: Vec<usize> = (0..=(t - window)).step_by(stride).collect();
        for (k, id) in returns.asset_ids.iter().enumerate() {
            for (w, &start) in starts.iter().enumerate() {
                csv.push_str(&format!("{id},{start},{}\n", fmt_float(vols[k][w])));
            }
        }
        out.write("rolling_vol.csv", &csv)?;
    }
    #[derive(Serialize)]
    struct EffectiveReport {
        c: f64,
        dim: usize,
        observations: usize,
        delta_t: usize,
        window: usize,
        stride: usize,
        ensemble_windows: usize,
        skipped_windows: usize,
    }
    out.write(
        "effective.json",
        &to_json(&EffectiveReport {
            c: c_eff,
            dim: corr.dim(),
            observations: t,
            delta_t,
            window,
            stride,
            ensemble_windows: ensemble.matrices.len(),
            skipped_windows: ensemble.skipped.len(),
        })?,
    )?;
    out.finish(resolved, started.elapsed().as_millis())?;
    Ok(())
}

// --- fit-n ---

fn parse_returns_csv(text: &str) -> Result<ReturnMatrix, CliError> {
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields
            .next()
            .ok_or_else(|| CliError::Usage(format!("returns row {}: empty", lineno + 1)))?;
        ids.push(id.to_string());
        let row: Result<Vec<f64>, CliError> = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    CliError::Usage(format!("returns row {}: bad number `{f}`", lineno + 1))
                })
            })
            .collect();
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(CliError::Usage("returns file has no data rows".to_string()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Usage("ragged returns matrix".to_string()));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(ReturnMatrix::new(
        nalgebra::DMatrix::from_row_slice(ids.len(), cols, &flat),
        1,
        ids,
    )?)
}

fn cmd_fit_n(resolved: &Resolved, started: Instant) -> Result<(), CliError> {
    let input = resolved.get("input");
    let returns_path = resolved.get("returns");
    let returns = match (input.is_empty(), returns_path.is_empty()) {
        (false, true) => {
            let series = align_to_common_grid(load_csv(input)?)?;
            compute_returns(&series, resolved.parse_usize("delta-t")?)?
        }
        (true, false) => {
            let text = std::fs::read_to_string(returns_path)
                .map_err(|e| CliError::Io(format!("cannot read {returns_path}: {e}")))?;
            parse_returns_csv(&text)?
        }
        _ => {
            return Err(CliError::Usage(
                "provide exactly one of --input (prices) or --returns (matrix)".to_string(),
            ))
        }
    };
    let aggregated = match resolved.get("basis") {
        "per-window" => aggregate_returns(
            &returns,
            RotationBasis::PerWindow {
                window: resolved.parse_usize("window")?,
            },
        )?,
        "global" => {
            let cov = covariance_matrix(&returns)?;
            aggregate_returns(&returns, RotationBasis::Global(&cov))?
        }
        other => {
            return Err(CliError::Usage(format!(
                "basis must be per-window or global, got `{other}`"
            )))
        }
    };
    let report = fit_n(&aggregated)?;

    let mut out = OutputDir::create(resolved.get("out"))?;
    {
        let mut csv = String::from("value\n");
        for v in &aggregated.values {
            csv.push_str(&fmt_float(*v));
            csv.push('\n');
        }
        out.write("aggregated.csv", &csv)?;
    }
    {
        let xs: Vec<f64> = (0..=512).map(|i| -8.0 + 16.0 * i as f64 / 512.0).collect();
        let ys: Result<Vec<f64>, _> = xs
            .iter()
            .map(|x| univariate_aggregated_density(*x, report.n_hat))
            .collect();
        out.write("density_fit.csv", &curve_csv("x", "p", &xs, &ys?))?;
    }
    out.write("fit.json", &to_json(&report)?)?;
    out.finish(resolved, started.elapsed().as_millis())?;
    Ok(())
}

// --- loss-dist ---

fn cmd_loss_dist(resolved: &Resolved, started: Instant) -> Result<(), CliError> {
    let preset = presets::lookup(resolved.get("preset"))?;
    let value = |key: &str, fallback: f64| -> Result<f64, CliError> {
        let raw = resolved.get(key);
        if raw.is_empty() {
            Ok(fallback)
        } else {
            resolved.parse_f64(key)
        }
    };
    let c = value("c", preset.c)?;
    let mu = value("mu", preset.mu)?;
    let rho = value("rho", preset.rho)?;
    let face = value("f", preset.face)?;
    let v0 = value("v0", preset.v0)?;
    let t_m = value("t-m", preset.t_m)?;
    let n = match resolved.get("n") {
        "" => FluctuationN::Finite(preset.n),
        "inf" => FluctuationN::Infinite,
        _ => FluctuationN::Finite(resolved.parse_f64("n")?),
    };
    let (k, limiting) = match resolved.get("k") {
        "" => (preset.k, false),
        "inf" => (preset.k, true),
        _ => (resolved.parse_usize("k")?, false),
    };
    let grid = match resolved.get("grid-type") {
        "uniform" => uniform_grid(resolved.parse_usize("grid")?),
        "log" => log_refined_grid(
            resolved.parse_usize("grid")?,
            resolved.parse_f64("grid-floor")?,
        ),
        other => {
            return Err(CliError::Usage(format!(
                "grid-type must be uniform or log, got `{other}`"
            )))
        }
    };
    let mut settings = QuadratureSettings::for_portfolio(k);
    if resolved.parse_usize("z-nodes")? > 0 {
        settings.z_nodes = resolved.parse_usize("z-nodes")?;
    }
    if resolved.parse_usize("u-nodes")? > 0 {
        settings.u_nodes = resolved.parse_usize("u-nodes")?;
    }
    let spec = PortfolioSpec::homogeneous(k, face, v0, mu, rho, t_m)?;
    let curve = if limiting {
        limiting_loss_density(&grid, &spec, c, n, &settings)?
    } else {
        avg_loss_density(&grid, &spec, c, n, &settings)?
    };
    let alphas = resolved.parse_alphas("alphas")?;
    let (risk, skipped_reason) = match risk_measures_from_curve(&curve, &alphas) {
        Ok(rows) => (Some(rows), None),
        Err(e) => (None, Some(e.to_string())),
    };

    #[derive(Serialize)]
    struct LossDistReport<'a> {
        preset: &'a str,
        limiting: bool,
        params: &'a wishrisk_core::merton::CurveParams,
        normalization_defect: f64,
        risk: Option<Vec<wishrisk_core::merton::CurveRiskMeasure>>,
        risk_skipped_reason: Option<String>,
    }
    let mut out = OutputDir::create(resolved.get("out"))?;
    out.write("density.csv", &curve_csv("L", "density", &curve.grid, &curve.density))?;
    out.write(
        "risk.json",
        &to_json(&LossDistReport {
            preset: resolved.get("preset"),
            limiting,
            params: &curve.params,
            normalization_defect: curve.normalization_defect,
            risk,
            risk_skipped_reason: skipped_reason,
        })?,
    )?;
    out.finish(resolved, started.elapsed().as_millis())?;
    Ok(())
}

// --- var ---

fn cmd_var(resolved: &Resolved, started: Instant) -> Result<(), CliError> {
    let seed = resolved.parse_u64("seed")?;
    let trials = resolved.parse_usize("trials")?;
    let dynamics = match resolved.get("dynamics") {
        "fixed" => Dynamics::FixedCovariance,
        "mixture" => Dynamics::Mixture {
            n: resolved.parse_f64("n").map_err(|_| {
                CliError::Usage("mixture dynamics needs --n".to_string())
            })?,
        },
        other => {
            return Err(CliError::Usage(format!(
                "dynamics must be fixed or mixture, got `{other}`"
            )))
        }
    };
    let face = resolved.parse_f64("f")?;
    let v0 = resolved.parse_f64("v0")?;
    let t_m = resolved.parse_f64("t-m")?;
    let config = match resolved.get("source") {
        "effective" => {
            let c = resolved.parse_f64("c")?;
            if !(0.0..1.0).contains(&c) {
                return Err(CliError::Usage(format!(
                    "key `c`: effective correlation must lie in [0, 1), got {c}"
                )));
            }
            let k = resolved.parse_usize("k")?;
            let rho = resolved.parse_f64("rho")?;
            let mu = resolved.parse_f64("mu")?;
            SimulationConfig {
                trials,
                seed,
                dynamics,
                covariance: CovarianceSource::Effective {
                    c,
                    vols: vec![rho; k],
                },
                portfolio: PortfolioSpec::homogeneous(k, face, v0, mu, rho, t_m)?,
            }
        }
        "empirical" => {
            let cov_path = resolved.get("cov-input");
            let moments_path = resolved.get("moments-input");
            if cov_path.is_empty() || moments_path.is_empty() {
                return Err(CliError::Usage(
                    "empirical source needs --cov-input and --moments-input".to_string(),
                ));
            }
            let text = std::fs::read_to_string(cov_path)
                .map_err(|e| CliError::Io(format!("cannot read {cov_path}: {e}")))?;
            let (ids, entries) = parse_matrix_csv(&text)?;
            let cov = CovarianceMatrix::try_new(entries)?;
            let drifts = read_moments_mu(moments_path, &ids)?;
            let vols: Vec<f64> = cov.entries().diagonal().iter().map(|v| v.sqrt()).collect();
            let k = ids.len();
            SimulationConfig {
                trials,
                seed,
                dynamics,
                covariance: CovarianceSource::Empirical(cov),
                portfolio: PortfolioSpec::new(
                    vec![face; k],
                    vec![v0; k],
                    drifts,
                    vols,
                    t_m,
                )?,
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "source must be effective or empirical, got `{other}`"
            )))
        }
    };
    let samples = run_losses(&config)?;
    let alphas = resolved.parse_alphas("alphas")?;
    let report = var_etl(&samples, &alphas)?;

    #[derive(Serialize)]
    struct VarReport<'a> {
        seed: u64,
        dynamics: &'a Dynamics,
        report: &'a wishrisk_core::monte_carlo::RiskReport,
    }
    let mut out = OutputDir::create(resolved.get("out"))?;
    out.write(
        "risk.json",
        &to_json(&VarReport {
            seed,
            dynamics: &config.dynamics,
            report: &report,
        })?,
    )?;
    if resolved.parse_bool("dump-losses")? {
        let mut csv = String::from("trial,loss\n");
        for (i, l) in samples.losses.iter().enumerate() {
            csv.push_str(&format!("{i},{}\n", fmt_float(*l)));
        }
        out.write("losses.csv", &csv)?;
    }
    out.finish(resolved, started.elapsed().as_millis())?;
    Ok(())
}

fn read_moments_mu(path: &str, ids: &[String]) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {path}: {e}")))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(CliError::Usage(format!(
                "moments row {}: expected asset_id,mu,...",
                lineno + 1
            )));
        }
        let mu: f64 = fields[1].trim().parse().map_err(|_| {
            CliError::Usage(format!("moments row {}: bad mu `{}`", lineno + 1, fields[1]))
        })?;
        map.insert(fields[0].to_string(), mu);
    }
    ids.iter()
        .map(|id| {
            map.get(id).copied().ok_or_else(|| {
                CliError::Usage(format!("moments file lacks asset `{id}`"))
            })
        })
        .collect()
}

// --- copula ---

fn cmd_copula(resolved: &Resolved, started: Instant) -> Result<(), CliError> {
    let scenario = Scenario::parse(resolved.get("scenario"))?;
    let repetitions = match resolved.parse_usize("repetitions")? {
        0 => {
            if scenario.is_averaged() {
                1000
            } else {
                1
            }
        }
        r => r,
    };
    let settings = ScenarioSettings {
        trials: resolved.parse_usize("trials")?,
        seed: resolved.parse_u64("seed")?,
        bins: resolved.parse_usize("bins")?,
        repetitions,
        portfolio_size: resolved.parse_usize("k")?,
        tie_rule: match resolved.get("tie-rule") {
            "jitter" => TieRule::JitterSeeded,
            "midrank" => TieRule::MidRank,
            other => {
                return Err(CliError::Usage(format!(
                    "tie-rule must be jitter or midrank, got `{other}`"
                )))
            }
        },
    };
    let report = scenario_suite(scenario, &settings)?;

    #[derive(Serialize)]
    struct CopulaSummary<'a> {
        scenario: &'a str,
        seed: u64,
        loss_correlation: f64,
        correlation_dispersion: f64,
        nondefault_ratio_1: f64,
        nondefault_ratio_2: f64,
        repetitions: usize,
        trials_per_repetition: usize,
        bins: usize,
        corners: &'a wishrisk_core::copula::CornerStats,
    }
    let mut out = OutputDir::create(resolved.get("out"))?;
    out.write("empirical.csv", &copula_csv(report.empirical.bins, &report.empirical.density))?;
    out.write("gaussian.csv", &copula_csv(report.gaussian.bins, &report.gaussian.density))?;
    out.write("deviation.csv", &copula_csv(report.deviation.bins, &report.deviation.delta))?;
    out.write(
        "summary.json",
        &to_json(&CopulaSummary {
            scenario: &report.scenario,
            seed: settings.seed,
            loss_correlation: report.loss_correlation,
            correlation_dispersion: report.correlation_dispersion,
            nondefault_ratio_1: report.nondefault_ratio_1,
            nondefault_ratio_2: report.nondefault_ratio_2,
            repetitions: report.repetitions,
            trials_per_repetition: report.trials_per_repetition,
            bins: report.empirical.bins,
            corners: &report.deviation.corners,
        })?,
    )?;
    out.finish(resolved, started.elapsed().as_millis())?;
    Ok(())
}
