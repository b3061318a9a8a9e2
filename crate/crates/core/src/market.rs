//! Market data: price series, returns, rolling moment and correlation
//! estimation, and the effective-correlation reduction.
//!
//! Conventions fixed here and relied on everywhere else:
//! - returns are simple relative price changes over `delta_t` steps,
//! - standard deviations use the population (divide by n) denominator, so a
//!   normalized return matrix M gives a correlation matrix M Mᵀ/T with an
//!   exactly unit diagonal,
//! - sliding windows default to non-overlapping (stride = window length),
//! - series are aligned by intersecting their timestamp grids.

use std::collections::BTreeMap;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::substream;

/// One asset's price history on a grid of trading-day indices.
#[derive(Debug, Clone)]
pub struct PriceSeries {
    pub asset_id: String,
    pub timestamps: Vec<i64>,
    pub prices: Vec<f64>,
}

impl PriceSeries {
    pub fn new(asset_id: impl Into<String>, timestamps: Vec<i64>, prices: Vec<f64>) -> Result<Self> {
        let asset_id = asset_id.into();
        if timestamps.len() != prices.len() {
            return Err(Error::argument(format!(
                "series {asset_id}: {} timestamps vs {} prices",
                timestamps.len(),
                prices.len()
            )));
        }
        if prices.len() < 2 {
            return Err(Error::argument(format!(
                "series {asset_id}: needs at least 2 observations"
            )));
        }
        if !timestamps.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::domain(format!(
                "series {asset_id}: timestamps must be strictly increasing"
            )));
        }
        if let Some(p) = prices.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::domain(format!(
                "series {asset_id}: nonpositive or non-finite price {p}"
            )));
        }
        Ok(PriceSeries {
            asset_id,
            timestamps,
            prices,
        })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// K x T matrix of returns plus window metadata.
#[derive(Debug, Clone)]
pub struct ReturnMatrix {
    pub values: DMatrix<f64>,
    pub delta_t: usize,
    pub asset_ids: Vec<String>,
}

impl ReturnMatrix {
    pub fn new(values: DMatrix<f64>, delta_t: usize, asset_ids: Vec<String>) -> Result<Self> {
        if values.nrows() != asset_ids.len() {
            return Err(Error::argument(format!(
                "{} rows vs {} asset ids",
                values.nrows(),
                asset_ids.len()
            )));
        }
        if values.ncols() < 1 {
            return Err(Error::argument(
                "return matrix needs at least 1 observation".to_string(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite return".to_string()));
        }
        Ok(ReturnMatrix {
            values,
            delta_t,
            asset_ids,
        })
    }

    pub fn assets(&self) -> usize {
        self.values.nrows()
    }

    pub fn observations(&self) -> usize {
        self.values.ncols()
    }
}

/// Per-asset drift and volatility estimates.
#[derive(Debug, Clone)]
pub struct MomentEstimates {
    /// Mean return per `delta_t`.
    pub mu: Vec<f64>,
    /// Population standard deviation of the returns.
    pub sigma: Vec<f64>,
    /// Volatility per square-root time unit, sigma / sqrt(T_M).
    pub rho: Vec<f64>,
}

/// Symmetric K x K correlation matrix with unit diagonal.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    entries: DMatrix<f64>,
}

impl CorrelationMatrix {
    /// Validating constructor for externally supplied matrices.
    pub fn try_new(entries: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_symmetric(&entries, 1e-10) {
            return Err(Error::domain("correlation matrix not symmetric".to_string()));
        }
        for i in 0..entries.nrows() {
            if (entries[(i, i)] - 1.0).abs() > 1e-10 {
                return Err(Error::domain(format!(
                    "correlation diagonal entry {i} is {}, not 1",
                    entries[(i, i)]
                )));
            }
        }
        if entries.iter().any(|v| *v < -1.0 - 1e-12 || *v > 1.0 + 1e-12) {
            return Err(Error::domain("correlation entry outside [-1, 1]".to_string()));
        }
        if linalg::min_eigenvalue(&entries) < -linalg::PSD_TOLERANCE {
            return Err(Error::domain(
                "correlation matrix has a negative eigenvalue".to_string(),
            ));
        }
        Ok(CorrelationMatrix { entries })
    }

    /// Constructor for matrices built internally as M Mᵀ/T, which are
    /// positive semidefinite by construction.
    pub(crate) fn from_product(entries: DMatrix<f64>) -> Self {
        CorrelationMatrix { entries }
    }

    /// Equicorrelated matrix with the given off-diagonal value.
    pub fn equicorrelated(dim: usize, c: f64) -> Result<Self> {
        if !(-1.0 / (dim.max(2) as f64 - 1.0) <= c && c <= 1.0) {
            return Err(Error::domain(format!(
                "equicorrelation {c} outside the positive-semidefinite range"
            )));
        }
        let mut m = DMatrix::from_element(dim, dim, c);
        m.fill_diagonal(1.0);
        Ok(CorrelationMatrix { entries: m })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// Symmetric K x K covariance matrix.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    entries: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn try_new(entries: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_symmetric(&entries, 1e-10) {
            return Err(Error::domain("covariance matrix not symmetric".to_string()));
        }
        if entries.diagonal().iter().any(|d| *d < 0.0) {
            return Err(Error::domain("negative variance on diagonal".to_string()));
        }
        if linalg::min_eigenvalue(&entries) < -linalg::PSD_TOLERANCE {
            return Err(Error::domain(
                "covariance matrix has a negative eigenvalue".to_string(),
            ));
        }
        Ok(CovarianceMatrix { entries })
    }

    pub(crate) fn from_product(entries: DMatrix<f64>) -> Self {
        CovarianceMatrix { entries }
    }

    /// Covariance implied by per-asset volatilities and a correlation matrix.
    pub fn from_vols_and_correlation(vols: &[f64], corr: &CorrelationMatrix) -> Result<Self> {
        if vols.len() != corr.dim() {
            return Err(Error::argument(format!(
                "{} volatilities vs correlation dim {}",
                vols.len(),
                corr.dim()
            )));
        }
        if vols.iter().any(|v| *v < 0.0) {
            return Err(Error::domain("negative volatility".to_string()));
        }
        let k = vols.len();
        let mut m = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                m[(i, j)] = vols[i] * vols[j] * corr.entries()[(i, j)];
            }
        }
        Ok(CovarianceMatrix { entries: m })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// A window that was skipped during sliding-window estimation.
#[derive(Debug, Clone)]
pub struct SkippedWindow {
    pub start: usize,
    pub asset_id: String,
}

/// Ordered ensemble of per-window correlation matrices.
#[derive(Debug, Clone)]
pub struct SlidingWindowEnsemble {
    pub window_length: usize,
    pub stride: usize,
    pub matrices: Vec<CorrelationMatrix>,
    pub window_start_indices: Vec<usize>,
    /// Windows dropped because an asset had zero variance inside them.
    pub skipped: Vec<SkippedWindow>,
}

/// Relative price changes over `delta_t` steps on a common grid.
///
/// Output column t holds (S(t + delta_t) - S(t)) / S(t), so the output has
/// `T - delta_t` observations.
pub fn compute_returns(series: &[PriceSeries], delta_t: usize) -> Result<ReturnMatrix> {
    if series.is_empty() {
        return Err(Error::argument("no price series".to_string()));
    }
    if delta_t < 1 {
        return Err(Error::argument("delta_t must be >= 1".to_string()));
    }
    let grid = &series[0].timestamps;
    for s in series.iter().skip(1) {
        if s.timestamps != *grid {
            return Err(Error::Alignment(format!(
                "series {} is not on the common timestamp grid of {} (align first)",
                s.asset_id, series[0].asset_id
            )));
        }
    }
    let t_in = grid.len();
    if t_in <= delta_t {
        return Err(Error::argument(format!(
            "need more than delta_t={delta_t} observations, got {t_in}"
        )));
    }
    let t_out = t_in - delta_t;
    let mut values = DMatrix::zeros(series.len(), t_out);
    for (k, s) in series.iter().enumerate() {
        for t in 0..t_out {
            values[(k, t)] = (s.prices[t + delta_t] - s.prices[t]) / s.prices[t];
        }
    }
    ReturnMatrix::new(
        values,
        delta_t,
        series.iter().map(|s| s.asset_id.clone()).collect(),
    )
}

fn row_mean_std(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Normalize each asset's returns to zero mean and unit variance over the
/// given window (population convention). Output is restricted to the window.
pub fn normalize_series(returns: &ReturnMatrix, window: Range<usize>) -> Result<ReturnMatrix> {
    if window.end > returns.observations() || window.len() < 2 {
        return Err(Error::argument(format!(
            "window {window:?} invalid for {} observations",
            returns.observations()
        )));
    }
    let mut out = DMatrix::zeros(returns.assets(), window.len());
    for k in 0..returns.assets() {
        let row: Vec<f64> = window.clone().map(|t| returns.values[(k, t)]).collect();
        let (mean, sd) = row_mean_std(&row);
        if sd <= 0.0 {
            return Err(Error::DegenerateSeries {
                asset: returns.asset_ids[k].clone(),
                detail: format!("zero variance over window {window:?}"),
            });
        }
        for (j, v) in row.iter().enumerate() {
            out[(k, j)] = (v - mean) / sd;
        }
    }
    ReturnMatrix::new(out, returns.delta_t, returns.asset_ids.clone())
}

/// Correlation matrix M Mᵀ/T of a normalized return matrix.
pub fn correlation_matrix(normalized: &ReturnMatrix) -> Result<CorrelationMatrix> {
    let t = normalized.observations() as f64;
    let c = &normalized.values * normalized.values.transpose() / t;
    for i in 0..c.nrows() {
        if (c[(i, i)] - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "input not normalized: diagonal entry for {} is {}",
                normalized.asset_ids[i],
                c[(i, i)]
            )));
        }
    }
    // symmetrize away the last bits of rounding
    let sym = (&c + c.transpose()) * 0.5;
    Ok(CorrelationMatrix::from_product(sym))
}

/// Covariance matrix A Aᵀ/T of demeaned returns (population convention).
pub fn covariance_matrix(returns: &ReturnMatrix) -> Result<CovarianceMatrix> {
    if returns.observations() < 2 {
        return Err(Error::argument("need T >= 2".to_string()));
    }
    let t = returns.observations();
    let mut demeaned = returns.values.clone();
    for k in 0..returns.assets() {
        let mean = demeaned.row(k).sum() / t as f64;
        for j in 0..t {
            demeaned[(k, j)] -= mean;
        }
    }
    let cov = &demeaned * demeaned.transpose() / t as f64;
    let sym = (&cov + cov.transpose()) * 0.5;
    Ok(CovarianceMatrix::from_product(sym))
}

/// Per-asset time series of rolling window standard deviations.
///
/// Returns one row per asset, one entry per window start.
pub fn rolling_volatility(
    returns: &ReturnMatrix,
    window: usize,
    stride: usize,
) -> Result<Vec<Vec<f64>>> {
    if window < 2 || window > returns.observations() {
        return Err(Error::argument(format!(
            "window {window} invalid for {} observations",
            returns.observations()
        )));
    }
    if stride == 0 {
        return Err(Error::argument("stride must be positive".to_string()));
    }
    let starts: Vec<usize> = (0..=(returns.observations() - window))
        .step_by(stride)
        .collect();
    let mut out = vec![Vec::with_capacity(starts.len()); returns.assets()];
    for k in 0..returns.assets() {
        for &s in &starts {
            let row: Vec<f64> = (s..s + window).map(|t| returns.values[(k, t)]).collect();
            out[k].push(row_mean_std(&row).1);
        }
    }
    Ok(out)
}

/// Ensemble of correlation matrices from a window sliding through the data.
///
/// Each window is normalized independently. Windows in which any asset has
/// zero variance are skipped and recorded.
pub fn sliding_correlation_ensemble(
    returns: &ReturnMatrix,
    window: usize,
    stride: usize,
) -> Result<SlidingWindowEnsemble> {
    if window < 2 || window > returns.observations() {
        return Err(Error::argument(format!(
            "window {window} invalid for {} observations",
            returns.observations()
        )));
    }
    if stride == 0 {
        return Err(Error::argument("stride must be positive".to_string()));
    }
    let mut matrices = Vec::new();
    let mut window_start_indices = Vec::new();
    let mut skipped = Vec::new();
    let mut start = 0;
    while start + window <= returns.observations() {
        match normalize_series(returns, start..start + window) {
            Ok(normalized) => {
                matrices.push(correlation_matrix(&normalized)?);
                window_start_indices.push(start);
            }
            Err(Error::DegenerateSeries { asset, .. }) => {
                skipped.push(SkippedWindow {
                    start,
                    asset_id: asset,
                });
            }
            Err(e) => return Err(e),
        }
        start += stride;
    }
    Ok(SlidingWindowEnsemble {
        window_length: window,
        stride,
        matrices,
        window_start_indices,
        skipped,
    })
}

/// Mean off-diagonal correlation and the equicorrelated matrix it implies.
pub fn effective_correlation(corr: &CorrelationMatrix) -> (f64, CorrelationMatrix) {
    let k = corr.dim();
    if k < 2 {
        return (0.0, corr.clone());
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                sum += corr.entries()[(i, j)];
            }
        }
    }
    let c = sum / (k * (k - 1)) as f64;
    let mut m = DMatrix::from_element(k, k, c);
    m.fill_diagonal(1.0);
    (c, CorrelationMatrix::from_product(m))
}

/// Per-asset drift, return standard deviation, and volatility per
/// square-root time unit for a maturity of `t_m` time units.
pub fn estimate_drift_vol(returns: &ReturnMatrix, t_m: f64) -> Result<MomentEstimates> {
    if !(t_m > 0.0) {
        return Err(Error::argument("maturity must be positive".to_string()));
    }
    let mut mu = Vec::with_capacity(returns.assets());
    let mut sigma = Vec::with_capacity(returns.assets());
    let mut rho = Vec::with_capacity(returns.assets());
    for k in 0..returns.assets() {
        let row: Vec<f64> = (0..returns.observations())
            .map(|t| returns.values[(k, t)])
            .collect();
        let (m, s) = row_mean_std(&row);
        mu.push(m);
        sigma.push(s);
        rho.push(s / t_m.sqrt());
    }
    Ok(MomentEstimates { mu, sigma, rho })
}

// --- CSV ingestion ---

/// Read price series from CSV with header `date,asset_id,close`.
///
/// Dates are ISO-8601 calendar dates; they are mapped to integer day
/// offsets. Assets appear in first-occurrence order.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<PriceSeries>> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file)
}

pub fn load_csv_reader(reader: impl Read) -> Result<Vec<PriceSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    {
        let headers = rdr.headers().map_err(|e| Error::Parse {
            line: 1,
            detail: e.to_string(),
        })?;
        let expect = ["date", "asset_id", "close"];
        if headers.len() != 3 || !headers.iter().zip(expect).all(|(h, e)| h == e) {
            return Err(Error::Parse {
                line: 1,
                detail: format!(
                    "expected header `date,asset_id,close`, got `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
    }
    // per-asset map date -> price; assets kept in first-occurrence order
    let mut order: Vec<String> = Vec::new();
    let mut data: BTreeMap<String, BTreeMap<i64, f64>> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            detail: e.to_string(),
        })?;
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                detail: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let date = parse_iso_date(&record[0]).ok_or_else(|| Error::Parse {
            line,
            detail: format!("bad ISO-8601 date `{}`", &record[0]),
        })?;
        let asset = record[1].to_string();
        let close: f64 = record[2].parse().map_err(|_| Error::Parse {
            line,
            detail: format!("bad close price `{}`", &record[2]),
        })?;
        if !(close > 0.0) {
            return Err(Error::Parse {
                line,
                detail: format!("nonpositive close price {close} for {asset}"),
            });
        }
        if !data.contains_key(&asset) {
            order.push(asset.clone());
        }
        if data
            .entry(asset.clone())
            .or_default()
            .insert(date, close)
            .is_some()
        {
            return Err(Error::Parse {
                line,
                detail: format!("duplicate (date, asset) pair ({}, {asset})", &record[0]),
            });
        }
    }
    order
        .into_iter()
        .map(|asset| {
            let series = &data[&asset];
            PriceSeries::new(
                asset.clone(),
                series.keys().copied().collect(),
                series.values().copied().collect(),
            )
        })
        .collect()
}

/// Days since 1970-01-01 for a calendar date, proleptic Gregorian.
fn parse_iso_date(s: &str) -> Option<i64> {
    let bytes = s.as_bytes();
    if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
        return None;
    }
    let year: i64 = s[0..4].parse().ok()?;
    let month: i64 = s[5..7].parse().ok()?;
    let day: i64 = s[8..10].parse().ok()?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    // civil-from-days style conversion
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (month + 9) % 12;
    let doy = (153 * mp + 2) / 5 + day - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    Some(era * 146_097 + doe - 719_468)
}

/// Restrict all series to the intersection of their timestamp grids.
pub fn align_to_common_grid(series: Vec<PriceSeries>) -> Result<Vec<PriceSeries>> {
    if series.is_empty() {
        return Err(Error::argument("no price series".to_string()));
    }
    let mut common: Vec<i64> = series[0].timestamps.clone();
    for s in series.iter().skip(1) {
        let set: std::collections::BTreeSet<i64> = s.timestamps.iter().copied().collect();
        common.retain(|t| set.contains(t));
    }
    if common.len() < 2 {
        return Err(Error::Alignment(
            "fewer than 2 common timestamps across series".to_string(),
        ));
    }
    let keep: std::collections::BTreeSet<i64> = common.into_iter().collect();
    series
        .into_iter()
        .map(|s| {
            let (ts, ps): (Vec<i64>, Vec<f64>) = s
                .timestamps
                .iter()
                .zip(&s.prices)
                .filter(|(t, _)| keep.contains(t))
                .map(|(t, p)| (*t, *p))
                .unzip();
            PriceSeries::new(s.asset_id, ts, ps)
        })
        .collect()
}

/// Parameters of the synthetic equicorrelated market generator.
#[derive(Debug, Clone)]
pub struct SyntheticMarketSpec {
    pub assets: usize,
    pub steps: usize,
    /// Common pairwise correlation of the per-step shocks.
    pub c: f64,
    /// Per-step return volatility; one entry, or one per asset.
    pub vols: Vec<f64>,
    /// Per-step mean return; one entry, or one per asset.
    pub drifts: Vec<f64>,
    pub initial_price: f64,
}

impl SyntheticMarketSpec {
    pub fn homogeneous(assets: usize, steps: usize, c: f64, rho: f64, mu: f64) -> Self {
        SyntheticMarketSpec {
            assets,
            steps,
            c,
            vols: vec![rho],
            drifts: vec![mu],
            initial_price: 100.0,
        }
    }
}

/// Generate prices via the Euler scheme of a geometric Brownian motion
/// with equicorrelated Gaussian shocks:
/// S(t+1) = S(t) (1 + mu + rho (sqrt(c) g0 + sqrt(1-c) g)).
///
/// Simple per-step returns then have mean `mu`, standard deviation `rho`
/// and pairwise correlation `c`. Deterministic for a fixed seed.
pub fn generate_synthetic_market(
    spec: &SyntheticMarketSpec,
    seed: u64,
) -> Result<Vec<PriceSeries>> {
    if spec.assets == 0 || spec.steps < 2 {
        return Err(Error::argument(
            "need at least 1 asset and 2 steps".to_string(),
        ));
    }
    if !(0.0..1.0).contains(&spec.c) {
        return Err(Error::domain(format!(
            "synthetic market correlation must be in [0, 1), got {}",
            spec.c
        )));
    }
    if spec.vols.len() != 1 && spec.vols.len() != spec.assets {
        return Err(Error::argument("vols must have length 1 or K".to_string()));
    }
    if spec.drifts.len() != 1 && spec.drifts.len() != spec.assets {
        return Err(Error::argument("drifts must have length 1 or K".to_string()));
    }
    let vol = |k: usize| -> f64 {
        if spec.vols.len() == 1 {
            spec.vols[0]
        } else {
            spec.vols[k]
        }
    };
    let drift = |k: usize| -> f64 {
        if spec.drifts.len() == 1 {
            spec.drifts[0]
        } else {
            spec.drifts[k]
        }
    };
    let mut rng = substream(seed, 0);
    let sqrt_c = spec.c.sqrt();
    let sqrt_1mc = (1.0 - spec.c).sqrt();
    let mut prices = vec![vec![spec.initial_price; spec.steps + 1]; spec.assets];
    for t in 0..spec.steps {
        let g0: f64 = StandardNormal.sample(&mut rng);
        for (k, path) in prices.iter_mut().enumerate() {
            let g: f64 = StandardNormal.sample(&mut rng);
            let shock = sqrt_c * g0 + sqrt_1mc * g;
            let r = drift(k) + vol(k) * shock;
            // a return at or below -1 would bankrupt the Euler step
            let r = r.max(-0.99);
            path[t + 1] = path[t] * (1.0 + r);
        }
    }
    let _ = rng.random::<u64>();
    let width = (spec.assets as f64).log10().ceil().max(1.0) as usize;
    prices
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            PriceSeries::new(
                format!("SYN{k:0width$}"),
                (0..=spec.steps as i64).collect(),
                p,
            )
        })
        .collect()
}
