//! Random-covariance ensemble for non-stationary correlations.
//!
//! A market whose covariance fluctuates around a mean Σ0 is modeled by
//! random K x N data matrices A with Gaussian weight, replacing the fixed
//! covariance with A Aᵀ/N. Averaging the multivariate normal return law
//! over that ensemble gives a heavy-tailed density that depends on returns
//! only through the bilinear form b = rᵀ Σ0⁻¹ r and on the single
//! fluctuation parameter N: small N means strong covariance fluctuations
//! and heavy tails, N -> ∞ recovers the fixed-covariance Gaussian.
//!
//! The averaged density has an equivalent variance-mixture form: scale the
//! covariance by z/N with z chi-squared(N) and mix. The mixture integral is
//! manifestly normalized, numerically friendly, and admits a direct
//! sampler, so it is the canonical evaluator here; the closed Bessel-kernel
//! form of the same density is kept as an independent cross-check route.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::market::{covariance_matrix, CovarianceMatrix, ReturnMatrix};
use crate::quadrature::{adaptive_simpson, gauss_gen_laguerre, GaussRule};
use crate::special::{chi2_ln_pdf, ln_bessel_k, ln_gamma, norm_cdf, ln_norm_pdf};

const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// Fluctuation strength of the covariance ensemble.
///
/// `Finite(n)` is the model time-series length (real-valued, n > 0);
/// `Infinite` freezes the covariance at its mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FluctuationN {
    Finite(f64),
    Infinite,
}

impl FluctuationN {
    pub fn finite(self) -> Option<f64> {
        match self {
            FluctuationN::Finite(n) => Some(n),
            FluctuationN::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, FluctuationN::Infinite)
    }
}

/// Mean covariance plus fluctuation strength; fully defines the ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    sigma0: CovarianceMatrix,
    n: FluctuationN,
}

impl EnsembleSpec {
    pub fn new(sigma0: CovarianceMatrix, n: FluctuationN) -> Result<Self> {
        if let FluctuationN::Finite(v) = n {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!(
                    "fluctuation parameter must be positive and finite, got {v}"
                )));
            }
        }
        Ok(EnsembleSpec { sigma0, n })
    }

    /// Ensemble around an effective correlation c with per-asset vols.
    pub fn from_effective(c: f64, vols: &[f64], n: FluctuationN) -> Result<Self> {
        let corr = crate::market::CorrelationMatrix::equicorrelated(vols.len(), c)?;
        let sigma0 = CovarianceMatrix::from_vols_and_correlation(vols, &corr)?;
        EnsembleSpec::new(sigma0, n)
    }

    pub fn dim(&self) -> usize {
        self.sigma0.dim()
    }

    pub fn n(&self) -> FluctuationN {
        self.n
    }

    pub fn sigma0(&self) -> &CovarianceMatrix {
        &self.sigma0
    }
}

/// Log density of a K x N data matrix under the Gaussian matrix weight
/// with mean covariance Σ0: -(N/2) ln det(2π Σ0) - tr(Aᵀ Σ0⁻¹ A)/2.
pub fn wishart_log_density(a: &DMatrix<f64>, spec: &EnsembleSpec) -> Result<f64> {
    let n = spec.n.finite().ok_or_else(|| {
        Error::argument("matrix density needs a finite fluctuation parameter".to_string())
    })?;
    if a.nrows() != spec.dim() {
        return Err(Error::argument(format!(
            "data matrix has {} rows, ensemble dimension is {}",
            a.nrows(),
            spec.dim()
        )));
    }
    if (n - a.ncols() as f64).abs() > 1e-9 {
        return Err(Error::argument(format!(
            "data matrix has {} columns but the ensemble N is {n}",
            a.ncols()
        )));
    }
    let (inv, logdet) = linalg::spd_inverse_logdet(spec.sigma0.entries())?;
    let k = spec.dim() as f64;
    let mut trace = 0.0;
    for j in 0..a.ncols() {
        let col = a.column(j);
        trace += (inv.clone() * col).dot(&col);
    }
    Ok(-0.5 * n * (k * LN_2PI + logdet) - 0.5 * trace)
}

/// Draw a random covariance matrix A Aᵀ/N from the ensemble.
///
/// For integer N this is the exact construction from N independent
/// Gaussian columns. Non-integer N falls back to the scalar-mixture
/// surrogate (z/N) Σ0 with z chi-squared(N), which reproduces the averaged
/// return law but not the full matrix-level fluctuations; it is an
/// approximation for callers that need a whole matrix at real-valued N.
pub fn sample_random_covariance(
    spec: &EnsembleSpec,
    rng: &mut impl Rng,
) -> Result<CovarianceMatrix> {
    let n = match spec.n {
        FluctuationN::Infinite => return Ok(spec.sigma0.clone()),
        FluctuationN::Finite(n) => n,
    };
    let k = spec.dim();
    let factor = linalg::spd_sqrt(spec.sigma0.entries())?;
    if (n - n.round()).abs() < 1e-9 && n >= 1.0 {
        let cols = n.round() as usize;
        let mut a = DMatrix::zeros(k, cols);
        for j in 0..cols {
            let eps = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
            a.set_column(j, &(&factor * eps));
        }
        let cov = &a * a.transpose() / n;
        let sym = (&cov + cov.transpose()) * 0.5;
        Ok(CovarianceMatrix::from_product(sym))
    } else {
        let chi = ChiSquared::new(n)
            .map_err(|e| Error::argument(format!("chi-squared({n}): {e}")))?;
        let z: f64 = chi.sample(rng);
        Ok(CovarianceMatrix::from_product(
            spec.sigma0.entries() * (z / n),
        ))
    }
}

/// Sampler from the ensemble-averaged return law.
///
/// Draws z ~ chi-squared(N), ε standard normal, and returns
/// sqrt(z/N) B ε with B Bᵀ = Σ0; the marginal law equals the averaged
/// density. With N infinite this is a plain Gaussian draw.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    factor: DMatrix<f64>,
    n: FluctuationN,
}

impl MixtureSampler {
    pub fn new(spec: &EnsembleSpec) -> Result<Self> {
        let factor = linalg::spd_sqrt(spec.sigma0.entries())?;
        if let FluctuationN::Finite(n) = spec.n {
            // fail early rather than on the first draw
            ChiSquared::new(n).map_err(|e| Error::argument(format!("chi-squared({n}): {e}")))?;
        }
        Ok(MixtureSampler {
            factor,
            n: spec.n,
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let eps = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        let gauss = &self.factor * eps;
        match self.n {
            FluctuationN::Infinite => gauss,
            FluctuationN::Finite(n) => {
                let z: f64 = ChiSquared::new(n).unwrap().sample(rng);
                gauss * (z / n).sqrt()
            }
        }
    }
}

/// Ensemble-averaged return density, evaluated through the variance
/// mixture ∫ chi2_N(z) Gauss(r; 0, (z/N) Σ0) dz.
#[derive(Debug, Clone)]
pub struct AveragedReturnDensity {
    inv_sigma0: DMatrix<f64>,
    logdet_sigma0: f64,
    k: usize,
    n: FluctuationN,
}

impl AveragedReturnDensity {
    pub fn new(spec: &EnsembleSpec) -> Result<Self> {
        let (inv, logdet) = linalg::spd_inverse_logdet(spec.sigma0.entries())?;
        Ok(AveragedReturnDensity {
            inv_sigma0: inv,
            logdet_sigma0: logdet,
            k: spec.dim(),
            n: spec.n,
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// Bilinear form rᵀ Σ0⁻¹ r that the density depends on.
    pub fn bilinear_form(&self, r: &[f64]) -> Result<f64> {
        if r.len() != self.k {
            return Err(Error::argument(format!(
                "return vector has length {}, expected {}",
                r.len(),
                self.k
            )));
        }
        let v = DVector::from_column_slice(r);
        Ok((&self.inv_sigma0 * &v).dot(&v))
    }

    pub fn density(&self, r: &[f64]) -> Result<f64> {
        let b = self.bilinear_form(r)?;
        self.density_from_bilinear(b)
    }

    /// Density value for a given bilinear form b = rᵀ Σ0⁻¹ r.
    pub fn density_from_bilinear(&self, b: f64) -> Result<f64> {
        Ok(self.ln_density_from_bilinear(b)?.exp())
    }

    /// Log density; the z-integral runs in y = ln z over a bracket around
    /// the analytic saddle, refined by interval doubling.
    pub fn ln_density_from_bilinear(&self, b: f64) -> Result<f64> {
        if b < 0.0 {
            return Err(Error::domain(format!("bilinear form must be >= 0, got {b}")));
        }
        let k = self.k as f64;
        let n = match self.n {
            FluctuationN::Infinite => {
                return Ok(-0.5 * (k * LN_2PI + self.logdet_sigma0) - 0.5 * b);
            }
            FluctuationN::Finite(n) => n,
        };
        let ln_pref = 0.5 * k * (n.ln() - LN_2PI) - 0.5 * self.logdet_sigma0
            - 0.5 * n * std::f64::consts::LN_2
            - ln_gamma(0.5 * n);
        // exponent of the z-integrand in y = ln z
        let a = 0.5 * (n - k);
        let half_nb = 0.5 * n * b;
        let phi = |y: f64| a * y - 0.5 * y.exp() - half_nb * (-y).exp();
        // saddle point e^y = a + sqrt(a^2 + N b)
        let x_star = a + (a * a + n * b).sqrt();
        let y_peak = if x_star > 1e-280 { x_star.ln() } else { 0.0 };
        let phi_peak = phi(y_peak);
        let mut y_lo = y_peak;
        while phi(y_lo) > phi_peak - 60.0 && y_lo > -700.0 {
            y_lo -= 2.0;
        }
        let mut y_hi = y_peak;
        while phi(y_hi) > phi_peak - 60.0 && y_hi < 700.0 {
            y_hi += 2.0;
        }
        let shifted = |y: f64| (phi(y) - phi_peak).exp();
        let mut panels = 256usize;
        let mut prev = composite_simpson(&shifted, y_lo, y_hi, panels);
        for _ in 0..5 {
            panels *= 2;
            let next = composite_simpson(&shifted, y_lo, y_hi, panels);
            let diff = (next - prev).abs();
            if diff <= 1e-11 * next.abs() {
                return Ok(ln_pref + phi_peak + next.ln());
            }
            prev = next;
        }
        Err(Error::Quadrature {
            achieved: (composite_simpson(&shifted, y_lo, y_hi, panels * 2) - prev).abs()
                / prev.abs(),
            target: 1e-11,
        })
    }

    /// Closed Bessel-kernel form of the same density, normalized so it
    /// integrates to one. Independent of the mixture quadrature; used as a
    /// cross-check. Requires b > 0 (or N > K for the b = 0 limit).
    pub fn ln_density_bessel(&self, b: f64) -> Result<f64> {
        let k = self.k as f64;
        let n = match self.n {
            FluctuationN::Infinite => {
                return Ok(-0.5 * (k * LN_2PI + self.logdet_sigma0) - 0.5 * b)
            }
            FluctuationN::Finite(n) => n,
        };
        if !(b > 0.0) {
            return Err(Error::domain(
                "Bessel form needs a strictly positive bilinear form".to_string(),
            ));
        }
        let arg = (n * b).sqrt();
        let nu = 0.5 * (k - n);
        let ln_k = ln_bessel_k(nu, arg)?;
        Ok(
            -0.5 * (k * (LN_2PI - n.ln()) + self.logdet_sigma0)
                + (1.0 - 0.5 * n) * std::f64::consts::LN_2
                - ln_gamma(0.5 * n)
                - nu * arg.ln()
                + ln_k,
        )
    }
}

fn composite_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = 2 * panels;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Density of one rotated-and-scaled return component under the ensemble
/// average: the univariate marginal ∫ chi2_N(z) Gauss(x; 0, z/N) dz.
///
/// Evaluated by the closed Bessel form (cross-checked against the mixture
/// quadrature in tests); `n = f64::INFINITY` gives the standard normal.
pub fn univariate_aggregated_density(x: f64, n: f64) -> Result<f64> {
    if !(n > 0.0) {
        return Err(Error::domain(format!("need N > 0, got {n}")));
    }
    if n.is_infinite() {
        return Ok(ln_norm_pdf(x).exp());
    }
    let ax = x.abs();
    if ax < 1e-300 {
        if n <= 1.0 {
            return Ok(f64::INFINITY);
        }
        // interior limit: x^nu K_nu(x) -> 2^(nu-1) Γ(nu)
        let ln_p0 = 0.5 * (n.ln() - LN_2PI) - 0.5 * std::f64::consts::LN_2
            + ln_gamma(0.5 * (n - 1.0))
            - ln_gamma(0.5 * n);
        return Ok(ln_p0.exp());
    }
    let arg = n.sqrt() * ax;
    let nu = 0.5 * (n - 1.0);
    let ln_k = ln_bessel_k(nu, arg)?;
    let ln_p = 0.5 * (n.ln() - LN_2PI) + (1.0 - 0.5 * n) * std::f64::consts::LN_2
        - ln_gamma(0.5 * n)
        + nu * arg.ln()
        + ln_k;
    Ok(ln_p.exp())
}

/// CDF of the univariate aggregated density, via the variance mixture.
pub fn univariate_aggregated_cdf(x: f64, n: f64, rule: &GaussRule) -> f64 {
    if n.is_infinite() {
        return norm_cdf(x);
    }
    // z = 2t against the generalized Laguerre weight t^(N/2-1) e^-t
    let norm: f64 = rule.weights.iter().sum();
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&t, &w)| {
            let z = 2.0 * t;
            w * norm_cdf(x / (z / n).sqrt())
        })
        .sum::<f64>()
        / norm
}

/// Pooled rotated-and-scaled return components.
#[derive(Debug, Clone)]
pub struct AggregatedSample {
    pub values: Vec<f64>,
    pub windows: usize,
    /// Components dropped because their eigenvalue was numerically zero.
    pub dropped_components: usize,
}

/// Basis used to rotate returns before scaling by eigenvalues.
pub enum RotationBasis<'a> {
    /// One fixed covariance for the whole sample, e.g. the global mean.
    Global(&'a CovarianceMatrix),
    /// Covariance re-estimated inside non-overlapping windows short enough
    /// that it can be considered constant within each.
    PerWindow { window: usize },
}

/// Rotate return vectors into the eigenbasis of a covariance matrix and
/// normalize by the square roots of its eigenvalues, pooling all
/// components. Eigenvalues below 1e-12 of the largest are dropped.
pub fn aggregate_returns(returns: &ReturnMatrix, basis: RotationBasis) -> Result<AggregatedSample> {
    match basis {
        RotationBasis::Global(cov) => {
            if cov.dim() != returns.assets() {
                return Err(Error::argument(format!(
                    "covariance dim {} vs {} assets",
                    cov.dim(),
                    returns.assets()
                )));
            }
            let mut out = AggregatedSample {
                values: Vec::new(),
                windows: 1,
                dropped_components: 0,
            };
            aggregate_block(&returns.values, cov.entries(), false, &mut out)?;
            Ok(out)
        }
        RotationBasis::PerWindow { window } => {
            if window < 2 || window > returns.observations() {
                return Err(Error::argument(format!(
                    "window {window} invalid for {} observations",
                    returns.observations()
                )));
            }
            let mut out = AggregatedSample {
                values: Vec::new(),
                windows: 0,
                dropped_components: 0,
            };
            let mut start = 0;
            while start + window <= returns.observations() {
                let block = returns.values.columns(start, window).into_owned();
                let block_matrix = ReturnMatrix::new(
                    block.clone(),
                    returns.delta_t,
                    returns.asset_ids.clone(),
                )?;
                let cov = covariance_matrix(&block_matrix)?;
                aggregate_block(&block, cov.entries(), true, &mut out)?;
                out.windows += 1;
                start += window;
            }
            Ok(out)
        }
    }
}

fn aggregate_block(
    block: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    demean: bool,
    out: &mut AggregatedSample,
) -> Result<()> {
    let eig = SymmetricEigen::new(cov.clone());
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    if !(lambda_max > 0.0) {
        return Err(Error::decomposition(
            "covariance has no positive eigenvalue".to_string(),
        ));
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * lambda_max)
        .collect();
    out.dropped_components += eig.eigenvalues.len() - keep.len();
    let means: Vec<f64> = (0..block.nrows())
        .map(|k| {
            if demean {
                block.row(k).sum() / block.ncols() as f64
            } else {
                0.0
            }
        })
        .collect();
    for t in 0..block.ncols() {
        let r = DVector::from_fn(block.nrows(), |k, _| block[(k, t)] - means[k]);
        for &i in &keep {
            let u = eig.eigenvectors.column(i);
            out.values.push(u.dot(&r) / eig.eigenvalues[i].sqrt());
        }
    }
    Ok(())
}

/// Result of fitting the fluctuation parameter to an aggregated sample.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FitReport {
    pub n_hat: f64,
    /// Mean log-likelihood over the grid of candidate N values.
    pub loglik_curve: Vec<(f64, f64)>,
    /// Kolmogorov-Smirnov distance at the fitted N.
    pub ks_stat: f64,
    /// Set when the fit is poor (KS above 0.1) or the likelihood is flat.
    pub fit_quality_warning: bool,
    /// True when the optimum sits at the upper grid bound (Gaussian-like
    /// data pushes N to infinity).
    pub at_upper_bound: bool,
    /// Measured normalization ratio between the correctly normalized
    /// Bessel-kernel density and its commonly printed prefactor variant.
    pub printed_prefactor_ratio: f64,
    pub sample_size: usize,
}

const FIT_N_MIN: f64 = 1.0;
const FIT_N_MAX: f64 = 64.0;

/// Maximum-likelihood fit of the fluctuation parameter on [1, 64],
/// refined by golden-section search to 0.1 resolution.
pub fn fit_n(sample: &AggregatedSample) -> Result<FitReport> {
    let values = &sample.values;
    if values.len() < 100 {
        return Err(Error::argument(format!(
            "need at least 100 aggregated points, got {}",
            values.len()
        )));
    }
    let mean_loglik = |n: f64| -> f64 {
        let mut acc = 0.0;
        for &x in values {
            let p = univariate_aggregated_density(x, n).unwrap_or(0.0);
            acc += if p > 0.0 { p.ln() } else { -700.0 };
        }
        acc / values.len() as f64
    };

    // geometric coarse grid
    let grid_size = 25;
    let ratio = (FIT_N_MAX / FIT_N_MIN).powf(1.0 / (grid_size as f64 - 1.0));
    let mut curve = Vec::with_capacity(grid_size);
    let mut best = (FIT_N_MIN, f64::NEG_INFINITY);
    for i in 0..grid_size {
        let n = FIT_N_MIN * ratio.powi(i as i32);
        let ll = mean_loglik(n);
        if ll > best.1 {
            best = (n, ll);
        }
        curve.push((n, ll));
    }
    let at_upper_bound = (best.0 - FIT_N_MAX).abs() < 1e-9;

    let n_hat = if at_upper_bound {
        FIT_N_MAX
    } else {
        // golden-section refine between the grid neighbours of the optimum
        let idx = curve
            .iter()
            .position(|(n, _)| (*n - best.0).abs() < 1e-12)
            .unwrap();
        let mut lo = if idx == 0 { FIT_N_MIN } else { curve[idx - 1].0 };
        let mut hi = if idx + 1 == curve.len() {
            FIT_N_MAX
        } else {
            curve[idx + 1].0
        };
        let inv_phi = 0.618_033_988_749_894_8;
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let mut f1 = mean_loglik(x1);
        let mut f2 = mean_loglik(x2);
        while hi - lo > 0.1 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = mean_loglik(x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = mean_loglik(x1);
            }
        }
        0.5 * (lo + hi)
    };

    // KS distance at the fitted N
    let rule = gauss_gen_laguerre(96, 0.5 * n_hat - 1.0)?;
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n_pts = sorted.len() as f64;
    let mut ks = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = univariate_aggregated_cdf(x, n_hat, &rule);
        let lo = i as f64 / n_pts;
        let hi = (i as f64 + 1.0) / n_pts;
        ks = ks.max((cdf - lo).abs()).max((cdf - hi).abs());
    }

    Ok(FitReport {
        n_hat,
        loglik_curve: curve,
        ks_stat: ks,
        fit_quality_warning: ks > 0.1,
        at_upper_bound,
        printed_prefactor_ratio: printed_prefactor_ratio(),
        sample_size: values.len(),
    })
}

/// Measure the normalization of the textbook Bessel-kernel prefactor
/// against the manifestly normalized mixture density.
///
/// The commonly printed closed form carries 1/2^(N/2+1) where
/// normalization requires 2^(1-N/2); the measured ratio is 4.
pub fn printed_prefactor_ratio() -> f64 {
    let n = 2.0;
    let k = 1.0;
    let x: f64 = 1.0;
    let b = x * x;
    let arg = (n * b).sqrt();
    let nu = 0.5 * (k - n);
    let ln_printed = -(0.5 * n + 1.0) * std::f64::consts::LN_2 - ln_gamma(0.5 * n)
        - 0.5 * (LN_2PI - n.ln())
        + ln_bessel_k(nu, arg).unwrap()
        - nu * arg.ln();
    // mixture value by direct quadrature, independent of the closed form
    let mixture = adaptive_simpson(
        &|z: f64| {
            if z <= 0.0 {
                return 0.0;
            }
            let var = z / n;
            chi2_ln_pdf(z, n).exp() * (-0.5 * b / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        },
        1e-12,
        200.0,
        1e-12,
        1e-300,
    )
    .unwrap();
    mixture / ln_printed.exp()
}
