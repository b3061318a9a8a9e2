//! Merton-style credit losses and the ensemble-averaged portfolio loss
//! density.
//!
//! Asset values follow geometric Brownian motions whose log changes over
//! the maturity share an effective correlation c and a chi-squared(N)
//! variance mixing factor. A default happens when the terminal value falls
//! below the face value; the normalized loss is (F - V)/F, floored at 0.
//!
//! Conditional on the mixing variable z and the common market factor u the
//! contracts are independent, so the portfolio loss is approximately
//! Gaussian with mean M1(z, u) and variance M2(z, u) built from the
//! per-contract loss moments. Averaging that Gaussian kernel over the
//! chi-squared weight in z and the Gaussian weight in u gives the loss
//! density; letting the portfolio size grow collapses the kernel onto the
//! curve L = m1(z, u), which is the infinite-portfolio limit evaluated
//! here by root solving.
//!
//! The conditional moment integrals are evaluated in closed form through
//! normal CDFs (with a direct quadrature route kept as an independent
//! cross-check); the outer integrals use generalized Gauss-Laguerre in z
//! and Gauss-Hermite in u, whose weights match the integrand exactly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::{gauss_gen_laguerre, gauss_hermite, trapezoid};
use crate::special::{ln_norm_cdf, norm_cdf, norm_pdf};
use crate::wishart::FluctuationN;

/// Margin below 1 enforced on the effective correlation.
const C_MARGIN: f64 = 1e-6;

/// Credit portfolio: per-contract face values, initial asset values,
/// drifts and volatilities, plus the common maturity.
#[derive(Debug, Clone)]
pub struct PortfolioSpec {
    face_values: Vec<f64>,
    initial_values: Vec<f64>,
    drifts: Vec<f64>,
    volatilities: Vec<f64>,
    maturity: f64,
}

impl PortfolioSpec {
    pub fn new(
        face_values: Vec<f64>,
        initial_values: Vec<f64>,
        drifts: Vec<f64>,
        volatilities: Vec<f64>,
        maturity: f64,
    ) -> Result<Self> {
        let k = face_values.len();
        if k == 0 {
            return Err(Error::argument("portfolio needs at least one contract".to_string()));
        }
        if initial_values.len() != k || drifts.len() != k || volatilities.len() != k {
            return Err(Error::argument(format!(
                "field lengths disagree: {k} faces, {} initials, {} drifts, {} vols",
                initial_values.len(),
                drifts.len(),
                volatilities.len()
            )));
        }
        if !(maturity > 0.0) {
            return Err(Error::domain(format!("maturity must be > 0, got {maturity}")));
        }
        if face_values.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::domain("face values must be > 0".to_string()));
        }
        if initial_values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::domain("initial values must be > 0".to_string()));
        }
        if volatilities.iter().any(|r| *r < 0.0 || !r.is_finite()) {
            return Err(Error::domain("volatilities must be >= 0".to_string()));
        }
        Ok(PortfolioSpec {
            face_values,
            initial_values,
            drifts,
            volatilities,
            maturity,
        })
    }

    /// All contracts identical.
    pub fn homogeneous(k: usize, face: f64, v0: f64, mu: f64, rho: f64, t_m: f64) -> Result<Self> {
        PortfolioSpec::new(
            vec![face; k],
            vec![v0; k],
            vec![mu; k],
            vec![rho; k],
            t_m,
        )
    }

    pub fn len(&self) -> usize {
        self.face_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.face_values.is_empty()
    }

    /// Fractions f_k = F_k / sum F; they sum to one by construction.
    pub fn weights(&self) -> Vec<f64> {
        let total: f64 = self.face_values.iter().sum();
        self.face_values.iter().map(|f| f / total).collect()
    }

    pub fn face_values(&self) -> &[f64] {
        &self.face_values
    }

    pub fn initial_values(&self) -> &[f64] {
        &self.initial_values
    }

    pub fn drifts(&self) -> &[f64] {
        &self.drifts
    }

    pub fn volatilities(&self) -> &[f64] {
        &self.volatilities
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn is_homogeneous(&self) -> bool {
        let same = |v: &[f64]| v.iter().all(|x| *x == v[0]);
        same(&self.face_values)
            && same(&self.initial_values)
            && same(&self.drifts)
            && same(&self.volatilities)
    }
}

/// Normalized loss of one contract: (F - V)/F when the terminal value is
/// strictly below the face value, else 0.
pub fn contract_loss(v_tm: f64, face: f64) -> f64 {
    debug_assert!(face > 0.0);
    if v_tm < face {
        (face - v_tm) / face
    } else {
        0.0
    }
}

/// Face-value-weighted total loss, in [0, 1] for losses in [0, 1].
pub fn portfolio_loss(losses: &[f64], spec: &PortfolioSpec) -> Result<f64> {
    if losses.len() != spec.len() {
        return Err(Error::argument(format!(
            "{} losses for {} contracts",
            losses.len(),
            spec.len()
        )));
    }
    if losses.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::domain("per-contract losses must lie in [0, 1]".to_string()));
    }
    Ok(spec
        .weights()
        .iter()
        .zip(losses)
        .map(|(w, l)| w * l)
        .sum())
}

/// Probability that contract k defaults at maturity under its geometric
/// Brownian motion: Φ((ln(F/V0) - (μ - ρ²/2) T) / (ρ sqrt(T))).
///
/// With zero volatility the value is deterministic and the result is the
/// default indicator.
pub fn default_probability(spec: &PortfolioSpec, k: usize) -> Result<f64> {
    if k >= spec.len() {
        return Err(Error::argument(format!(
            "contract {k} out of range for {} contracts",
            spec.len()
        )));
    }
    let t = spec.maturity;
    let rho = spec.volatilities[k];
    let log_leverage = (spec.face_values[k] / spec.initial_values[k]).ln();
    let drift_term = (spec.drifts[k] - 0.5 * rho * rho) * t;
    if rho == 0.0 {
        return Ok(if drift_term < log_leverage { 1.0 } else { 0.0 });
    }
    Ok(norm_cdf((log_leverage - drift_term) / (rho * t.sqrt())))
}

/// Per-contract pieces of the conditional loss moments, precomputed.
///
/// Conditional on the volatility scale s_z = sqrt(z/N) and the market
/// factor η (standard normal), the centered log value change
/// V = ln(V(T)/V0) - (μ - ρ²/2) T is Gaussian with mean
/// -s_z sqrt(cT) ρ η and standard deviation s_z ρ sqrt(T(1-c)); the
/// loss moments integrate (1 - (V0/F) e^{V + (μ-ρ²/2)T})^j over the
/// default region V <= ln(F/V0) - (μ-ρ²/2)T.
#[derive(Debug, Clone)]
struct MomentKernel {
    /// Default boundary in centered log-value units.
    bound: f64,
    /// ln of (V0/F) e^{(μ-ρ²/2)T}.
    ln_beta: f64,
    /// ρ sqrt(T(1-c)): conditional sd per unit of s_z.
    idio_sd: f64,
    /// sqrt(cT) ρ: market shift per unit of s_z η.
    market_shift: f64,
}

impl MomentKernel {
    fn new(spec: &PortfolioSpec, k: usize, c: f64) -> Result<Self> {
        if !(0.0..=1.0 - C_MARGIN).contains(&c) {
            return Err(Error::domain(format!(
                "effective correlation must lie in [0, 1) with margin {C_MARGIN}, got {c}"
            )));
        }
        let t = spec.maturity;
        let rho = spec.volatilities[k];
        if !(rho > 0.0) {
            return Err(Error::domain(format!(
                "analytic loss moments need volatility > 0, contract {k} has {rho}"
            )));
        }
        let ito_drift = (spec.drifts[k] - 0.5 * rho * rho) * t;
        Ok(MomentKernel {
            bound: (spec.face_values[k] / spec.initial_values[k]).ln() - ito_drift,
            ln_beta: (spec.initial_values[k] / spec.face_values[k]).ln() + ito_drift,
            idio_sd: rho * (t * (1.0 - c)).sqrt(),
            market_shift: (c * t).sqrt() * rho,
        })
    }

    /// First two conditional loss moments at (s_z, η).
    fn moments(&self, s_z: f64, eta: f64) -> (f64, f64) {
        let sd = s_z * self.idio_sd;
        let mean = -s_z * self.market_shift * eta;
        if sd < 1e-300 {
            // deterministic value: either certain default or none
            return if mean < self.bound {
                let loss = 1.0 - (self.ln_beta + mean).exp();
                (loss, loss * loss)
            } else {
                (0.0, 0.0)
            };
        }
        let alpha = (self.bound - mean) / sd;
        let phi_a = norm_cdf(alpha);
        let ln_e1 = self.ln_beta + mean + 0.5 * sd * sd + ln_norm_cdf(alpha - sd);
        let ln_e2 = 2.0 * (self.ln_beta + mean + sd * sd) + ln_norm_cdf(alpha - 2.0 * sd);
        let m1 = (phi_a - ln_e1.exp()).clamp(0.0, 1.0);
        let m2 = (phi_a - 2.0 * ln_e1.exp() + ln_e2.exp()).clamp(0.0, 1.0);
        (m1, m2)
    }

    /// First moment together with its derivative in η.
    fn m1_and_derivative(&self, s_z: f64, eta: f64) -> (f64, f64) {
        let sd = s_z * self.idio_sd;
        let mean = -s_z * self.market_shift * eta;
        if sd < 1e-300 {
            return (self.moments(s_z, eta).0, 0.0);
        }
        let alpha = (self.bound - mean) / sd;
        let phi_a = norm_cdf(alpha);
        let ln_e1 = self.ln_beta + mean + 0.5 * sd * sd + ln_norm_cdf(alpha - sd);
        let e1 = ln_e1.exp();
        let m1 = (phi_a - e1).clamp(0.0, 1.0);
        // d mean / d eta
        let dmean = -s_z * self.market_shift;
        let dalpha = -dmean / sd;
        let de1 = e1 * dmean
            + (self.ln_beta + mean + 0.5 * sd * sd).exp() * norm_pdf(alpha - sd) * dalpha;
        let dm1 = norm_pdf(alpha) * dalpha - de1;
        (m1, dm1)
    }
}

/// j-th conditional loss moment of contract k at mixing variable z and
/// market factor u (the u-weight is exp(-N u²/2)).
pub fn moment_mjk(
    j: u8,
    spec: &PortfolioSpec,
    k: usize,
    z: f64,
    u: f64,
    c: f64,
    n: f64,
) -> Result<f64> {
    if !(j == 1 || j == 2) {
        return Err(Error::argument(format!("moment order must be 1 or 2, got {j}")));
    }
    if !(z > 0.0) || !(n > 0.0) || !n.is_finite() {
        return Err(Error::argument(format!(
            "need z > 0 and finite N > 0, got z={z}, N={n}"
        )));
    }
    if k >= spec.len() {
        return Err(Error::argument(format!("contract {k} out of range")));
    }
    let kernel = MomentKernel::new(spec, k, c)?;
    let (m1, m2) = kernel.moments((z / n).sqrt(), u * n.sqrt());
    Ok(if j == 1 { m1 } else { m2 })
}

/// Same moment by direct adaptive integration over the changed variable;
/// an independent route used to validate the closed normal-CDF form.
pub fn moment_mjk_quadrature(
    j: u8,
    spec: &PortfolioSpec,
    k: usize,
    z: f64,
    u: f64,
    c: f64,
    n: f64,
) -> Result<f64> {
    if !(j == 1 || j == 2) {
        return Err(Error::argument(format!("moment order must be 1 or 2, got {j}")));
    }
    if !(0.0..=1.0 - C_MARGIN).contains(&c) {
        return Err(Error::domain(format!("singular correlation c={c}")));
    }
    let t = spec.maturity;
    let rho = spec.volatilities[k];
    let sqrt_z = z.sqrt();
    let s2 = t * (1.0 - c) * rho * rho / n;
    let s = s2.sqrt();
    let mean = -(c * t).sqrt() * u * rho;
    let ito_drift = (spec.drifts[k] - 0.5 * rho * rho) * t;
    let upper = ((spec.face_values[k] / spec.initial_values[k]).ln() - ito_drift) / sqrt_z;
    let ratio = spec.initial_values[k] / spec.face_values[k];
    let integrand = |v: f64| {
        let inner = 1.0 - ratio * (sqrt_z * v + ito_drift).exp();
        let powed = if j == 1 { inner } else { inner * inner };
        powed * (-0.5 * (v - mean) * (v - mean) / s2).exp()
    };
    let lower = mean.min(upper) - 60.0 * s;
    let raw = crate::quadrature::adaptive_simpson(&integrand, lower, upper, 1e-11, 1e-30)?;
    Ok(raw / (s * (2.0 * std::f64::consts::PI).sqrt()))
}

/// Weighted portfolio moments M1 = Σ f_k m1k and
/// M2 = Σ f_k² (m2k - m1k²) at (z, u).
pub fn portfolio_moments(
    spec: &PortfolioSpec,
    z: f64,
    u: f64,
    c: f64,
    n: f64,
) -> Result<(f64, f64)> {
    if !(z > 0.0) || !(n > 0.0) || !n.is_finite() {
        return Err(Error::argument(format!(
            "need z > 0 and finite N > 0, got z={z}, N={n}"
        )));
    }
    let kernels = build_kernels(spec, c)?;
    let weights = spec.weights();
    Ok(conditional_moments(
        &kernels,
        &weights,
        (z / n).sqrt(),
        u * n.sqrt(),
    ))
}

fn build_kernels(spec: &PortfolioSpec, c: f64) -> Result<Vec<MomentKernel>> {
    if spec.is_homogeneous() {
        Ok(vec![MomentKernel::new(spec, 0, c)?])
    } else {
        (0..spec.len()).map(|k| MomentKernel::new(spec, k, c)).collect()
    }
}

/// M1 and M2 from per-contract kernels; a single kernel means the
/// portfolio is homogeneous and the sums collapse.
fn conditional_moments(
    kernels: &[MomentKernel],
    weights: &[f64],
    s_z: f64,
    eta: f64,
) -> (f64, f64) {
    if kernels.len() == 1 {
        let (m1, m2) = kernels[0].moments(s_z, eta);
        let sum_w2: f64 = weights.iter().map(|w| w * w).sum();
        (m1, ((m2 - m1 * m1) * sum_w2).max(0.0))
    } else {
        let mut big_m1 = 0.0;
        let mut big_m2 = 0.0;
        for (kernel, w) in kernels.iter().zip(weights) {
            let (m1, m2) = kernel.moments(s_z, eta);
            big_m1 += w * m1;
            big_m2 += w * w * (m2 - m1 * m1);
        }
        (big_m1, big_m2.max(0.0))
    }
}

/// Node counts for the outer quadrature.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuadratureSettings {
    /// Generalized Gauss-Laguerre nodes for the chi-squared variable.
    pub z_nodes: usize,
    /// Gauss-Hermite nodes for the market factor.
    pub u_nodes: usize,
    /// Re-evaluate with 1.5x nodes and report the sup-norm change.
    pub refine_check: bool,
    /// Relative sup-norm tolerance for the refinement check.
    pub tolerance: f64,
    /// The refinement check compares the curve from this loss level up;
    /// below it the curve carries near-atom boundary structure whose
    /// pointwise values converge only in the bin-integral sense.
    pub check_floor: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            z_nodes: 64,
            u_nodes: 64,
            refine_check: true,
            tolerance: 1e-4,
            check_floor: 0.02,
        }
    }
}

impl QuadratureSettings {
    /// Node counts sized for the portfolio: the Gaussian kernel narrows
    /// like 1/sqrt(K), so the market-factor rule has to grow with K for
    /// the quadrature to resolve it.
    pub fn for_portfolio(k: usize) -> Self {
        let u_nodes = (8 * k).clamp(64, 2048);
        QuadratureSettings {
            z_nodes: 128,
            u_nodes,
            ..Default::default()
        }
    }
}

/// Curve metadata recorded with every loss density.
#[derive(Debug, Clone, Serialize)]
pub struct CurveParams {
    pub c: f64,
    /// Fluctuation parameter; `None` encodes the fixed-covariance limit.
    pub n: Option<f64>,
    pub portfolio_size: usize,
    pub z_nodes: usize,
    pub u_nodes: usize,
    /// Sup-norm change under node refinement, when checked.
    pub achieved_tolerance: Option<f64>,
    /// Grid points skipped in the limiting density because the root
    /// derivative vanished.
    pub singular_points: usize,
}

/// Tabulated loss density on a grid over [0, 1].
#[derive(Debug, Clone, Serialize)]
pub struct LossDensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub params: CurveParams,
    /// |1 - trapezoid integral| of the tabulated curve.
    pub normalization_defect: f64,
}

/// Uniform grid of `points` values spanning [0, 1].
pub fn uniform_grid(points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Grid refined near zero: geometric spacing from `floor` up to 1,
/// prefixed with 0.
pub fn log_refined_grid(points: usize, floor: f64) -> Vec<f64> {
    let n = points.max(3);
    let floor = floor.clamp(1e-12, 0.1);
    let ratio = (1.0 / floor).powf(1.0 / (n - 2) as f64);
    let mut grid = Vec::with_capacity(n);
    grid.push(0.0);
    let mut x = floor;
    for _ in 0..n - 1 {
        grid.push(x.min(1.0));
        x *= ratio;
    }
    grid[n - 1] = 1.0;
    grid
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::argument("loss grid needs at least 2 points".to_string()));
    }
    if grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::domain("loss grid must lie in [0, 1]".to_string()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::argument("loss grid must be strictly increasing".to_string()));
    }
    Ok(())
}

/// Outer quadrature nodes in the (s_z, weight) parameterization, with
/// weights normalized to sum to one.
fn mixing_nodes(n: FluctuationN, z_nodes: usize) -> Result<Vec<(f64, f64)>> {
    match n {
        FluctuationN::Infinite => Ok(vec![(1.0, 1.0)]),
        FluctuationN::Finite(n) => {
            let rule = gauss_gen_laguerre(z_nodes, 0.5 * n - 1.0)?;
            let total: f64 = rule.weights.iter().sum();
            Ok(rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&t, &w)| ((2.0 * t / n).sqrt(), w / total))
                .collect())
        }
    }
}

/// Market-factor nodes (η, weight), standard normal, weights sum to one.
fn market_nodes(u_nodes: usize) -> Result<Vec<(f64, f64)>> {
    let rule = gauss_hermite(u_nodes)?;
    let total: f64 = rule.weights.iter().sum();
    Ok(rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| (x * std::f64::consts::SQRT_2, w / total))
        .collect())
}

fn density_on_grid(
    grid: &[f64],
    spec: &PortfolioSpec,
    c: f64,
    n: FluctuationN,
    z_nodes: usize,
    u_nodes: usize,
) -> Result<Vec<f64>> {
    let kernels = build_kernels(spec, c)?;
    let weights = spec.weights();
    let z_rule = mixing_nodes(n, z_nodes)?;
    let u_rule = market_nodes(u_nodes)?;
    // precompute (M1, M2, weight) per node pair; nodes whose Gaussian
    // kernel lies entirely at the no-default atom (or the total-wipeout
    // point) degenerate to deltas the smooth curve cannot carry, so they
    // are excluded, consistent with the density describing L > 0 only
    let mut components = Vec::with_capacity(z_rule.len() * u_rule.len());
    for &(s_z, wz) in &z_rule {
        for &(eta, wu) in &u_rule {
            let w = wz * wu;
            if w < 1e-18 {
                continue;
            }
            let (m1, m2) = conditional_moments(&kernels, &weights, s_z, eta);
            let sd = m2.sqrt();
            if m1 + 8.0 * sd < 1e-6 || m1 - 8.0 * sd > 1.0 - 1e-6 {
                continue;
            }
            components.push((m1, m2.max(1e-300), w));
        }
    }
    let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    Ok(grid
        .iter()
        .map(|&l| {
            let mut acc = 0.0;
            for &(m1, m2, w) in &components {
                let d = l - m1;
                let e = -0.5 * d * d / m2;
                if e > -745.0 {
                    acc += w * e.exp() / m2.sqrt();
                }
            }
            acc * inv_sqrt_2pi
        })
        .collect())
}

/// Ensemble-averaged portfolio loss density on the given grid.
pub fn avg_loss_density(
    grid: &[f64],
    spec: &PortfolioSpec,
    c: f64,
    n: FluctuationN,
    settings: &QuadratureSettings,
) -> Result<LossDensityCurve> {
    validate_grid(grid)?;
    if let FluctuationN::Finite(v) = n {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::domain(format!("need N > 0, got {v}")));
        }
    }
    let density = density_on_grid(grid, spec, c, n, settings.z_nodes, settings.u_nodes)?;
    let achieved = if settings.refine_check {
        let finer = density_on_grid(
            grid,
            spec,
            c,
            n,
            settings.z_nodes * 3 / 2,
            settings.u_nodes * 3 / 2,
        )?;
        let mut sup = 0.0f64;
        let mut diff = 0.0f64;
        for ((&l, &x), &y) in grid.iter().zip(&density).zip(&finer) {
            if l < settings.check_floor {
                continue;
            }
            sup = sup.max(y);
            diff = diff.max((x - y).abs());
        }
        let rel = if sup > 0.0 { diff / sup } else { 0.0 };
        if rel > settings.tolerance {
            return Err(Error::Quadrature {
                achieved: rel,
                target: settings.tolerance,
            });
        }
        Some(rel)
    } else {
        None
    };
    let defect = (1.0 - trapezoid(grid, &density)).abs();
    Ok(LossDensityCurve {
        grid: grid.to_vec(),
        density,
        params: CurveParams {
            c,
            n: n.finite(),
            portfolio_size: spec.len(),
            z_nodes: settings.z_nodes,
            u_nodes: settings.u_nodes,
            achieved_tolerance: achieved,
            singular_points: 0,
        },
        normalization_defect: defect,
    })
}

/// Loss density of an infinitely large homogeneous portfolio.
///
/// Per mixing node the portfolio loss is the deterministic curve
/// L = m1(s_z, η), so the density is the pushforward of the standard
/// normal market factor through m1, averaged over the mixing weight:
/// for every (L, z) the factor η0 solving L = m1 is found by bracketed
/// bisection and contributes φ(η0)/|∂m1/∂η|.
pub fn limiting_loss_density(
    grid: &[f64],
    spec: &PortfolioSpec,
    c: f64,
    n: FluctuationN,
    settings: &QuadratureSettings,
) -> Result<LossDensityCurve> {
    validate_grid(grid)?;
    if !spec.is_homogeneous() {
        return Err(Error::argument(
            "limiting density is defined for homogeneous portfolios".to_string(),
        ));
    }
    if !(c > 0.0) {
        return Err(Error::argument(
            "limiting density needs c > 0: with c = 0 the conditional loss does not depend on the market factor".to_string(),
        ));
    }
    let kernel = MomentKernel::new(spec, 0, c)?;
    let z_rule = mixing_nodes(n, settings.z_nodes)?;
    let mut density = vec![0.0; grid.len()];
    let mut singular = 0usize;
    for &(s_z, wz) in &z_rule {
        // m1 is increasing in η; bracket then expand geometrically
        let mut lo = -12.0;
        let mut hi = 12.0;
        for _ in 0..4 {
            let (m_lo, _) = kernel.m1_and_derivative(s_z, lo);
            let (m_hi, _) = kernel.m1_and_derivative(s_z, hi);
            if m_lo <= grid[0] && m_hi >= grid[grid.len() - 1] {
                break;
            }
            lo *= 2.0;
            hi *= 2.0;
        }
        let m_lo = kernel.moments(s_z, lo).0;
        let m_hi = kernel.moments(s_z, hi).0;
        if m_hi < m_lo {
            return Err(Error::contract(
                "conditional mean loss is not increasing in the market factor".to_string(),
            ));
        }
        for (i, &l) in grid.iter().enumerate() {
            if l <= 0.0 || l < m_lo || l > m_hi {
                continue; // outside the attainable range for this node
            }
            let mut a = lo;
            let mut b = hi;
            let mut eta = 0.5 * (a + b);
            let mut residual = f64::INFINITY;
            for _ in 0..200 {
                eta = 0.5 * (a + b);
                let m = kernel.moments(s_z, eta).0;
                residual = m - l;
                if residual.abs() < 1e-12 {
                    break;
                }
                if residual < 0.0 {
                    a = eta;
                } else {
                    b = eta;
                }
                if b - a < 1e-15 * (1.0 + eta.abs()) {
                    break;
                }
            }
            if residual.abs() > 1e-10 {
                singular += 1;
                continue;
            }
            let (_, mut slope) = kernel.m1_and_derivative(s_z, eta);
            if !slope.is_finite() {
                // central finite difference fallback
                let h = 1e-6 * (1.0 + eta.abs());
                slope = (kernel.moments(s_z, eta + h).0 - kernel.moments(s_z, eta - h).0)
                    / (2.0 * h);
            }
            if slope.abs() < 1e-14 {
                singular += 1;
                continue;
            }
            density[i] += wz * norm_pdf(eta) / slope.abs();
        }
    }
    let defect = (1.0 - trapezoid(grid, &density)).abs();
    Ok(LossDensityCurve {
        grid: grid.to_vec(),
        density,
        params: CurveParams {
            c,
            n: n.finite(),
            portfolio_size: spec.len(),
            z_nodes: settings.z_nodes,
            u_nodes: 0,
            achieved_tolerance: None,
            singular_points: singular,
        },
        normalization_defect: defect,
    })
}

/// VaR and expected tail loss read off a tabulated density curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurveRiskMeasure {
    pub alpha: f64,
    pub var: f64,
    pub etl: f64,
}

/// Quantiles by trapezoidal CDF inversion, tail expectations by
/// trapezoidal integration above the quantile.
pub fn risk_measures_from_curve(
    curve: &LossDensityCurve,
    alphas: &[f64],
) -> Result<Vec<CurveRiskMeasure>> {
    if curve.normalization_defect >= 1e-2 {
        return Err(Error::contract(format!(
            "curve normalization defect {:.3e} too large for quantiles",
            curve.normalization_defect
        )));
    }
    if alphas.iter().any(|a| !(0.0 < *a && *a < 1.0)) {
        return Err(Error::argument("quantile levels must lie in (0, 1)".to_string()));
    }
    let grid = &curve.grid;
    let dens = &curve.density;
    // cumulative trapezoid, normalized so quantiles are always attained
    let mut cdf = vec![0.0; grid.len()];
    for i in 1..grid.len() {
        cdf[i] = cdf[i - 1] + 0.5 * (grid[i] - grid[i - 1]) * (dens[i] + dens[i - 1]);
    }
    let total = cdf[grid.len() - 1];
    if !(total > 0.0) {
        return Err(Error::domain("curve has no mass".to_string()));
    }
    for v in cdf.iter_mut() {
        *v /= total;
    }
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let idx = match cdf.iter().position(|v| *v >= alpha) {
            Some(0) => 1,
            Some(i) => i,
            None => grid.len() - 1,
        };
        let (c0, c1) = (cdf[idx - 1], cdf[idx]);
        let frac = if c1 > c0 { (alpha - c0) / (c1 - c0) } else { 0.0 };
        let var = grid[idx - 1] + frac * (grid[idx] - grid[idx - 1]);
        // tail integrals from var to the end, with a partial first cell
        let d_var = dens[idx - 1] + frac * (dens[idx] - dens[idx - 1]);
        let mut mass = 0.5 * (grid[idx] - var) * (d_var + dens[idx]);
        let mut moment = 0.5 * (grid[idx] - var) * (d_var * var + dens[idx] * grid[idx]);
        for i in idx..grid.len() - 1 {
            let h = grid[i + 1] - grid[i];
            mass += 0.5 * h * (dens[i] + dens[i + 1]);
            moment += 0.5 * h * (dens[i] * grid[i] + dens[i + 1] * grid[i + 1]);
        }
        let etl = if mass > 0.0 { moment / mass } else { var };
        out.push(CurveRiskMeasure {
            alpha,
            var,
            etl: etl.max(var),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_relative_eq;
    use rand::Rng;

    /// Year-horizon reference parameters used across the loss tests.
    fn year_portfolio(k: usize) -> PortfolioSpec {
        PortfolioSpec::homogeneous(k, 75.0, 100.0, 0.17, 0.35, 1.0).unwrap()
    }

    #[test]
    fn contract_loss_cases() {
        assert_eq!(contract_loss(75.0, 75.0), 0.0); // boundary is no default
        assert_eq!(contract_loss(0.0, 75.0), 1.0);
        assert_relative_eq!(contract_loss(60.0, 75.0), 0.2, epsilon = 1e-15);
        assert_eq!(contract_loss(100.0, 75.0), 0.0);
    }

    #[test]
    fn portfolio_loss_cases() {
        let spec = year_portfolio(2);
        assert_eq!(portfolio_loss(&[0.0, 0.0], &spec).unwrap(), 0.0);
        assert_relative_eq!(portfolio_loss(&[1.0, 1.0], &spec).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(
            portfolio_loss(&[0.2, 0.4], &spec).unwrap(),
            0.3,
            epsilon = 1e-14
        );
        assert!(portfolio_loss(&[0.2, 1.4], &spec).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        let spec = PortfolioSpec::new(
            vec![10.0, 20.0, 70.0],
            vec![100.0; 3],
            vec![0.1; 3],
            vec![0.2; 3],
            1.0,
        )
        .unwrap();
        let total: f64 = spec.weights().iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        assert_relative_eq!(spec.weights()[2], 0.7, epsilon = 1e-14);
    }

    #[test]
    fn default_probability_cases() {
        // face value at the median of the terminal distribution
        let mu = 0.1f64;
        let rho = 0.3f64;
        let t = 2.0f64;
        let median_face = 100.0 * ((mu - 0.5 * rho * rho) * t).exp();
        let spec =
            PortfolioSpec::new(vec![median_face], vec![100.0], vec![mu], vec![rho], t).unwrap();
        assert_relative_eq!(default_probability(&spec, 0).unwrap(), 0.5, epsilon = 1e-12);

        // vanishing leverage
        let safe = PortfolioSpec::new(vec![1e-9], vec![100.0], vec![0.0], vec![0.3], 1.0).unwrap();
        assert!(default_probability(&safe, 0).unwrap() < 1e-10);

        // year parameters: Φ((ln 0.75 - 0.10875)/0.35)
        let spec = year_portfolio(1);
        assert_relative_eq!(
            default_probability(&spec, 0).unwrap(),
            0.1287,
            epsilon = 5e-5
        );
    }

    #[test]
    fn default_probability_zero_vol_is_indicator() {
        let defaulting =
            PortfolioSpec::new(vec![90.0], vec![100.0], vec![-0.2], vec![0.0], 1.0).unwrap();
        assert_eq!(default_probability(&defaulting, 0).unwrap(), 1.0);
        let safe = PortfolioSpec::new(vec![90.0], vec![100.0], vec![0.0], vec![0.0], 1.0).unwrap();
        assert_eq!(default_probability(&safe, 0).unwrap(), 0.0);
    }

    #[test]
    fn moment_vanishes_without_default_mass() {
        // face value so small that the default region is empty
        let spec = PortfolioSpec::new(vec![1e-12], vec![100.0], vec![0.17], vec![0.35], 1.0)
            .unwrap();
        for j in [1, 2] {
            let m = moment_mjk(j, &spec, 0, 6.0, 0.0, 0.28, 6.0).unwrap();
            assert!(m.abs() < 1e-30, "m{j} = {m}");
        }
    }

    #[test]
    fn moment_saturates_at_full_mass() {
        // enormous face value: integrand is 1 on the whole domain
        let spec = PortfolioSpec::new(vec![1e12], vec![100.0], vec![0.17], vec![0.35], 1.0)
            .unwrap();
        for j in [1, 2] {
            let m = moment_mjk(j, &spec, 0, 6.0, 0.0, 0.28, 6.0).unwrap();
            assert_relative_eq!(m, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn moment_closed_form_matches_quadrature() {
        let mut rng = substream(31, 0);
        for draw in 0..100 {
            let c: f64 = rng.random_range(0.0..0.9);
            let n: f64 = rng.random_range(1.5..20.0);
            let z: f64 = rng.random_range(0.3..3.0) * n;
            let u: f64 = rng.random_range(-2.5..2.5) / n.sqrt();
            let mu: f64 = rng.random_range(-0.1..0.3);
            let rho: f64 = rng.random_range(0.05..0.6);
            let lev: f64 = rng.random_range(0.3..0.95);
            let spec =
                PortfolioSpec::new(vec![100.0 * lev], vec![100.0], vec![mu], vec![rho], 1.0)
                    .unwrap();
            for j in [1u8, 2u8] {
                let closed = moment_mjk(j, &spec, 0, z, u, c, n).unwrap();
                let quad = moment_mjk_quadrature(j, &spec, 0, z, u, c, n).unwrap();
                assert_relative_eq!(
                    closed,
                    quad,
                    epsilon = 1e-10,
                    max_relative = 1e-8
                );
                let _ = draw;
            }
        }
    }

    #[test]
    fn moment_worked_example_against_quadrature() {
        // year parameters at the central node
        let spec = year_portfolio(1);
        let (c, n) = (0.28, 6.0);
        let closed = moment_mjk(1, &spec, 0, n, 0.0, c, n).unwrap();
        let quad = moment_mjk_quadrature(1, &spec, 0, n, 0.0, c, n).unwrap();
        assert_relative_eq!(closed, quad, epsilon = 1e-10, max_relative = 1e-8);
        assert!(closed > 0.0 && closed < 0.2);
    }

    #[test]
    fn moment_rejects_singular_correlation() {
        let spec = year_portfolio(1);
        assert!(moment_mjk(1, &spec, 0, 6.0, 0.0, 1.0, 6.0).is_err());
        assert!(moment_mjk(1, &spec, 0, 6.0, 0.0, 1.0 - 1e-9, 6.0).is_err());
    }

    #[test]
    fn portfolio_moments_no_default_and_homogeneous_scaling() {
        let safe = PortfolioSpec::homogeneous(5, 1e-12, 100.0, 0.17, 0.35, 1.0).unwrap();
        let (m1, m2) = portfolio_moments(&safe, 6.0, 0.0, 0.28, 6.0).unwrap();
        assert!(m1 < 1e-30 && m2 < 1e-30);

        let k = 8;
        let spec = year_portfolio(k);
        let (big_m1, big_m2) = portfolio_moments(&spec, 6.0, 0.1, 0.28, 6.0).unwrap();
        let m1 = moment_mjk(1, &spec, 0, 6.0, 0.1, 0.28, 6.0).unwrap();
        let m2 = moment_mjk(2, &spec, 0, 6.0, 0.1, 0.28, 6.0).unwrap();
        assert_relative_eq!(big_m1, m1, epsilon = 1e-13);
        assert_relative_eq!(big_m2, (m2 - m1 * m1) / k as f64, epsilon = 1e-13);
    }

    #[test]
    fn portfolio_moments_variance_shrinks_with_size() {
        let (_, v10) =
            portfolio_moments(&year_portfolio(10), 6.0, 0.0, 0.28, 6.0).unwrap();
        let (_, v100) =
            portfolio_moments(&year_portfolio(100), 6.0, 0.0, 0.28, 6.0).unwrap();
        assert_relative_eq!(v10 / v100, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn loss_density_nonnegative_and_boundary_leak_shrinks_with_size() {
        // The tabulated density is the second-order expansion in the
        // portfolio size; near the no-default atom its Gaussian kernel
        // leaks mass below zero, so the curve undershoots full
        // normalization by an amount that decreases with K.
        let grid = log_refined_grid(512, 1e-6);
        let defect_for = |k: usize| {
            let spec = year_portfolio(k);
            let curve = avg_loss_density(
                &grid,
                &spec,
                0.28,
                FluctuationN::Finite(6.0),
                &QuadratureSettings::for_portfolio(k),
            )
            .unwrap();
            assert!(curve.density.iter().all(|d| *d >= 0.0 && d.is_finite()));
            curve.normalization_defect
        };
        let d10 = defect_for(10);
        let d100 = defect_for(100);
        assert!(d10 < 0.30, "K=10 defect {d10}");
        assert!(d100 < 0.10, "K=100 defect {d100}");
        assert!(d100 < d10, "defect must shrink with K: {d100} vs {d10}");
    }

    #[test]
    fn loss_density_tail_mass_grows_with_c() {
        let grid = uniform_grid(512);
        let spec = year_portfolio(40);
        let tail = |c: f64| {
            let curve = avg_loss_density(
                &grid,
                &spec,
                c,
                FluctuationN::Finite(6.0),
                &QuadratureSettings::for_portfolio(40),
            )
            .unwrap();
            let from = grid.iter().position(|l| *l >= 0.3).unwrap();
            trapezoid(&grid[from..], &curve.density[from..])
        };
        assert!(tail(0.46) > tail(0.26));
    }

    #[test]
    fn loss_density_tail_mass_shrinks_with_n() {
        let grid = uniform_grid(512);
        let spec = year_portfolio(40);
        let tail = |n: FluctuationN| {
            let curve =
                avg_loss_density(&grid, &spec, 0.28, n, &QuadratureSettings::for_portfolio(40))
                    .unwrap();
            let from = grid.iter().position(|l| *l >= 0.2).unwrap();
            trapezoid(&grid[from..], &curve.density[from..])
        };
        let t2 = tail(FluctuationN::Finite(2.0));
        let t6 = tail(FluctuationN::Finite(6.0));
        let t20 = tail(FluctuationN::Finite(20.0));
        let tinf = tail(FluctuationN::Infinite);
        assert!(t2 > t6 && t6 > t20 && t20 > tinf, "{t2} {t6} {t20} {tinf}");
    }

    #[test]
    fn limiting_density_zero_outside_attainable_range() {
        let spec = year_portfolio(100);
        let settings = QuadratureSettings::default();
        let uniform = limiting_loss_density(
            &uniform_grid(256),
            &spec,
            0.28,
            FluctuationN::Finite(6.0),
            &settings,
        )
        .unwrap();
        // losses near 1 need every contract wiped out, unattainable here
        assert_eq!(uniform.density[255], 0.0);
        assert!(uniform.density.iter().all(|d| d.is_finite() && *d >= 0.0));
        // the boundary spike near L=0 needs the log grid to integrate
        let curve = limiting_loss_density(
            &log_refined_grid(512, 1e-6),
            &spec,
            0.28,
            FluctuationN::Finite(6.0),
            &settings,
        )
        .unwrap();
        assert!(
            curve.normalization_defect < 2e-2,
            "defect {}",
            curve.normalization_defect
        );
    }

    #[test]
    fn limiting_density_rejects_heterogeneous_and_c_zero() {
        let grid = uniform_grid(64);
        let mut faces = vec![75.0; 4];
        faces[0] = 60.0;
        let hetero =
            PortfolioSpec::new(faces, vec![100.0; 4], vec![0.17; 4], vec![0.35; 4], 1.0).unwrap();
        assert!(limiting_loss_density(
            &grid,
            &hetero,
            0.28,
            FluctuationN::Finite(6.0),
            &QuadratureSettings::default()
        )
        .is_err());
        let spec = year_portfolio(4);
        assert!(limiting_loss_density(
            &grid,
            &spec,
            0.0,
            FluctuationN::Finite(6.0),
            &QuadratureSettings::default()
        )
        .is_err());
    }

    #[test]
    fn limiting_density_month_parameters_heavy_tail_shape() {
        // month-horizon parameters give a monotone decreasing heavy tail
        let spec = PortfolioSpec::homogeneous(100, 75.0, 100.0, 0.013, 0.1, 1.0).unwrap();
        let grid = uniform_grid(512);
        let curve = limiting_loss_density(
            &grid,
            &spec,
            0.26,
            FluctuationN::Finite(4.2),
            &QuadratureSettings::default(),
        )
        .unwrap();
        let at = |l: f64| {
            let i = grid.iter().position(|g| *g >= l).unwrap();
            curve.density[i]
        };
        assert!(at(0.05) > at(0.1));
        assert!(at(0.1) > at(0.2));
        assert!(at(0.2) > at(0.4));
    }

    #[test]
    fn risk_measures_uniform_density() {
        let grid = uniform_grid(1001);
        let density = vec![1.0; 1001];
        let curve = LossDensityCurve {
            grid: grid.clone(),
            density,
            params: CurveParams {
                c: 0.0,
                n: None,
                portfolio_size: 1,
                z_nodes: 0,
                u_nodes: 0,
                achieved_tolerance: None,
                singular_points: 0,
            },
            normalization_defect: 0.0,
        };
        let out = risk_measures_from_curve(&curve, &[0.99]).unwrap();
        assert_relative_eq!(out[0].var, 0.99, epsilon = 1e-10);
        assert_relative_eq!(out[0].etl, 0.995, epsilon = 1e-10);
    }

    #[test]
    fn risk_measures_point_mass() {
        // narrow triangular spike at 0.4
        let grid = uniform_grid(2001);
        let center = 0.4;
        let width = 0.002;
        let density: Vec<f64> = grid
            .iter()
            .map(|l| {
                let d = (l - center).abs();
                if d < width {
                    (width - d) / (width * width)
                } else {
                    0.0
                }
            })
            .collect();
        let defect = (1.0 - trapezoid(&grid, &density)).abs();
        let curve = LossDensityCurve {
            grid,
            density,
            params: CurveParams {
                c: 0.0,
                n: None,
                portfolio_size: 1,
                z_nodes: 0,
                u_nodes: 0,
                achieved_tolerance: None,
                singular_points: 0,
            },
            normalization_defect: defect,
        };
        for alpha in [0.9, 0.99, 0.999] {
            let out = risk_measures_from_curve(&curve, &[alpha]).unwrap();
            assert_relative_eq!(out[0].var, center, epsilon = 2.0 * width);
            assert_relative_eq!(out[0].etl, center, epsilon = 2.0 * width);
        }
    }

    #[test]
    fn risk_measures_validate_inputs() {
        let curve = LossDensityCurve {
            grid: uniform_grid(11),
            density: vec![1.0; 11],
            params: CurveParams {
                c: 0.0,
                n: None,
                portfolio_size: 1,
                z_nodes: 0,
                u_nodes: 0,
                achieved_tolerance: None,
                singular_points: 0,
            },
            normalization_defect: 0.05,
        };
        assert!(risk_measures_from_curve(&curve, &[0.99]).is_err());
        let good = LossDensityCurve {
            normalization_defect: 0.0,
            ..curve
        };
        assert!(risk_measures_from_curve(&good, &[1.0]).is_err());
        assert!(risk_measures_from_curve(&good, &[0.0]).is_err());
    }

    #[test]
    fn log_grid_spans_unit_interval() {
        let grid = log_refined_grid(128, 1e-5);
        assert_eq!(grid[0], 0.0);
        assert_eq!(*grid.last().unwrap(), 1.0);
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
        assert!(grid[1] <= 1e-5 * 1.0001);
    }
}
