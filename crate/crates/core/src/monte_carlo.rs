//! Monte-Carlo loss simulation with deterministic per-trial streams.
//!
//! Terminal asset values follow correlated geometric Brownian motions;
//! under mixture dynamics the whole covariance is rescaled by a fresh
//! chi-squared(N)/N factor each trial, which is one draw per maturity
//! horizon from the ensemble-averaged return law. Trial i uses random
//! stream i of the master seed, so results are bit-identical regardless
//! of scheduling or how many trials run.

use nalgebra::{DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::spd_sqrt;
use crate::market::CovarianceMatrix;
use crate::merton::{contract_loss, PortfolioSpec};
use crate::rng::substream;

/// Covariance dynamics over the maturity horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Dynamics {
    /// Fixed covariance (the N -> ∞ limit, log-normal terminal values).
    FixedCovariance,
    /// Covariance scaled by chi-squared(n)/n, one draw per trial.
    Mixture { n: f64 },
}

/// Where the market covariance comes from.
#[derive(Debug, Clone)]
pub enum CovarianceSource {
    /// Full matrix of per-sqrt-time volatilities and correlations.
    Empirical(CovarianceMatrix),
    /// Effective correlation c with per-asset volatilities.
    Effective { c: f64, vols: Vec<f64> },
}

/// Complete description of one simulation run.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub trials: usize,
    pub seed: u64,
    pub dynamics: Dynamics,
    pub covariance: CovarianceSource,
    pub portfolio: PortfolioSpec,
}

/// Per-trial portfolio losses.
#[derive(Debug, Clone)]
pub struct LossSamples {
    pub losses: Vec<f64>,
    /// Fraction of trials with zero portfolio loss.
    pub nondefault_ratio: f64,
    pub seed: u64,
}

/// VaR and expected tail loss at one quantile level.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RiskRow {
    pub alpha: f64,
    pub var: f64,
    pub etl: f64,
    /// Batch-estimate standard errors, when enough trials exist.
    pub var_se: Option<f64>,
    pub etl_se: Option<f64>,
    /// Fewer than 20 samples beyond the quantile.
    pub thin_tail_warning: bool,
}

/// Quantile risk measures of a loss sample.
#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub rows: Vec<RiskRow>,
    pub mean_loss: f64,
    pub mean_loss_se: f64,
    pub nondefault_ratio: f64,
    pub trials: usize,
}

/// Relative deviation of risk measures between two runs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DeviationRow {
    pub alpha: f64,
    pub var_reference: f64,
    pub var_other: f64,
    /// (reference - other) / reference.
    pub var_rel_deviation: f64,
    pub etl_reference: f64,
    pub etl_other: f64,
    pub etl_rel_deviation: f64,
}

impl SimulationConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::argument("need at least one trial".to_string()));
        }
        if let Dynamics::Mixture { n } = self.dynamics {
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::domain(format!("mixture N must be finite and > 0, got {n}")));
            }
        }
        let k = self.portfolio.len();
        let vols = self.vols()?;
        if vols.len() != k {
            return Err(Error::argument(format!(
                "covariance dimension {} vs portfolio size {k}",
                vols.len()
            )));
        }
        // the covariance source is the single source of truth for the
        // diffusion; the portfolio's volatilities must agree with it
        for (i, (a, b)) in vols.iter().zip(self.portfolio.volatilities()).enumerate() {
            if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
                return Err(Error::contract(format!(
                    "covariance vol {a} disagrees with portfolio volatility {b} for contract {i}"
                )));
            }
        }
        Ok(())
    }

    fn vols(&self) -> Result<Vec<f64>> {
        match &self.covariance {
            CovarianceSource::Effective { c, vols } => {
                if !(0.0..1.0).contains(c) {
                    return Err(Error::domain(format!(
                        "effective correlation must lie in [0, 1), got {c}"
                    )));
                }
                Ok(vols.clone())
            }
            CovarianceSource::Empirical(m) => {
                Ok(m.entries().diagonal().iter().map(|v| v.sqrt()).collect())
            }
        }
    }
}

enum ShockEngine {
    /// One common factor plus idiosyncratic noise; O(K) per trial.
    OneFactor { sqrt_c: f64, sqrt_1mc: f64 },
    /// Dense factor B with B Bᵀ = correlation structure.
    Factored(DMatrix<f64>),
}

struct TerminalSimulator {
    engine: ShockEngine,
    /// Per-asset diffusion scale rho_k sqrt(T).
    scale: Vec<f64>,
    /// Per-asset deterministic drift (mu_k - rho_k²/2) T.
    drift: Vec<f64>,
    initial: Vec<f64>,
    mixture: Option<f64>,
}

impl TerminalSimulator {
    fn new(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        let t = config.portfolio.maturity();
        let vols = config.vols()?;
        let engine = match &config.covariance {
            CovarianceSource::Effective { c, .. } => ShockEngine::OneFactor {
                sqrt_c: c.sqrt(),
                sqrt_1mc: (1.0 - c).sqrt(),
            },
            CovarianceSource::Empirical(m) => {
                // factor the correlation so the per-asset scale is explicit
                let k = m.dim();
                let mut corr = DMatrix::zeros(k, k);
                for i in 0..k {
                    for j in 0..k {
                        let denom = vols[i] * vols[j];
                        corr[(i, j)] = if denom > 0.0 {
                            m.entries()[(i, j)] / denom
                        } else if i == j {
                            1.0
                        } else {
                            0.0
                        };
                    }
                }
                ShockEngine::Factored(spd_sqrt(&corr).map_err(|e| {
                    Error::decomposition(format!(
                        "covariance is not positive semidefinite: {e}"
                    ))
                })?)
            }
        };
        let scale: Vec<f64> = vols.iter().map(|v| v * t.sqrt()).collect();
        let drift: Vec<f64> = config
            .portfolio
            .drifts()
            .iter()
            .zip(&vols)
            .map(|(mu, rho)| (mu - 0.5 * rho * rho) * t)
            .collect();
        Ok(TerminalSimulator {
            engine,
            scale,
            drift,
            initial: config.portfolio.initial_values().to_vec(),
            mixture: match config.dynamics {
                Dynamics::Mixture { n } => Some(n),
                Dynamics::FixedCovariance => None,
            },
        })
    }

    fn assets(&self) -> usize {
        self.initial.len()
    }

    /// Terminal values for one trial, writing into `out`.
    fn simulate_into(&self, rng: &mut impl rand::Rng, out: &mut [f64]) {
        let vol_scale = match self.mixture {
            Some(n) => (ChiSquared::new(n).unwrap().sample(rng) / n).sqrt(),
            None => 1.0,
        };
        match &self.engine {
            ShockEngine::OneFactor { sqrt_c, sqrt_1mc } => {
                let g0: f64 = StandardNormal.sample(rng);
                for k in 0..self.assets() {
                    let g: f64 = StandardNormal.sample(rng);
                    let x = vol_scale * self.scale[k] * (sqrt_c * g0 + sqrt_1mc * g);
                    out[k] = self.initial[k] * (self.drift[k] + x).exp();
                }
            }
            ShockEngine::Factored(b) => {
                let eps = DVector::from_fn(self.assets(), |_, _| StandardNormal.sample(rng));
                let shocks = b * eps;
                for k in 0..self.assets() {
                    let x = vol_scale * self.scale[k] * shocks[k];
                    out[k] = self.initial[k] * (self.drift[k] + x).exp();
                }
            }
        }
    }
}

/// Simulate terminal asset values for the given trial indices.
///
/// Exposed mainly for diagnostics; `run_losses` is the usual entry point.
pub fn simulate_terminal_values(
    config: &SimulationConfig,
    trials: std::ops::Range<usize>,
) -> Result<Vec<Vec<f64>>> {
    let sim = TerminalSimulator::new(config)?;
    let mut out = Vec::with_capacity(trials.len());
    for trial in trials {
        let mut values = vec![0.0; sim.assets()];
        let mut rng = substream(config.seed, trial as u64);
        sim.simulate_into(&mut rng, &mut values);
        out.push(values);
    }
    Ok(out)
}

/// Run the full simulation and collect per-trial portfolio losses.
pub fn run_losses(config: &SimulationConfig) -> Result<LossSamples> {
    let sim = TerminalSimulator::new(config)?;
    let weights = config.portfolio.weights();
    let faces = config.portfolio.face_values();
    let mut losses = Vec::with_capacity(config.trials);
    let mut values = vec![0.0; sim.assets()];
    let mut nondefault = 0usize;
    for trial in 0..config.trials {
        let mut rng = substream(config.seed, trial as u64);
        sim.simulate_into(&mut rng, &mut values);
        let mut loss = 0.0;
        for k in 0..values.len() {
            loss += weights[k] * contract_loss(values[k], faces[k]);
        }
        if loss == 0.0 {
            nondefault += 1;
        }
        losses.push(loss.clamp(0.0, 1.0));
    }
    Ok(LossSamples {
        losses,
        nondefault_ratio: nondefault as f64 / config.trials as f64,
        seed: config.seed,
    })
}

/// Streaming quantile tracker (the P² algorithm): five markers follow the
/// target quantile with O(1) memory, for runs too large to keep every
/// loss. The estimate is approximate; exact order statistics remain the
/// default up to 1e7 trials.
#[derive(Debug, Clone)]
pub struct StreamingQuantile {
    alpha: f64,
    heights: [f64; 5],
    positions: [f64; 5],
    desired: [f64; 5],
    increments: [f64; 5],
    seen: usize,
    warmup: Vec<f64>,
}

impl StreamingQuantile {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::argument(format!("quantile level {alpha} outside (0, 1)")));
        }
        Ok(StreamingQuantile {
            alpha,
            heights: [0.0; 5],
            positions: [1.0, 2.0, 3.0, 4.0, 5.0],
            desired: [
                1.0,
                1.0 + 2.0 * alpha,
                1.0 + 4.0 * alpha,
                3.0 + 2.0 * alpha,
                5.0,
            ],
            increments: [0.0, alpha / 2.0, alpha, (1.0 + alpha) / 2.0, 1.0],
            seen: 0,
            warmup: Vec::with_capacity(5),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn observe(&mut self, x: f64) {
        self.seen += 1;
        if self.warmup.len() < 5 {
            self.warmup.push(x);
            if self.warmup.len() == 5 {
                self.warmup.sort_by(|a, b| a.total_cmp(b));
                self.heights.copy_from_slice(&self.warmup);
            }
            return;
        }
        // locate the cell and bump marker positions
        let k = if x < self.heights[0] {
            self.heights[0] = x;
            0
        } else if x >= self.heights[4] {
            self.heights[4] = x;
            3
        } else {
            (1..5).find(|&i| x < self.heights[i]).unwrap() - 1
        };
        for i in (k + 1)..5 {
            self.positions[i] += 1.0;
        }
        for i in 0..5 {
            self.desired[i] += self.increments[i];
        }
        // parabolic (or linear) adjustment of the middle markers
        for i in 1..4 {
            let d = self.desired[i] - self.positions[i];
            let step_up = self.positions[i + 1] - self.positions[i];
            let step_dn = self.positions[i - 1] - self.positions[i];
            if (d >= 1.0 && step_up > 1.0) || (d <= -1.0 && step_dn < -1.0) {
                let d = d.signum();
                let p = self.positions[i];
                let parabolic = self.heights[i]
                    + d / (self.positions[i + 1] - self.positions[i - 1])
                        * ((p - self.positions[i - 1] + d)
                            * (self.heights[i + 1] - self.heights[i])
                            / step_up
                            + (self.positions[i + 1] - p - d)
                                * (self.heights[i] - self.heights[i - 1])
                                / (p - self.positions[i - 1]));
                self.heights[i] =
                    if self.heights[i - 1] < parabolic && parabolic < self.heights[i + 1] {
                        parabolic
                    } else if d > 0.0 {
                        self.heights[i]
                            + (self.heights[i + 1] - self.heights[i]) / step_up
                    } else {
                        self.heights[i]
                            - (self.heights[i - 1] - self.heights[i]) / step_dn
                    };
                self.positions[i] += d;
            }
        }
    }

    /// Current quantile estimate (exact while fewer than five samples).
    pub fn estimate(&self) -> f64 {
        if self.warmup.len() < 5 {
            let mut sorted = self.warmup.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            return sorted
                .get(((self.alpha * sorted.len() as f64).ceil() as usize).saturating_sub(1))
                .copied()
                .unwrap_or(0.0);
        }
        self.heights[2]
    }

    pub fn samples_seen(&self) -> usize {
        self.seen
    }
}

/// Streamed approximate quantiles for trial counts too large to store;
/// losses are generated trial by trial and discarded.
pub fn run_streaming_quantiles(
    config: &SimulationConfig,
    alphas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let sim = TerminalSimulator::new(config)?;
    let weights = config.portfolio.weights();
    let faces = config.portfolio.face_values();
    let mut trackers = alphas
        .iter()
        .map(|&a| StreamingQuantile::new(a))
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![0.0; sim.assets()];
    for trial in 0..config.trials {
        let mut rng = substream(config.seed, trial as u64);
        sim.simulate_into(&mut rng, &mut values);
        let mut loss = 0.0;
        for k in 0..values.len() {
            loss += weights[k] * contract_loss(values[k], faces[k]);
        }
        for tracker in trackers.iter_mut() {
            tracker.observe(loss.clamp(0.0, 1.0));
        }
    }
    Ok(trackers.iter().map(|t| (t.alpha(), t.estimate())).collect())
}

/// Empirical VaR (higher order statistic convention) and expected tail
/// loss (mean of the samples strictly beyond the VaR order statistic).
pub fn var_etl(samples: &LossSamples, alphas: &[f64]) -> Result<RiskReport> {
    if samples.losses.is_empty() {
        return Err(Error::argument("no loss samples".to_string()));
    }
    if alphas.iter().any(|a| !(0.0 < *a && *a < 1.0)) {
        return Err(Error::argument("quantile levels must lie in (0, 1)".to_string()));
    }
    let n = samples.losses.len();
    let mut sorted = samples.losses.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let var_of_mean =
        sorted.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (n.max(2) - 1) as f64;
    let mean_se = (var_of_mean / n as f64).sqrt();

    // batch the trials for quantile standard errors
    let batches = 16;
    let batched: Option<Vec<Vec<f64>>> = if n >= batches * 64 {
        let size = n / batches;
        Some(
            (0..batches)
                .map(|b| {
                    let mut chunk = samples.losses[b * size..(b + 1) * size].to_vec();
                    chunk.sort_by(|a, b| a.total_cmp(b));
                    chunk
                })
                .collect(),
        )
    } else {
        None
    };

    let measures = |data: &[f64], alpha: f64| -> (f64, f64) {
        let m = data.len();
        let idx = ((alpha * m as f64).ceil() as usize).clamp(1, m) - 1;
        let var = data[idx];
        let tail = &data[idx + 1..];
        let etl = if tail.is_empty() {
            var
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        };
        (var, etl.max(var))
    };

    let rows = alphas
        .iter()
        .map(|&alpha| {
            let (var, etl) = measures(&sorted, alpha);
            let tail_count = n - ((alpha * n as f64).ceil() as usize).clamp(1, n);
            let (var_se, etl_se) = match &batched {
                Some(chunks) => {
                    let vals: Vec<(f64, f64)> =
                        chunks.iter().map(|c| measures(c, alpha)).collect();
                    let se = |take: &dyn Fn(&(f64, f64)) -> f64| {
                        let m = vals.iter().map(take).sum::<f64>() / vals.len() as f64;
                        let var = vals
                            .iter()
                            .map(|v| (take(v) - m) * (take(v) - m))
                            .sum::<f64>()
                            / (vals.len() - 1) as f64;
                        (var / vals.len() as f64).sqrt()
                    };
                    (Some(se(&|v| v.0)), Some(se(&|v| v.1)))
                }
                None => (None, None),
            };
            RiskRow {
                alpha,
                var,
                etl,
                var_se,
                etl_se,
                thin_tail_warning: tail_count < 20,
            }
        })
        .collect();
    Ok(RiskReport {
        rows,
        mean_loss: mean,
        mean_loss_se: mean_se,
        nondefault_ratio: samples.nondefault_ratio,
        trials: n,
    })
}

/// Risk deviation of a finite-N mixture run from its fixed-covariance
/// twin: (VaR_N - VaR_∞)/VaR_N per quantile, and likewise for ETL.
///
/// Both runs share the seed so the comparison uses common random numbers.
pub fn compare_var_underestimation(
    config: &SimulationConfig,
    alphas: &[f64],
) -> Result<Vec<DeviationRow>> {
    if !matches!(config.dynamics, Dynamics::Mixture { .. }) {
        return Err(Error::argument(
            "underestimation comparison needs mixture dynamics as the reference".to_string(),
        ));
    }
    let frozen = SimulationConfig {
        dynamics: Dynamics::FixedCovariance,
        ..config.clone()
    };
    let report_n = var_etl(&run_losses(config)?, alphas)?;
    let report_inf = var_etl(&run_losses(&frozen)?, alphas)?;
    Ok(deviation_rows(&report_n, &report_inf))
}

/// Risk deviation of an alternative covariance description from the
/// reference (e.g. effective correlation vs the full empirical matrix).
pub fn compare_effective_vs_empirical(
    reference: &SimulationConfig,
    alternative: &SimulationConfig,
    alphas: &[f64],
) -> Result<Vec<DeviationRow>> {
    if reference.trials != alternative.trials {
        return Err(Error::argument("comparison runs need equal trial counts".to_string()));
    }
    let report_ref = var_etl(&run_losses(reference)?, alphas)?;
    let report_alt = var_etl(&run_losses(alternative)?, alphas)?;
    Ok(deviation_rows(&report_ref, &report_alt))
}

fn deviation_rows(reference: &RiskReport, other: &RiskReport) -> Vec<DeviationRow> {
    reference
        .rows
        .iter()
        .zip(&other.rows)
        .map(|(r, o)| DeviationRow {
            alpha: r.alpha,
            var_reference: r.var,
            var_other: o.var,
            var_rel_deviation: if r.var != 0.0 {
                (r.var - o.var) / r.var
            } else {
                0.0
            },
            etl_reference: r.etl,
            etl_other: o.etl,
            etl_rel_deviation: if r.etl != 0.0 {
                (r.etl - o.etl) / r.etl
            } else {
                0.0
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::CorrelationMatrix;
    use crate::merton::default_probability;
    use crate::special::norm_cdf;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn effective_config(
        k: usize,
        c: f64,
        rho: f64,
        mu: f64,
        leverage: f64,
        t: f64,
        trials: usize,
        seed: u64,
        dynamics: Dynamics,
    ) -> SimulationConfig {
        SimulationConfig {
            trials,
            seed,
            dynamics,
            covariance: CovarianceSource::Effective {
                c,
                vols: vec![rho; k],
            },
            portfolio: PortfolioSpec::homogeneous(k, 100.0 * leverage, 100.0, mu, rho, t)
                .unwrap(),
        }
    }

    #[test]
    fn zero_volatility_is_deterministic() {
        let config = effective_config(
            3,
            0.0,
            0.0,
            0.05,
            0.75,
            2.0,
            4,
            9,
            Dynamics::FixedCovariance,
        );
        let values = simulate_terminal_values(&config, 0..4).unwrap();
        let expect = 100.0 * (0.05f64 * 2.0).exp();
        for trial in values {
            for v in trial {
                assert_relative_eq!(v, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn default_frequency_matches_merton_probability() {
        let config = effective_config(
            1,
            0.0,
            0.35,
            0.17,
            0.75,
            1.0,
            1_000_000,
            42,
            Dynamics::FixedCovariance,
        );
        let samples = run_losses(&config).unwrap();
        let freq = 1.0 - samples.nondefault_ratio;
        let p = default_probability(&config.portfolio, 0).unwrap();
        let se = (p * (1.0 - p) / config.trials as f64).sqrt();
        assert!(
            (freq - p).abs() < 3.0 * se,
            "freq {freq} vs p {p} (3se = {})",
            3.0 * se
        );
    }

    #[test]
    fn mixture_inflates_product_moments() {
        // with c = 0 the product r1 r2 has mean 0 either way, but the
        // shared volatility factor fattens its second moment
        let trials = 200_000;
        let second_moment = |dynamics: Dynamics, seed: u64| -> f64 {
            let config = effective_config(2, 0.0, 0.03, 0.0, 0.75, 1.0, trials, seed, dynamics);
            let sim_values = simulate_terminal_values(&config, 0..trials).unwrap();
            let t = 1.0f64;
            let drift = (0.0 - 0.5 * 0.03f64 * 0.03) * t;
            sim_values
                .iter()
                .map(|v| {
                    let r1 = (v[0] / 100.0).ln() - drift;
                    let r2 = (v[1] / 100.0).ln() - drift;
                    (r1 * r2) * (r1 * r2)
                })
                .sum::<f64>()
                / trials as f64
        };
        let fixed = second_moment(Dynamics::FixedCovariance, 7);
        let mixed = second_moment(Dynamics::Mixture { n: 5.0 }, 7);
        // E[(r1 r2)²] = sigma⁴ E[(z/N)²] = sigma⁴ (1 + 2/N)
        assert!(
            mixed > fixed * 1.2,
            "mixture second moment {mixed} vs fixed {fixed}"
        );
    }

    #[test]
    fn tiny_leverage_never_defaults() {
        let config = effective_config(
            5,
            0.3,
            0.02,
            0.001,
            1e-6,
            252.0,
            2000,
            3,
            Dynamics::FixedCovariance,
        );
        let samples = run_losses(&config).unwrap();
        assert_eq!(samples.nondefault_ratio, 1.0);
        assert!(samples.losses.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn nondefault_ratios_match_drift_sweep_anchors() {
        // day-denominated drift sweep with the published expectations:
        // the quoted drifts are expected log returns, so the GBM drift is
        // mu + rho²/2
        let t_days = 252.0;
        let rho = 0.02;
        let run = |mu_log: f64, seed: u64| -> f64 {
            let mu = mu_log + 0.5 * rho * rho;
            let config = effective_config(
                50,
                0.3,
                rho,
                mu,
                0.75,
                t_days,
                200_000,
                seed,
                Dynamics::FixedCovariance,
            );
            run_losses(&config).unwrap().nondefault_ratio
        };
        let high = run(1e-3, 11);
        let mid = run(3e-4, 12);
        let neg = run(-3e-3, 13);
        assert!((high - 0.391).abs() < 0.02, "high-drift ratio {high}");
        assert!((mid - 0.128).abs() < 0.02, "mid-drift ratio {mid}");
        assert!(neg < 0.005, "negative-drift ratio {neg}");
    }

    #[test]
    fn empirical_source_matches_effective_for_same_structure() {
        // identical covariance expressed both ways, same seed
        let k = 4;
        let rho = 0.25;
        let c = 0.3;
        let corr = CorrelationMatrix::equicorrelated(k, c).unwrap();
        let cov = CovarianceMatrix::from_vols_and_correlation(&[rho; 4], &corr).unwrap();
        let portfolio = PortfolioSpec::homogeneous(k, 75.0, 100.0, 0.1, rho, 1.0).unwrap();
        let base = SimulationConfig {
            trials: 100_000,
            seed: 5,
            dynamics: Dynamics::FixedCovariance,
            covariance: CovarianceSource::Effective {
                c,
                vols: vec![rho; k],
            },
            portfolio: portfolio.clone(),
        };
        let emp = SimulationConfig {
            covariance: CovarianceSource::Empirical(cov),
            ..base.clone()
        };
        let r1 = var_etl(&run_losses(&base).unwrap(), &[0.99]).unwrap();
        let r2 = var_etl(&run_losses(&emp).unwrap(), &[0.99]).unwrap();
        // same law, different factorization: distributions agree
        assert_relative_eq!(r1.mean_loss, r2.mean_loss, max_relative = 0.02);
        assert_relative_eq!(r1.rows[0].var, r2.rows[0].var, max_relative = 0.03);
    }

    #[test]
    fn mean_loss_converges_to_put_value() {
        // homogeneous fixed covariance: E[L] equals the per-contract
        // expected loss from the log-normal closed form
        let (mu, rho, t, lev) = (0.17f64, 0.35f64, 1.0f64, 0.75f64);
        let config = effective_config(10, 0.28, rho, mu, lev, t, 400_000, 17,
            Dynamics::FixedCovariance);
        let samples = run_losses(&config).unwrap();
        let report = var_etl(&samples, &[0.99]).unwrap();
        let d = ((lev.recip()).ln() + (mu - 0.5 * rho * rho) * t) / (rho * t.sqrt());
        let expect = norm_cdf(-d) - (1.0 / lev) * (mu * t).exp() * norm_cdf(-d - rho * t.sqrt());
        assert!(
            (report.mean_loss - expect).abs() < 4.0 * report.mean_loss_se,
            "mean {} vs analytic {expect} (se {})",
            report.mean_loss,
            report.mean_loss_se
        );
    }

    #[test]
    fn var_etl_all_zero_and_order_statistics() {
        let zeros = LossSamples {
            losses: vec![0.0; 1000],
            nondefault_ratio: 1.0,
            seed: 0,
        };
        let report = var_etl(&zeros, &[0.99, 0.999]).unwrap();
        assert_eq!(report.rows[0].var, 0.0);
        assert_eq!(report.rows[0].etl, 0.0);

        // samples 0.01..=1.00: VaR_.99 is the 99th order statistic, the
        // tail beyond it is the single largest sample
        let samples = LossSamples {
            losses: (1..=100).map(|i| 0.01 * i as f64).collect(),
            nondefault_ratio: 0.0,
            seed: 0,
        };
        let report = var_etl(&samples, &[0.99]).unwrap();
        assert_relative_eq!(report.rows[0].var, 0.99, epsilon = 1e-12);
        assert_relative_eq!(report.rows[0].etl, 1.00, epsilon = 1e-12);
        assert!(report.rows[0].thin_tail_warning);
    }

    #[test]
    fn etl_dominates_var_and_both_monotone() {
        let mut rng = crate::rng::substream(23, 0);
        let losses: Vec<f64> = (0..5000).map(|_| rng.random::<f64>().powi(3)).collect();
        let samples = LossSamples {
            losses,
            nondefault_ratio: 0.0,
            seed: 23,
        };
        let alphas = [0.9, 0.95, 0.99, 0.995];
        let report = var_etl(&samples, &alphas).unwrap();
        for w in report.rows.windows(2) {
            assert!(w[1].var >= w[0].var);
            assert!(w[1].etl >= w[0].etl);
        }
        for row in &report.rows {
            assert!(row.etl >= row.var);
        }
    }

    #[test]
    fn losses_are_seed_deterministic_and_extension_stable() {
        let config = effective_config(
            5,
            0.3,
            0.02,
            0.001,
            0.75,
            252.0,
            500,
            77,
            Dynamics::Mixture { n: 5.0 },
        );
        let a = run_losses(&config).unwrap();
        let b = run_losses(&config).unwrap();
        assert_eq!(a.losses, b.losses);
        // running more trials must not change earlier ones
        let longer = SimulationConfig {
            trials: 800,
            ..config.clone()
        };
        let c = run_losses(&longer).unwrap();
        assert_eq!(&c.losses[..500], &a.losses[..]);
        // different seed, different draws
        let other = SimulationConfig {
            seed: 78,
            ..config
        };
        assert_ne!(run_losses(&other).unwrap().losses, a.losses);
    }

    #[test]
    fn underestimation_deviation_zero_against_itself() {
        let config = effective_config(
            4,
            0.2,
            0.03,
            0.001,
            0.75,
            252.0,
            20_000,
            31,
            Dynamics::Mixture { n: 8.0 },
        );
        let frozen = SimulationConfig {
            dynamics: Dynamics::FixedCovariance,
            ..config.clone()
        };
        let rows = compare_effective_vs_empirical(&frozen, &frozen, &[0.99, 0.999]).unwrap();
        for row in rows {
            assert_eq!(row.var_rel_deviation, 0.0);
            assert_eq!(row.etl_rel_deviation, 0.0);
        }
        // mixture vs frozen twin: heavier tail means positive deviation
        let dev = compare_var_underestimation(&config, &[0.999]).unwrap();
        assert!(dev[0].var_rel_deviation > 0.0, "{:?}", dev[0]);
    }

    #[test]
    fn nondefault_ratio_against_independence_bound() {
        // c = 0: joint no-default equals the product of marginals;
        // positive c raises it
        let trials = 300_000;
        let k = 10;
        let base = effective_config(
            k,
            0.0,
            0.3,
            0.05,
            0.75,
            1.0,
            trials,
            51,
            Dynamics::FixedCovariance,
        );
        let p = default_probability(&base.portfolio, 0).unwrap();
        let bound = (1.0 - p).powi(k as i32);
        let independent = run_losses(&base).unwrap().nondefault_ratio;
        let se = (bound * (1.0 - bound) / trials as f64).sqrt();
        assert!(
            (independent - bound).abs() < 4.0 * se,
            "independent {independent} vs bound {bound}"
        );
        let correlated = effective_config(
            k,
            0.4,
            0.3,
            0.05,
            0.75,
            1.0,
            trials,
            52,
            Dynamics::FixedCovariance,
        );
        let ratio = run_losses(&correlated).unwrap().nondefault_ratio;
        assert!(
            ratio > bound + 4.0 * se,
            "correlated ratio {ratio} should exceed {bound}"
        );
    }

    #[test]
    fn streaming_quantile_tracks_exact_order_statistics() {
        let mut rng = crate::rng::substream(71, 0);
        let losses: Vec<f64> = (0..200_000).map(|_| rng.random::<f64>().powi(3)).collect();
        for alpha in [0.9, 0.99, 0.999] {
            let mut tracker = StreamingQuantile::new(alpha).unwrap();
            for &l in &losses {
                tracker.observe(l);
            }
            let mut sorted = losses.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let exact = sorted[((alpha * sorted.len() as f64).ceil() as usize) - 1];
            let rel = (tracker.estimate() - exact).abs() / exact;
            assert!(
                rel < 0.02,
                "alpha {alpha}: streamed {} vs exact {exact} ({rel:.4} apart)",
                tracker.estimate()
            );
        }
    }

    #[test]
    fn streaming_run_close_to_stored_run() {
        let config = effective_config(
            10,
            0.3,
            0.02,
            0.001,
            0.75,
            252.0,
            120_000,
            81,
            Dynamics::Mixture { n: 6.0 },
        );
        let streamed = run_streaming_quantiles(&config, &[0.99]).unwrap();
        let exact = var_etl(&run_losses(&config).unwrap(), &[0.99]).unwrap();
        let rel = (streamed[0].1 - exact.rows[0].var).abs() / exact.rows[0].var;
        assert!(rel < 0.03, "streamed {} vs exact {}", streamed[0].1, exact.rows[0].var);
    }

    #[test]
    fn rejects_inconsistent_vols() {
        let portfolio = PortfolioSpec::homogeneous(3, 75.0, 100.0, 0.1, 0.3, 1.0).unwrap();
        let config = SimulationConfig {
            trials: 10,
            seed: 1,
            dynamics: Dynamics::FixedCovariance,
            covariance: CovarianceSource::Effective {
                c: 0.2,
                vols: vec![0.25; 3],
            },
            portfolio,
        };
        assert!(matches!(run_losses(&config), Err(Error::Contract(_))));
    }
}
