//! Concurrent losses of two credit portfolios on one correlated market.
//!
//! Two non-overlapping books are simulated on the same market path each
//! trial; the dependence of their losses is summarized by the empirical
//! copula density (a normalized two-dimensional histogram of the rank
//! transformed loss pairs) and compared against the Gaussian copula
//! implied by the Pearson correlation of the raw losses. Named scenarios
//! reproduce the drift sweeps, heterogeneous-volatility books and the
//! two-market split; averaged scenarios redraw book parameters per
//! repetition and report the dispersion across repetitions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::spd_sqrt;
use crate::market::CorrelationMatrix;
use crate::merton::{contract_loss, PortfolioSpec};
use crate::monte_carlo::{Dynamics, LossSamples};
use crate::rng::substream;
use crate::special::{bivariate_norm_cdf, inv_norm_cdf};

/// Correlation structure of the market carrying both books.
#[derive(Debug, Clone)]
pub enum MarketModel {
    /// Every pair of assets shares the effective correlation c.
    Effective { c: f64 },
    /// Book one lives in the first block, book two in the second;
    /// intra-block correlation exceeds the inter-block one.
    TwoBlock { c_intra: f64, c_inter: f64 },
    /// Explicit market correlation; the books pick disjoint index sets.
    Empirical {
        corr: CorrelationMatrix,
        indices1: Vec<usize>,
        indices2: Vec<usize>,
    },
}

/// Two equal-size, non-overlapping portfolios plus their market.
#[derive(Debug, Clone)]
pub struct TwoPortfolioSpec {
    pub market: MarketModel,
    pub book1: PortfolioSpec,
    pub book2: PortfolioSpec,
    pub dynamics: Dynamics,
}

impl TwoPortfolioSpec {
    fn validate(&self) -> Result<()> {
        if self.book1.len() != self.book2.len() {
            return Err(Error::argument(format!(
                "books must have equal size, got {} and {}",
                self.book1.len(),
                self.book2.len()
            )));
        }
        if self.book1.maturity() != self.book2.maturity() {
            return Err(Error::argument("books must share the maturity".to_string()));
        }
        match &self.market {
            MarketModel::Effective { c } => {
                if !(0.0..1.0).contains(c) {
                    return Err(Error::domain(format!("effective correlation {c} outside [0, 1)")));
                }
            }
            MarketModel::TwoBlock { c_intra, c_inter } => {
                if !(0.0..1.0).contains(c_intra) || !(0.0..1.0).contains(c_inter) {
                    return Err(Error::domain("block correlations must lie in [0, 1)".to_string()));
                }
                if c_inter > c_intra {
                    return Err(Error::domain(format!(
                        "inter-block correlation {c_inter} exceeds intra-block {c_intra}"
                    )));
                }
            }
            MarketModel::Empirical {
                corr,
                indices1,
                indices2,
            } => {
                let k = self.book1.len();
                if indices1.len() != k || indices2.len() != k {
                    return Err(Error::argument(format!(
                        "index sets must have the book size {k}"
                    )));
                }
                let dim = corr.dim();
                if indices1.iter().chain(indices2).any(|i| *i >= dim) {
                    return Err(Error::argument(format!(
                        "index beyond the market dimension {dim}"
                    )));
                }
                let set1: std::collections::BTreeSet<usize> = indices1.iter().copied().collect();
                if indices2.iter().any(|i| set1.contains(i)) {
                    return Err(Error::argument(
                        "index sets overlap: a contract sits in both portfolios".to_string(),
                    ));
                }
            }
        }
        if let Dynamics::Mixture { n } = self.dynamics {
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::domain(format!("mixture N must be finite and > 0, got {n}")));
            }
        }
        Ok(())
    }
}

/// Per-trial losses of both books from shared market paths.
pub fn joint_loss_samples(
    spec: &TwoPortfolioSpec,
    trials: usize,
    seed: u64,
) -> Result<(LossSamples, LossSamples)> {
    spec.validate()?;
    if trials == 0 {
        return Err(Error::argument("need at least one trial".to_string()));
    }
    let k = spec.book1.len();
    let t = spec.book1.maturity();
    let sqrt_t = t.sqrt();

    // per-book deterministic pieces
    let prep = |book: &PortfolioSpec| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let drift: Vec<f64> = book
            .drifts()
            .iter()
            .zip(book.volatilities())
            .map(|(mu, rho)| (mu - 0.5 * rho * rho) * t)
            .collect();
        (
            drift,
            book.volatilities().to_vec(),
            book.initial_values().to_vec(),
            book.weights(),
        )
    };
    let (drift1, vol1, init1, w1) = prep(&spec.book1);
    let (drift2, vol2, init2, w2) = prep(&spec.book2);
    let faces1 = spec.book1.face_values();
    let faces2 = spec.book2.face_values();

    // market factorization for the empirical case, over the union indices
    let factored: Option<(DMatrix<f64>, Vec<usize>, Vec<usize>)> = match &spec.market {
        MarketModel::Empirical {
            corr,
            indices1,
            indices2,
        } => {
            let union: Vec<usize> = indices1.iter().chain(indices2).copied().collect();
            let m = union.len();
            let mut sub = DMatrix::zeros(m, m);
            for (a, &ia) in union.iter().enumerate() {
                for (b, &ib) in union.iter().enumerate() {
                    sub[(a, b)] = corr.entries()[(ia, ib)];
                }
            }
            let b = spd_sqrt(&sub)?;
            Some((b, (0..k).collect(), (k..2 * k).collect()))
        }
        _ => None,
    };

    let chi = match spec.dynamics {
        Dynamics::Mixture { n } => {
            Some(ChiSquared::new(n).map_err(|e| Error::argument(format!("chi-squared({n}): {e}")))?)
        }
        Dynamics::FixedCovariance => None,
    };
    let n_value = match spec.dynamics {
        Dynamics::Mixture { n } => n,
        Dynamics::FixedCovariance => 1.0,
    };

    let mut losses1 = Vec::with_capacity(trials);
    let mut losses2 = Vec::with_capacity(trials);
    let mut nondefault1 = 0usize;
    let mut nondefault2 = 0usize;
    let mut shocks1 = vec![0.0f64; k];
    let mut shocks2 = vec![0.0f64; k];
    for trial in 0..trials {
        let mut rng = substream(seed, trial as u64);
        let vol_scale = match &chi {
            Some(chi) => (chi.sample(&mut rng) / n_value).sqrt(),
            None => 1.0,
        };
        match &spec.market {
            MarketModel::Effective { c } => {
                let g0: f64 = StandardNormal.sample(&mut rng);
                let sqrt_c = c.sqrt();
                let sqrt_1mc = (1.0 - c).sqrt();
                for s in shocks1.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *s = sqrt_c * g0 + sqrt_1mc * g;
                }
                for s in shocks2.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *s = sqrt_c * g0 + sqrt_1mc * g;
                }
            }
            MarketModel::TwoBlock { c_intra, c_inter } => {
                let g_market: f64 = StandardNormal.sample(&mut rng);
                let g_block1: f64 = StandardNormal.sample(&mut rng);
                let g_block2: f64 = StandardNormal.sample(&mut rng);
                let w_market = c_inter.sqrt();
                let w_block = (c_intra - c_inter).sqrt();
                let w_idio = (1.0 - c_intra).sqrt();
                for s in shocks1.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *s = w_market * g_market + w_block * g_block1 + w_idio * g;
                }
                for s in shocks2.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *s = w_market * g_market + w_block * g_block2 + w_idio * g;
                }
            }
            MarketModel::Empirical { .. } => {
                let (b, sel1, sel2) = factored.as_ref().unwrap();
                let eps = DVector::from_fn(b.nrows(), |_, _| StandardNormal.sample(&mut rng));
                let joint = b * eps;
                for (s, &idx) in shocks1.iter_mut().zip(sel1) {
                    *s = joint[idx];
                }
                for (s, &idx) in shocks2.iter_mut().zip(sel2) {
                    *s = joint[idx];
                }
            }
        }
        let mut loss1 = 0.0;
        let mut loss2 = 0.0;
        for i in 0..k {
            let v1 = init1[i] * (drift1[i] + vol_scale * vol1[i] * sqrt_t * shocks1[i]).exp();
            loss1 += w1[i] * contract_loss(v1, faces1[i]);
            let v2 = init2[i] * (drift2[i] + vol_scale * vol2[i] * sqrt_t * shocks2[i]).exp();
            loss2 += w2[i] * contract_loss(v2, faces2[i]);
        }
        if loss1 == 0.0 {
            nondefault1 += 1;
        }
        if loss2 == 0.0 {
            nondefault2 += 1;
        }
        losses1.push(loss1.clamp(0.0, 1.0));
        losses2.push(loss2.clamp(0.0, 1.0));
    }
    Ok((
        LossSamples {
            losses: losses1,
            nondefault_ratio: nondefault1 as f64 / trials as f64,
            seed,
        },
        LossSamples {
            losses: losses2,
            nondefault_ratio: nondefault2 as f64 / trials as f64,
            seed,
        },
    ))
}

/// Pearson correlation of two equally long samples.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::argument("need two samples of equal length >= 2".to_string()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSeries {
            asset: if sxx == 0.0 { "first margin" } else { "second margin" }.to_string(),
            detail: "zero variance".to_string(),
        });
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// How tied values are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TieRule {
    /// Tied blocks receive a random permutation of their rank positions
    /// (seeded); keeps the rank margins exactly uniform. The loss atom at
    /// zero makes this the default.
    JitterSeeded,
    /// Tied values share their average rank; simple but produces banding
    /// at the atom.
    MidRank,
}

/// Copula density histogram on a B x B grid over the unit square.
#[derive(Debug, Clone, Serialize)]
pub struct CopulaHistogram {
    /// Row-major density values; cell (i, j) covers
    /// [i/B, (i+1)/B) x [j/B, (j+1)/B).
    pub density: Vec<f64>,
    pub bins: usize,
    pub sample_count: usize,
}

impl CopulaHistogram {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.density[i * self.bins + j]
    }

    /// Probability mass of cell (i, j).
    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.value(i, j) / (self.bins * self.bins) as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() / (self.bins * self.bins) as f64
    }

    /// Mass of one row of cells (margin check).
    pub fn row_mass(&self, i: usize) -> f64 {
        (0..self.bins).map(|j| self.mass(i, j)).sum()
    }

    pub fn column_mass(&self, j: usize) -> f64 {
        (0..self.bins).map(|i| self.mass(i, j)).sum()
    }

    pub fn transposed(&self) -> CopulaHistogram {
        let mut density = vec![0.0; self.density.len()];
        for i in 0..self.bins {
            for j in 0..self.bins {
                density[j * self.bins + i] = self.value(i, j);
            }
        }
        CopulaHistogram {
            density,
            bins: self.bins,
            sample_count: self.sample_count,
        }
    }
}

/// Ranks in 0..n-1 with ties resolved by the given rule. The jitter
/// stream is keyed by a content hash of the values, so identical margins
/// get identical ranks regardless of argument order.
fn rank_margin(values: &[f64], rule: TieRule, seed: u64) -> Result<Vec<f64>> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    if values[order[0]] == values[order[n - 1]] {
        return Err(Error::DegenerateSeries {
            asset: "copula margin".to_string(),
            detail: "all values equal".to_string(),
        });
    }
    let mut ranks = vec![0.0; n];
    let mut rng = substream(seed ^ fnv64(values), 0x7 & 0xFFFF_FFFF);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        match rule {
            TieRule::MidRank => {
                let mid = 0.5 * (start + end - 1) as f64;
                for &idx in &order[start..end] {
                    ranks[idx] = mid;
                }
            }
            TieRule::JitterSeeded => {
                // Fisher-Yates over the tied block's rank positions
                let mut positions: Vec<usize> = (start..end).collect();
                for i in (1..positions.len()).rev() {
                    let j = rng.random_range(0..=i);
                    positions.swap(i, j);
                }
                for (slot, &idx) in order[start..end].iter().enumerate() {
                    ranks[idx] = positions[slot] as f64;
                }
            }
        }
        start = end;
    }
    Ok(ranks)
}

fn fnv64(values: &[f64]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
    }
    hash
}

/// Empirical copula density of a paired sample: rank-transform both
/// margins to (rank + 1/2)/n and bin into B x B cells.
pub fn empirical_copula(
    x: &[f64],
    y: &[f64],
    bins: usize,
    rule: TieRule,
    seed: u64,
) -> Result<CopulaHistogram> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::argument("need paired samples of equal length".to_string()));
    }
    if bins < 2 {
        return Err(Error::argument("need at least 2 bins".to_string()));
    }
    let n = x.len();
    let rx = rank_margin(x, rule, seed).map_err(|e| rename_margin(e, "first"))?;
    let ry = rank_margin(y, rule, seed).map_err(|e| rename_margin(e, "second"))?;
    let mut counts = vec![0usize; bins * bins];
    for (a, b) in rx.iter().zip(&ry) {
        let u = (a + 0.5) / n as f64;
        let v = (b + 0.5) / n as f64;
        let i = ((u * bins as f64) as usize).min(bins - 1);
        let j = ((v * bins as f64) as usize).min(bins - 1);
        counts[i * bins + j] += 1;
    }
    let scale = (bins * bins) as f64 / n as f64;
    Ok(CopulaHistogram {
        density: counts.iter().map(|c| *c as f64 * scale).collect(),
        bins,
        sample_count: n,
    })
}

fn rename_margin(e: Error, which: &str) -> Error {
    match e {
        Error::DegenerateSeries { detail, .. } => Error::DegenerateSeries {
            asset: format!("{which} margin"),
            detail,
        },
        other => other,
    }
}

/// Bin-integrated Gaussian copula density for a given loss correlation.
pub fn gaussian_copula_histogram(correlation: f64, bins: usize) -> Result<CopulaHistogram> {
    if !(-1.0 < correlation && correlation < 1.0) {
        return Err(Error::domain(format!(
            "Gaussian copula needs |correlation| < 1, got {correlation}"
        )));
    }
    if bins < 2 {
        return Err(Error::argument("need at least 2 bins".to_string()));
    }
    // quantile edges with exact mirror symmetry
    let mut edges = vec![0.0f64; bins + 1];
    edges[0] = -40.0;
    edges[bins] = 40.0;
    for i in 1..=bins / 2 {
        let z = inv_norm_cdf(i as f64 / bins as f64)?;
        edges[i] = z;
        edges[bins - i] = -z;
    }
    if bins % 2 == 0 {
        edges[bins / 2] = 0.0;
    }
    // CDF values on the edge lattice
    let mut cdf = vec![0.0f64; (bins + 1) * (bins + 1)];
    for i in 0..=bins {
        for j in 0..=bins {
            // exploit symmetry in (i, j) to halve the integrations
            if j < i {
                cdf[i * (bins + 1) + j] = cdf[j * (bins + 1) + i];
            } else {
                cdf[i * (bins + 1) + j] = bivariate_norm_cdf(edges[i], edges[j], correlation)?;
            }
        }
    }
    let at = |i: usize, j: usize| cdf[i * (bins + 1) + j];
    let scale = (bins * bins) as f64;
    let mut density = vec![0.0; bins * bins];
    for i in 0..bins {
        for j in 0..bins {
            let mass = at(i + 1, j + 1) - at(i, j + 1) - at(i + 1, j) + at(i, j);
            density[i * bins + j] = mass.max(0.0) * scale;
        }
    }
    Ok(CopulaHistogram {
        density,
        bins,
        sample_count: 0,
    })
}

/// Mass and deviation summary of one quantile corner box.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CornerBox {
    pub empirical_mass: f64,
    pub reference_mass: f64,
    /// empirical - reference.
    pub deviation: f64,
    /// Standard error of the deviation (across repetitions when
    /// available, binomial otherwise).
    pub se: f64,
}

/// Deviations of the four [0, 0.1]-quantile corner boxes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CornerStats {
    /// Both losses small: quantiles in [0, 0.1]^2.
    pub lower_lower: CornerBox,
    /// First small, second large.
    pub lower_upper: CornerBox,
    pub upper_lower: CornerBox,
    /// Both losses extreme: quantiles in [0.9, 1]^2.
    pub upper_upper: CornerBox,
}

/// Per-bin difference between an empirical copula and its Gaussian
/// reference.
#[derive(Debug, Clone, Serialize)]
pub struct DeviationMap {
    /// Row-major empirical - reference density differences.
    pub delta: Vec<f64>,
    pub bins: usize,
    /// Pearson correlation of the raw losses that fixed the reference.
    pub loss_correlation: f64,
    pub corners: CornerStats,
}

fn corner_bins(bins: usize) -> usize {
    (bins / 10).max(1)
}

fn box_mass(hist: &CopulaHistogram, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
    let mut acc = 0.0;
    for i in rows {
        for j in cols.clone() {
            acc += hist.mass(i, j);
        }
    }
    acc
}

/// Elementwise deviation map plus corner summaries.
pub fn deviation_map(
    empirical: &CopulaHistogram,
    reference: &CopulaHistogram,
    loss_correlation: f64,
) -> Result<DeviationMap> {
    if empirical.bins != reference.bins {
        return Err(Error::argument(format!(
            "bin counts differ: {} vs {}",
            empirical.bins, reference.bins
        )));
    }
    let bins = empirical.bins;
    let delta: Vec<f64> = empirical
        .density
        .iter()
        .zip(&reference.density)
        .map(|(e, r)| e - r)
        .collect();
    let cb = corner_bins(bins);
    let n = empirical.sample_count.max(1) as f64;
    let corner = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        let emp = box_mass(empirical, rows.clone(), cols.clone());
        let reference_mass = box_mass(reference, rows, cols);
        let p = reference_mass.clamp(1e-12, 1.0 - 1e-12);
        CornerBox {
            empirical_mass: emp,
            reference_mass,
            deviation: emp - reference_mass,
            se: (p * (1.0 - p) / n).sqrt(),
        }
    };
    Ok(DeviationMap {
        corners: CornerStats {
            lower_lower: corner(0..cb, 0..cb),
            lower_upper: corner(0..cb, bins - cb..bins),
            upper_lower: corner(bins - cb..bins, 0..cb),
            upper_upper: corner(bins - cb..bins, bins - cb..bins),
        },
        delta,
        bins,
        loss_correlation,
    })
}

// --- named scenarios ---

/// Named simulation setups for the concurrent-loss studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scenario {
    /// c = 0, fixed covariance: independence copula.
    C0Gaussian,
    /// c = 0 with chi-squared(5) covariance fluctuations.
    C0Mixture,
    /// Drift sweep at c = 0.3, fixed covariance.
    DriftHigh,
    DriftMid,
    DriftNeg,
    /// Volatilities drawn uniformly from (0, 0.25) per contract.
    HeteroVol,
    /// Two-block market standing in for two coupled exchanges.
    TwoMarket,
}

impl Scenario {
    pub fn parse(name: &str) -> Result<Scenario> {
        match name {
            "c0-gaussian" => Ok(Scenario::C0Gaussian),
            "c0-mixture" => Ok(Scenario::C0Mixture),
            "drift-high" => Ok(Scenario::DriftHigh),
            "drift-mid" => Ok(Scenario::DriftMid),
            "drift-neg" => Ok(Scenario::DriftNeg),
            "hetero-vol" => Ok(Scenario::HeteroVol),
            "two-market" => Ok(Scenario::TwoMarket),
            other => Err(Error::argument(format!(
                "unknown scenario `{other}`; known: {}",
                Scenario::ALL.map(|s| s.name()).join(", ")
            ))),
        }
    }

    pub const ALL: [Scenario; 7] = [
        Scenario::C0Gaussian,
        Scenario::C0Mixture,
        Scenario::DriftHigh,
        Scenario::DriftMid,
        Scenario::DriftNeg,
        Scenario::HeteroVol,
        Scenario::TwoMarket,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::C0Gaussian => "c0-gaussian",
            Scenario::C0Mixture => "c0-mixture",
            Scenario::DriftHigh => "drift-high",
            Scenario::DriftMid => "drift-mid",
            Scenario::DriftNeg => "drift-neg",
            Scenario::HeteroVol => "hetero-vol",
            Scenario::TwoMarket => "two-market",
        }
    }

    /// Averaged scenarios redraw book parameters every repetition.
    pub fn is_averaged(&self) -> bool {
        matches!(self, Scenario::HeteroVol | Scenario::TwoMarket)
    }
}

/// Knobs of a scenario run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScenarioSettings {
    pub trials: usize,
    pub seed: u64,
    pub bins: usize,
    /// Independent repetitions with redrawn book parameters; ignored
    /// (forced to 1) for the homogeneous scenarios.
    pub repetitions: usize,
    /// Contracts per book.
    pub portfolio_size: usize,
    pub tie_rule: TieRule,
}

impl Default for ScenarioSettings {
    fn default() -> Self {
        ScenarioSettings {
            trials: 100_000,
            seed: 1,
            bins: 20,
            repetitions: 1000,
            portfolio_size: 50,
            tie_rule: TieRule::JitterSeeded,
        }
    }
}

/// One trading year of days; the scenario parameters are day-based.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Full output of a scenario run.
#[derive(Debug, Clone, Serialize)]
pub struct CopulaReport {
    pub scenario: String,
    /// Mean Pearson loss correlation over repetitions.
    pub loss_correlation: f64,
    /// Standard deviation of the correlation across repetitions.
    pub correlation_dispersion: f64,
    pub nondefault_ratio_1: f64,
    pub nondefault_ratio_2: f64,
    pub repetitions: usize,
    pub trials_per_repetition: usize,
    pub empirical: CopulaHistogram,
    pub gaussian: CopulaHistogram,
    pub deviation: DeviationMap,
}

/// The quoted scenario drifts are expected log returns per day; the
/// geometric Brownian drift is therefore mu + rho²/2.
fn gbm_drift(mu_log: f64, rho: f64) -> f64 {
    mu_log + 0.5 * rho * rho
}

fn homogeneous_books(
    k: usize,
    mu_log: f64,
    rho: f64,
) -> Result<(PortfolioSpec, PortfolioSpec)> {
    let book = PortfolioSpec::homogeneous(
        k,
        75.0,
        100.0,
        gbm_drift(mu_log, rho),
        rho,
        TRADING_DAYS_PER_YEAR,
    )?;
    Ok((book.clone(), book))
}

fn drawn_books(
    k: usize,
    mu_log: &dyn Fn(&mut rand::rngs::StdRng) -> f64,
    rho: &dyn Fn(&mut rand::rngs::StdRng) -> f64,
    rng: &mut rand::rngs::StdRng,
) -> Result<(PortfolioSpec, PortfolioSpec)> {
    let mut build = || -> Result<PortfolioSpec> {
        let vols: Vec<f64> = (0..k).map(|_| rho(rng)).collect();
        let drifts: Vec<f64> = vols.iter().map(|r| gbm_drift(mu_log(rng), *r)).collect();
        PortfolioSpec::new(
            vec![75.0; k],
            vec![100.0; k],
            drifts,
            vols,
            TRADING_DAYS_PER_YEAR,
        )
    };
    Ok((build()?, build()?))
}

fn build_scenario(
    scenario: Scenario,
    k: usize,
    rng: &mut rand::rngs::StdRng,
) -> Result<TwoPortfolioSpec> {
    match scenario {
        Scenario::C0Gaussian => {
            let (book1, book2) = homogeneous_books(k, 1e-3, 0.03)?;
            Ok(TwoPortfolioSpec {
                market: MarketModel::Effective { c: 0.0 },
                book1,
                book2,
                dynamics: Dynamics::FixedCovariance,
            })
        }
        Scenario::C0Mixture => {
            let (book1, book2) = homogeneous_books(k, 1e-3, 0.03)?;
            Ok(TwoPortfolioSpec {
                market: MarketModel::Effective { c: 0.0 },
                book1,
                book2,
                dynamics: Dynamics::Mixture { n: 5.0 },
            })
        }
        Scenario::DriftHigh | Scenario::DriftMid | Scenario::DriftNeg => {
            let mu = match scenario {
                Scenario::DriftHigh => 1e-3,
                Scenario::DriftMid => 3e-4,
                _ => -3e-3,
            };
            let (book1, book2) = homogeneous_books(k, mu, 0.02)?;
            Ok(TwoPortfolioSpec {
                market: MarketModel::Effective { c: 0.3 },
                book1,
                book2,
                dynamics: Dynamics::FixedCovariance,
            })
        }
        Scenario::HeteroVol => {
            // large negative homogeneous drift, volatilities uniform in
            // (0, 0.25); with homogeneous vols this setup is exactly
            // Gaussian, the heterogeneity alone creates the asymmetry
            let (book1, book2) = drawn_books(
                k,
                &|_| -3e-3,
                &|rng| rng.random_range(1e-4..0.25),
                rng,
            )?;
            Ok(TwoPortfolioSpec {
                market: MarketModel::Effective { c: 0.3 },
                book1,
                book2,
                dynamics: Dynamics::FixedCovariance,
            })
        }
        Scenario::TwoMarket => {
            // block-correlated stand-in for books drawn from two coupled
            // exchanges: stronger correlation inside each market
            let (book1, book2) = drawn_books(
                k,
                &|rng| rng.random_range(-5e-4..5e-4),
                &|rng| rng.random_range(0.01..0.03),
                rng,
            )?;
            Ok(TwoPortfolioSpec {
                market: MarketModel::TwoBlock {
                    c_intra: 0.3,
                    c_inter: 0.1,
                },
                book1,
                book2,
                dynamics: Dynamics::FixedCovariance,
            })
        }
    }
}

/// Run a named scenario: simulate, build the empirical copula, the
/// Gaussian reference from the measured loss correlation, and the
/// deviation map. Averaged scenarios repeat with redrawn parameters and
/// average the histograms (and the references, one per repetition).
pub fn scenario_suite(scenario: Scenario, settings: &ScenarioSettings) -> Result<CopulaReport> {
    let reps = if scenario.is_averaged() {
        settings.repetitions.max(1)
    } else {
        1
    };
    if settings.trials < 100 {
        return Err(Error::argument("need at least 100 trials".to_string()));
    }
    let bins = settings.bins;
    let mut empirical_acc = vec![0.0; bins * bins];
    let mut gaussian_acc = vec![0.0; bins * bins];
    let mut correlations = Vec::with_capacity(reps);
    let mut corner_devs: Vec<[f64; 4]> = Vec::with_capacity(reps);
    let mut nondefault1 = 0.0;
    let mut nondefault2 = 0.0;
    let mut samples_total = 0usize;
    for rep in 0..reps {
        // one stream per repetition for the parameter draws, another
        // derived seed for the trials
        let mut param_rng = substream(settings.seed, 0xFFFF_0000 + rep as u64);
        let rep_seed: u64 = param_rng.random();
        let spec = build_scenario(scenario, settings.portfolio_size, &mut param_rng)?;
        let (l1, l2) = joint_loss_samples(&spec, settings.trials, rep_seed)?;
        let corr = pearson_correlation(&l1.losses, &l2.losses)?;
        correlations.push(corr);
        nondefault1 += l1.nondefault_ratio;
        nondefault2 += l2.nondefault_ratio;
        let emp = empirical_copula(&l1.losses, &l2.losses, bins, settings.tie_rule, rep_seed)?;
        let gau = gaussian_copula_histogram(corr.clamp(-0.999, 0.999), bins)?;
        for (acc, v) in empirical_acc.iter_mut().zip(&emp.density) {
            *acc += v / reps as f64;
        }
        for (acc, v) in gaussian_acc.iter_mut().zip(&gau.density) {
            *acc += v / reps as f64;
        }
        samples_total += emp.sample_count;
        // per-repetition corner deviations for dispersion-based errors
        let dev = deviation_map(&emp, &gau, corr)?;
        corner_devs.push([
            dev.corners.lower_lower.deviation,
            dev.corners.lower_upper.deviation,
            dev.corners.upper_lower.deviation,
            dev.corners.upper_upper.deviation,
        ]);
    }
    let mean_corr = correlations.iter().sum::<f64>() / reps as f64;
    let dispersion = if reps > 1 {
        (correlations
            .iter()
            .map(|c| (c - mean_corr) * (c - mean_corr))
            .sum::<f64>()
            / (reps - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    let empirical = CopulaHistogram {
        density: empirical_acc,
        bins,
        sample_count: samples_total,
    };
    let gaussian = CopulaHistogram {
        density: gaussian_acc,
        bins,
        sample_count: 0,
    };
    let mut deviation = deviation_map(&empirical, &gaussian, mean_corr)?;
    if reps >= 8 {
        // replace binomial errors with across-repetition ones
        let se_of = |idx: usize| -> f64 {
            let mean = corner_devs.iter().map(|d| d[idx]).sum::<f64>() / reps as f64;
            let var = corner_devs
                .iter()
                .map(|d| (d[idx] - mean) * (d[idx] - mean))
                .sum::<f64>()
                / (reps - 1) as f64;
            (var / reps as f64).sqrt()
        };
        deviation.corners.lower_lower.se = se_of(0);
        deviation.corners.lower_upper.se = se_of(1);
        deviation.corners.upper_lower.se = se_of(2);
        deviation.corners.upper_upper.se = se_of(3);
    }
    Ok(CopulaReport {
        scenario: scenario.name().to_string(),
        loss_correlation: mean_corr,
        correlation_dispersion: dispersion,
        nondefault_ratio_1: nondefault1 / reps as f64,
        nondefault_ratio_2: nondefault2 / reps as f64,
        repetitions: reps,
        trials_per_repetition: settings.trials,
        empirical,
        gaussian,
        deviation,
    })
}
