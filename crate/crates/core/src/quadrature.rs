//! Numerical integration rules.
//!
//! Gauss rules are built by the Golub-Welsch method: nodes and weights come
//! from the symmetric eigenproblem of the Jacobi matrix of the orthogonal
//! polynomial recurrence. An adaptive Simpson routine covers everything
//! that does not match a classical weight.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::special::ln_gamma;

/// Nodes and weights of a fixed quadrature rule.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

fn golub_welsch(diag: &[f64], offdiag: &[f64], total_weight: f64) -> GaussRule {
    let n = diag.len();
    let mut jacobi = DMatrix::zeros(n, n);
    for i in 0..n {
        jacobi[(i, i)] = diag[i];
    }
    for i in 0..n - 1 {
        jacobi[(i, i + 1)] = offdiag[i];
        jacobi[(i + 1, i)] = offdiag[i];
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], total_weight * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Generalized Gauss-Laguerre rule for ∫_0^∞ t^α e^{-t} f(t) dt, α > -1.
pub fn gauss_gen_laguerre(n: usize, alpha: f64) -> Result<GaussRule> {
    if n == 0 || alpha <= -1.0 {
        return Err(Error::argument(format!(
            "gauss_gen_laguerre needs n >= 1 and alpha > -1, got n={n}, alpha={alpha}"
        )));
    }
    let diag: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 + alpha + 1.0).collect();
    let offdiag: Vec<f64> = (1..n)
        .map(|k| ((k as f64) * (k as f64 + alpha)).sqrt())
        .collect();
    Ok(golub_welsch(&diag, &offdiag, ln_gamma(alpha + 1.0).exp()))
}

/// Gauss-Hermite rule for ∫_{-∞}^∞ e^{-x²} f(x) dx.
///
/// Nodes are found by Newton iteration on the orthonormal Hermite
/// recurrence, which stays fast and stable into the thousands of nodes
/// (the loss-density quadrature needs large rules for big portfolios).
pub fn gauss_hermite(n: usize) -> Result<GaussRule> {
    if n == 0 {
        return Err(Error::argument("gauss_hermite needs n >= 1".to_string()));
    }
    let nf = n as f64;
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    let m = n.div_ceil(2);
    // local zero spacing from the semicircle density sqrt(2n+1-z²)/π
    let spacing = |z: f64| {
        let d2 = (2.0 * nf + 1.0 - z * z).max(1.0);
        std::f64::consts::PI / d2.sqrt()
    };
    let mut z = 0.0f64;
    for i in 0..m {
        z = if i == 0 {
            (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0)
        } else {
            // step down by the local spacing, refined at the midpoint
            let s0 = spacing(z);
            z - spacing(z - 0.5 * s0)
        };
        let mut ln_pp_abs = 0.0;
        for _ in 0..200 {
            // orthonormal recurrence: p_{j+1} = z sqrt(2/(j+1)) p_j - sqrt(j/(j+1)) p_{j-1},
            // renormalized on the fly because p_n(z) ~ e^{z²/2} overflows for large rules
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            let mut ln_scale = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                if p1.abs() > 1e250 {
                    p1 *= 1e-250;
                    p2 *= 1e-250;
                    ln_scale += 250.0 * std::f64::consts::LN_10;
                }
            }
            let pp = (2.0 * nf).sqrt() * p2;
            ln_pp_abs = pp.abs().ln() + ln_scale;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        // w = 2 / p'_n(z)²; underflows to zero only where genuinely negligible
        weights[i] = (std::f64::consts::LN_2 - 2.0 * ln_pp_abs).exp();
        weights[n - 1 - i] = weights[i];
    }
    // ascending order
    nodes.reverse();
    weights.reverse();
    Ok(GaussRule { nodes, weights })
}

/// Adaptive Simpson integration of `f` over [a, b].
///
/// The tolerance is anchored to the global estimate and halved per
/// bisection; a forced minimum depth guards against narrow features that
/// the first few midpoints miss entirely. Fails with a quadrature error
/// when the evaluation budget is exhausted before reaching the tolerance.
pub fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (a, b, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // anchor the tolerance to a coarse composite estimate so sharply
    // peaked integrands do not get a spuriously tight target
    let coarse = {
        let n = 256;
        let h = (b - a) / n as f64;
        let mut acc = fa + fb;
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    };
    let tol = abs_tol.max(rel_tol * coarse.abs());
    let mut state = SimpsonState {
        evals: 258,
        worst: 0.0,
    };
    let value = simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50, 8, &mut state);
    if state.evals >= MAX_EVALS {
        return Err(Error::Quadrature {
            achieved: state.worst,
            target: abs_tol.max(rel_tol * value.abs()),
        });
    }
    Ok(sign * value)
}

const MAX_EVALS: usize = 4_000_000;

struct SimpsonState {
    evals: usize,
    worst: f64,
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    force: usize,
    state: &mut SimpsonState,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    state.evals += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let err = (left + right - whole) / 15.0;
    let done = force == 0 && err.abs() <= tol;
    if done || depth == 0 || state.evals >= MAX_EVALS {
        if err.abs() > state.worst {
            state.worst = err.abs();
        }
        return left + right + err;
    }
    let half_tol = 0.5 * tol;
    let next_force = force.saturating_sub(1);
    simpson_rec(
        f, a, m, fa, flm, fm, left, half_tol, depth - 1, next_force, state,
    ) + simpson_rec(
        f, m, b, fm, frm, fb, right, half_tol, depth - 1, next_force, state,
    )
}

/// Trapezoid integral of tabulated values.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn laguerre_integrates_polynomials_exactly() {
        // ∫ t^α e^{-t} t^k dt = Γ(α+k+1)
        for &alpha in &[0.0, 1.5, -0.5, 6.0] {
            let rule = gauss_gen_laguerre(16, alpha).unwrap();
            for k in 0..6u32 {
                let got = rule.integrate(|t| t.powi(k as i32));
                let expect = ln_gamma(alpha + k as f64 + 1.0).exp();
                assert_relative_eq!(got, expect, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn laguerre_weights_sum_to_gamma() {
        let rule = gauss_gen_laguerre(64, 2.5).unwrap();
        let total: f64 = rule.weights.iter().sum();
        assert_relative_eq!(total, ln_gamma(3.5).exp(), max_relative = 1e-12);
    }

    #[test]
    fn hermite_moments() {
        let pi_sqrt = std::f64::consts::PI.sqrt();
        for &n in &[1usize, 2, 7, 32, 501, 2048] {
            let rule = gauss_hermite(n).unwrap();
            assert_relative_eq!(rule.integrate(|_| 1.0), pi_sqrt, max_relative = 1e-11);
            if n >= 2 {
                assert_relative_eq!(
                    rule.integrate(|x| x * x),
                    0.5 * pi_sqrt,
                    max_relative = 1e-11
                );
            }
            if n >= 3 {
                assert_relative_eq!(
                    rule.integrate(|x| x.powi(4)),
                    0.75 * pi_sqrt,
                    max_relative = 1e-11
                );
                let odd = rule.integrate(|x| x.powi(3));
                assert!(odd.abs() < 1e-11);
            }
        }
    }

    #[test]
    fn hermite_gaussian_expectation() {
        // E[cos(X)] for X ~ N(0, 1/2) is exp(-1/4)
        let rule = gauss_hermite(48).unwrap();
        let got = rule.integrate(|x| x.cos()) / std::f64::consts::PI.sqrt();
        assert_relative_eq!(got, (-0.25f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn adaptive_simpson_known_integrals() {
        let got = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12, 1e-14)
            .unwrap();
        assert_relative_eq!(got, 2.0, epsilon = 1e-11);
        // a narrow Gaussian centred off the midpoint
        let got = adaptive_simpson(
            &|x: f64| (-(x - 0.3_f64).powi(2) / 2e-4).exp(),
            -5.0,
            5.0,
            1e-11,
            1e-15,
        )
        .unwrap();
        let expect = (std::f64::consts::PI * 2e-4).sqrt();
        assert_relative_eq!(got, expect, max_relative = 1e-9);
        // reversed bounds flip the sign
        let fwd = adaptive_simpson(&|x: f64| x * x, 0.0, 2.0, 1e-12, 1e-14).unwrap();
        let rev = adaptive_simpson(&|x: f64| x * x, 2.0, 0.0, 1e-12, 1e-14).unwrap();
        assert_relative_eq!(fwd, -rev, epsilon = 1e-13);
        assert_relative_eq!(fwd, 8.0 / 3.0, epsilon = 1e-11);
    }

    #[test]
    fn trapezoid_linear_exact() {
        let xs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
        assert_relative_eq!(trapezoid(&xs, &ys), 2.5, epsilon = 1e-14);
    }
}
