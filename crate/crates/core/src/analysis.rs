//! Certified constants: relatedness δ, contraction factors, rates and the
//! parameter rules that guarantee them, plus smoothness / strong convexity
//! estimates for the supported objectives.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::objectives::{Objective, QuadraticModel, DENSE_LIMIT};

/// Above this size [`spectral_norm`] switches from a dense SVD to power
/// iteration.
pub const SVD_LIMIT: usize = 64;
const POWER_ITERATIONS: usize = 1000;
const POWER_TOL: f64 = 1e-12;

/// `λI ≼ ∇²f ≼ LI`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBounds {
    pub strong_convexity: f64,
    pub smoothness: f64,
    /// `L/λ`; infinite when `λ = 0`.
    pub condition: f64,
}

impl SpectralBounds {
    pub fn new(strong_convexity: f64, smoothness: f64) -> Result<Self> {
        if !(strong_convexity >= 0.0 && strong_convexity <= smoothness && smoothness.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 <= lambda <= L, got lambda = {strong_convexity}, L = {smoothness}"
            )));
        }
        Ok(SpectralBounds {
            strong_convexity,
            smoothness,
            condition: smoothness / strong_convexity,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    /// False if power iteration hit its cap; `value` is then the best
    /// estimate seen.
    pub converged: bool,
}

/// Largest singular value of `m`.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<NormEstimate> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    if m.is_empty() {
        return Ok(NormEstimate {
            value: 0.0,
            converged: true,
        });
    }
    if m.nrows().max(m.ncols()) <= SVD_LIMIT {
        let value = m.singular_values().iter().copied().fold(0.0, f64::max);
        return Ok(NormEstimate {
            value,
            converged: true,
        });
    }
    Ok(power_norm(m))
}

fn power_norm(m: &DMatrix<f64>) -> NormEstimate {
    let gram = m.transpose() * m;
    let n = gram.ncols();
    // fixed, generic start
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let next = &gram * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return NormEstimate {
                value: 0.0,
                converged: true,
            };
        }
        let value = norm.sqrt();
        let done = (value - estimate).abs() <= POWER_TOL * value;
        estimate = value;
        v = next / norm;
        if done {
            return NormEstimate {
                value,
                converged: true,
            };
        }
    }
    NormEstimate {
        value: estimate,
        converged: false,
    }
}

fn norm_of(m: &DMatrix<f64>) -> f64 {
    spectral_norm(m).map(|e| e.value).unwrap_or(f64::NAN)
}

fn check_dense(d: usize) -> Result<()> {
    if d > DENSE_LIMIT {
        return Err(Error::Unsupported(format!(
            "dense analysis is limited to d <= {DENSE_LIMIT}, got {d}"
        )));
    }
    Ok(())
}

/// Smallest `δ` with `||H_k − H_j|| ≤ δ` and `||l_k − l_j|| ≤ δ` for all
/// pairs of workers.
pub fn delta_relatedness(model: &QuadraticModel) -> f64 {
    let k = model.workers();
    let mut delta: f64 = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            let h = norm_of(&(model.hessian(a) - model.hessian(b)));
            let l = (model.linear(a) - model.linear(b)).norm();
            delta = delta.max(h).max(l);
        }
    }
    delta
}

fn shifted_inverse(h: &DMatrix<f64>, mu: f64) -> Result<DMatrix<f64>> {
    let d = h.nrows();
    (h + mu * DMatrix::identity(d, d))
        .try_inverse()
        .ok_or_else(|| Error::Singular("H_k + μI is singular".into()))
}

/// Per-iteration distance contraction of inexact DANE on a quadratic:
///
/// ```text
/// ρ = ||η H̃⁻¹H − I|| + (ηγ/K) Σ_k ||(H_k + μI)⁻¹H||,   H̃⁻¹ = (1/K) Σ_k (H_k + μI)⁻¹
/// ```
pub fn contraction_rho(model: &QuadraticModel, eta: f64, mu: f64, gamma: f64) -> Result<f64> {
    check_dense(model.dim())?;
    if !(eta > 0.0) || !(mu >= 0.0) || !(gamma >= 0.0) {
        return Err(Error::invalid("need eta > 0, mu >= 0, gamma >= 0"));
    }
    let d = model.dim();
    let k = model.workers() as f64;
    let (h, _) = model.aggregate();
    let mut mean_inverse = DMatrix::zeros(d, d);
    let mut inexact = 0.0;
    for hk in model.hessians() {
        let inv = shifted_inverse(hk, mu)?;
        inexact += norm_of(&(&inv * &h));
        mean_inverse += inv;
    }
    mean_inverse /= k;
    let exact = norm_of(&(eta * &mean_inverse * &h - DMatrix::identity(d, d)));
    Ok(exact + eta * gamma / k * inexact)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelatedParams {
    pub mu: f64,
    pub gamma: f64,
    /// Guaranteed upper bound on [`contraction_rho`] at `η = 1`.
    pub rho_bound: f64,
}

/// Parameter rule for `δ`-related quadratics with `λI ≼ H`:
/// `μ = max{0, 8δ²/λ − λ}`; `γ = 1/8` and bound `2/3` when `2√2δ ≤ λ`,
/// otherwise `γ = λ²/(192δ²)` and bound `1 − λ²/(24δ²)`.
pub fn related_quadratic_params(delta: f64, lambda: f64) -> Result<RelatedParams> {
    if !(lambda > 0.0 && lambda.is_finite()) || !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::invalid("need lambda > 0 and delta >= 0"));
    }
    let mu = (8.0 * delta * delta / lambda - lambda).max(0.0);
    let (gamma, rho_bound) = if 2.0 * std::f64::consts::SQRT_2 * delta <= lambda {
        (0.125, 2.0 / 3.0)
    } else {
        let r = lambda * lambda / (delta * delta);
        (r / 192.0, 1.0 - r / 24.0)
    };
    Ok(RelatedParams {
        mu,
        gamma,
        rho_bound,
    })
}

/// Suboptimality decrease factor of inexact DANE on `L`-smooth,
/// `λ`-strongly convex objectives:
///
/// ```text
/// ρ̃ = [(1−γ)²/(η(L+μ)) − 2L/(λ+μ)² − 2γ(L+μ)/(η(λ+μ)²)] η²λ
/// ```
///
/// The value is returned as is; it certifies progress only when it lies in
/// `(0, 1)`.
pub fn linear_rate(l: f64, lambda: f64, eta: f64, mu: f64, gamma: f64) -> Result<f64> {
    if !(lambda > 0.0) || !(mu > 0.0) || !(eta > 0.0) {
        return Err(Error::invalid("need lambda > 0, mu > 0, eta > 0"));
    }
    let lm = lambda + mu;
    let bracket = (1.0 - gamma).powi(2) / (eta * (l + mu))
        - 2.0 * l / (lm * lm)
        - 2.0 * gamma * (l + mu) / (eta * lm * lm);
    Ok(bracket * eta * eta * lambda)
}

/// Stationarity constant of nonconvex inexact DANE:
///
/// ```text
/// θ = [(1−γ)²/(η(L+μ)) − 2L/(μ−L)² − 2γ(L+μ)/(η(μ−L)²)] η²
/// ```
pub fn stationarity_rate(l: f64, eta: f64, mu: f64, gamma: f64) -> Result<f64> {
    if mu <= l {
        return Err(Error::invalid(format!("need mu > L (mu = {mu}, L = {l})")));
    }
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be > 0"));
    }
    let gap = mu - l;
    let bracket = (1.0 - gamma).powi(2) / (eta * (l + mu))
        - 2.0 * l / (gap * gap)
        - 2.0 * gamma * (l + mu) / (eta * gap * gap);
    Ok(bracket * eta * eta)
}

/// High-probability relatedness of `K` local averages of `n` i.i.d.
/// `L`-bounded quadratics in `d` dimensions: `√(32L² log(Kd/α)/n)`.
pub fn stochastic_delta_bound(
    l: f64,
    workers: usize,
    d: usize,
    alpha: f64,
    n: usize,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) || n == 0 || workers == 0 || d == 0 || !(l >= 0.0) {
        return Err(Error::invalid(
            "need 0 < alpha <= 1, n >= 1, K >= 1, d >= 1, L >= 0",
        ));
    }
    let log = ((workers * d) as f64 / alpha).ln();
    Ok((32.0 * l * l * log / n as f64).sqrt())
}

/// Conservative smoothness and strong convexity estimates of `f`.
///
/// Empirical risks use `L = c·max||x_i||² + λ_reg` and `λ = λ_reg`, with
/// `c` the loss curvature constant; quadratics use the exact extreme
/// eigenvalues of `H`. Attached proximal weights are added to both.
pub fn estimate_bounds(obj: &Objective) -> Result<SpectralBounds> {
    let prox = obj.proximal_weight();
    if let (Some(loss), Some(data)) = (obj.loss(), obj.dataset()) {
        let reg = obj.regularization();
        let l = loss.curvature_constant() * data.max_row_norm_squared() + reg;
        return SpectralBounds::new(reg + prox, l + prox);
    }
    if let Some(model) = obj.quadratic_model() {
        check_dense(model.dim())?;
        let (h, _) = model.aggregate();
        let eig = h.symmetric_eigenvalues();
        let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo < 0.0 {
            return Err(Error::invalid("aggregate Hessian is indefinite"));
        }
        return SpectralBounds::new(lo + prox, hi + prox);
    }
    Err(Error::Unsupported(
        "bounds are only known for empirical risks and quadratic models".into(),
    ))
}
