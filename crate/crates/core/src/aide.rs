//! Accelerated inexact DANE: a catalyst outer loop that repeatedly runs
//! inexact DANE on `f^t(w) = f(w) + (τ/2)||w − y^{t−1}||²`, extrapolating
//! the anchor `y` with the ζ/β momentum recursion.

use std::time::Instant;

use nalgebra::DVector;

use crate::dane::{initial_record, run_dane_iterations, ClusterState, DaneConfig, Progress};
use crate::error::{check_dim, Error, Result};
use crate::objectives::Objective;
use crate::trace::RunTrace;

/// Solves `ζ² = (1 − ζ)ζ_prev² + qζ` for its root in `(0, 1]`.
///
/// The recursion is the quadratic `ζ² + (ζ_prev² − q)ζ − ζ_prev² = 0`,
/// whose roots have opposite signs; the positive one is taken in whichever
/// form avoids cancellation.
pub fn zeta_next(zeta_prev: f64, q: f64) -> f64 {
    let c = zeta_prev * zeta_prev;
    let b = c - q;
    let disc = (b * b + 4.0 * c).sqrt();
    if b >= 0.0 {
        2.0 * c / (b + disc)
    } else {
        0.5 * (disc - b)
    }
}

/// Extrapolation weight `β_t = ζ_{t−1}(1 − ζ_{t−1}) / (ζ_{t−1}² + ζ_t)`.
pub fn beta(zeta_prev: f64, zeta: f64) -> f64 {
    zeta_prev * (1.0 - zeta_prev) / (zeta_prev * zeta_prev + zeta)
}

/// `f^t = f + (τ/2)||w − y_prev||²` on every worker.
pub fn build_shifted(obj: &Objective, y_prev: &DVector<f64>, tau: f64) -> Result<Objective> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau must be finite and >= 0"));
    }
    obj.with_proximal(y_prev, tau)
}

/// Momentum bookkeeping of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalystState {
    q: f64,
    zeta: f64,
    anchor: DVector<f64>,
    previous: DVector<f64>,
}

impl CatalystState {
    /// Starts at `y⁰ = w⁰` with `ζ₀ = √q`, the recursion's fixed point.
    pub fn new(lambda: f64, tau: f64, w0: &DVector<f64>) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(
                "AIDE needs a strong convexity estimate lambda > 0",
            ));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::invalid("tau must be finite and >= 0"));
        }
        let q = lambda / (lambda + tau);
        Ok(CatalystState {
            q,
            zeta: q.sqrt(),
            anchor: w0.clone(),
            previous: w0.clone(),
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn previous(&self) -> &DVector<f64> {
        &self.previous
    }

    /// Accepts the new iterate `w^t`, moves the anchor to
    /// `y^t = w^t + β_t(w^t − w^{t−1})` and returns `β_t`.
    pub fn advance(&mut self, w: &DVector<f64>) -> f64 {
        let zeta = zeta_next(self.zeta, self.q);
        let b = beta(self.zeta, zeta);
        self.anchor = w + b * (w - &self.previous);
        self.previous = w.clone();
        self.zeta = zeta;
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AideConfig {
    /// Strong convexity estimate λ.
    pub lambda: f64,
    pub tau: f64,
    pub max_outer: usize,
    /// Inner engine; `dane.iterations` is the number `s` of DANE
    /// iterations per outer step. Its stop rule is checked on every
    /// recorded iterate.
    pub dane: DaneConfig,
}

impl AideConfig {
    pub fn new(lambda: f64, tau: f64, max_outer: usize, dane: DaneConfig) -> Self {
        AideConfig {
            lambda,
            tau,
            max_outer,
            dane,
        }
    }
}

/// AIDE. The trace has one record per inner DANE iteration, tagged with its
/// outer index, so communication is counted exactly as for plain DANE.
pub fn aide(obj: &Objective, w0: &DVector<f64>, cfg: &AideConfig) -> Result<RunTrace> {
    aide_monitored(obj, obj, w0, cfg)
}

pub(crate) fn aide_monitored(
    engine: &Objective,
    monitor: &Objective,
    w0: &DVector<f64>,
    cfg: &AideConfig,
) -> Result<RunTrace> {
    check_dim(engine.dim(), w0.len())?;
    cfg.dane.validate(engine.workers())?;
    if cfg.dane.iterations == 0 {
        return Err(Error::invalid("AIDE needs at least one inner iteration"));
    }
    if cfg.dane.aggregation != crate::dane::Aggregation::Average {
        return Err(Error::invalid("AIDE averages worker solutions"));
    }
    let mut catalyst = CatalystState::new(cfg.lambda, cfg.tau, w0)?;
    let started = Instant::now();
    let mut trace = RunTrace {
        records: vec![initial_record(monitor, w0, None)],
    };
    let first = &trace.records[0];
    if cfg.dane.stop.grad_tol.is_some_and(|t| first.grad_norm <= t)
        || cfg
            .dane
            .stop
            .target_value
            .is_some_and(|t| first.f_value <= t)
    {
        return Ok(trace);
    }
    let mut state = ClusterState::new(engine.workers(), cfg.dane.seed);
    let mut progress = Progress::new(started);
    let mut w = w0.clone();
    for outer in 1..=cfg.max_outer {
        let shifted = build_shifted(engine, catalyst.anchor(), cfg.tau)?;
        let (next, stopped) = run_dane_iterations(
            &mut state,
            &shifted,
            monitor,
            w,
            cfg.dane.iterations,
            &cfg.dane,
            &mut progress,
            Some(outer),
            &mut trace,
        )?;
        catalyst.advance(&next);
        w = next;
        if stopped {
            break;
        }
    }
    Ok(trace)
}

/// Parameters for quadratic δ-related problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticAideParams {
    pub tau: f64,
    pub gamma: f64,
    pub mu: f64,
    pub eta: f64,
}

/// `τ = max{0, 2√2δ − λ}`, `γ = 1/8 − δ²/(2(τ + λ)²)`, `μ = 0`, `η = 1`.
pub fn select_tau_quadratic(delta: f64, lambda: f64) -> Result<QuadraticAideParams> {
    if !(delta >= 0.0 && delta.is_finite()) || !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("need delta >= 0 and lambda > 0"));
    }
    let threshold = 2.0 * std::f64::consts::SQRT_2 * delta;
    let tau = (threshold - lambda).max(0.0);
    // Once 2√2δ ≥ λ, τ + λ = 2√2δ and the formula collapses to 1/16.
    let gamma = if threshold >= lambda {
        1.0 / 16.0
    } else {
        0.125 - delta * delta / (2.0 * (tau + lambda) * (tau + lambda))
    };
    Ok(QuadraticAideParams {
        tau,
        gamma,
        mu: 0.0,
        eta: 1.0,
    })
}

/// Parameters for `L`-smooth, `λ`-strongly convex problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StronglyConvexAideParams {
    pub tau: f64,
    pub mu: f64,
    pub gamma: f64,
    pub eta: f64,
    /// `q = λ/(λ + τ) = λ/L`
    pub q: f64,
}

/// `τ = L − λ`, `μ = 12L`, `γ = 1/8`, `η = 1`.
pub fn select_params_strongly_convex(l: f64, lambda: f64) -> Result<StronglyConvexAideParams> {
    if !(lambda > 0.0 && lambda <= l && l.is_finite()) {
        return Err(Error::invalid("need 0 < lambda <= L"));
    }
    let tau = l - lambda;
    Ok(StronglyConvexAideParams {
        tau,
        mu: 12.0 * l,
        gamma: 0.125,
        eta: 1.0,
        q: lambda / (lambda + tau),
    })
}
