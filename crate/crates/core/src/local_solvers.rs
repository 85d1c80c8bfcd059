//! Worker subproblems and the solvers that (approximately) minimize them.
//!
//! At outer iteration `t` worker `k` minimizes
//!
//! ```text
//! g(w) = F_k(w) − ⟨∇F_k(w_prev) − η∇f(w_prev), w⟩ + (μ/2)||w − w_prev||²
//! ```
//!
//! whose gradient at `w_prev` is exactly `η∇f(w_prev)`. A solution is
//! accepted at inexactness `γ` either by distance to the exact minimizer
//! ([`Inexactness::OptionI`]) or by gradient reduction
//! ([`Inexactness::OptionII`]).

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::objectives::LocalFunction;

/// Data defining one worker's subproblem `g`.
#[derive(Debug, Clone)]
pub struct SubproblemSpec<'a> {
    local: LocalFunction<'a>,
    w_prev: DVector<f64>,
    /// `a_k = ∇F_k(w_prev) − η∇f(w_prev)`
    shift: DVector<f64>,
    /// `∇g(w_prev) = η∇f(w_prev)`
    anchor_gradient: DVector<f64>,
    mu: f64,
    eta: f64,
}

impl<'a> SubproblemSpec<'a> {
    pub fn new(
        local: LocalFunction<'a>,
        w_prev: &DVector<f64>,
        global_gradient: &DVector<f64>,
        eta: f64,
        mu: f64,
    ) -> Result<Self> {
        check_dim(local.dim(), w_prev.len())?;
        check_dim(local.dim(), global_gradient.len())?;
        let local_gradient = local.gradient(w_prev);
        Self::with_local_gradient(local, w_prev, local_gradient, global_gradient, eta, mu)
    }

    pub(crate) fn with_local_gradient(
        local: LocalFunction<'a>,
        w_prev: &DVector<f64>,
        local_gradient: DVector<f64>,
        global_gradient: &DVector<f64>,
        eta: f64,
        mu: f64,
    ) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid("eta must be > 0"));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::invalid("mu must be finite and >= 0"));
        }
        let anchor_gradient = eta * global_gradient;
        let shift = local_gradient - &anchor_gradient;
        Ok(SubproblemSpec {
            local,
            w_prev: w_prev.clone(),
            shift,
            anchor_gradient,
            mu,
            eta,
        })
    }

    pub fn local(&self) -> LocalFunction<'a> {
        self.local
    }

    pub fn reference_point(&self) -> &DVector<f64> {
        &self.w_prev
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.w_prev.len()
    }

    /// `∇g(w_prev)`, known without touching local data.
    pub fn gradient_at_reference(&self) -> &DVector<f64> {
        &self.anchor_gradient
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        self.local.value(w) - self.shift.dot(w) + 0.5 * self.mu * (w - &self.w_prev).norm_squared()
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut g = self.local.gradient(w) - &self.shift;
        if self.mu != 0.0 {
            g.axpy(self.mu, &(w - &self.w_prev), 1.0);
        }
        g
    }

    pub(crate) fn closed_form_minimizer(&self) -> Option<Result<DVector<f64>>> {
        let (mut a, b) = self.local.quadratic_form()?;
        for j in 0..a.nrows() {
            a[(j, j)] += self.mu;
        }
        let rhs = &self.shift - b + self.mu * &self.w_prev;
        Some(match a.cholesky() {
            Some(ch) => Ok(ch.solve(&rhs)),
            None => Err(Error::Singular("H_k + μI is not positive definite".into())),
        })
    }
}

/// `∇g(w) = ∇F_k(w) − a_k + μ(w − w_prev)`
pub fn subproblem_grad(spec: &SubproblemSpec<'_>, w: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(spec.dim(), w.len())?;
    Ok(spec.gradient(w))
}

/// Closed-form minimizer of `g` when `F_k` is quadratic.
pub fn solve_exact_quadratic(spec: &SubproblemSpec<'_>) -> Result<DVector<f64>> {
    spec.closed_form_minimizer().unwrap_or_else(|| {
        Err(Error::Unsupported(
            "exact solve requires a quadratic F_k".into(),
        ))
    })
}

/// Plain gradient descent on `g` from `w_prev`.
pub fn gd_solve(spec: &SubproblemSpec<'_>, iterations: usize, step: f64) -> Result<DVector<f64>> {
    check_step(step)?;
    let mut w = spec.w_prev.clone();
    for it in 0..iterations {
        let g = if it == 0 {
            spec.anchor_gradient.clone()
        } else {
            spec.gradient(&w)
        };
        w.axpy(-step, &g, 1.0);
    }
    Ok(w)
}

/// Number of inner SVRG steps, either directly or as passes over `P_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerBudget {
    /// `⌊passes·|P_k|⌋` steps.
    Passes(f64),
    Steps(usize),
}

impl InnerBudget {
    pub fn steps(self, samples: usize) -> Result<usize> {
        match self {
            InnerBudget::Passes(p) => {
                if !(p > 0.0 && p.is_finite()) {
                    return Err(Error::invalid("local passes must be > 0"));
                }
                let steps = (p * samples as f64).floor();
                if steps < 1.0 {
                    return Err(Error::invalid(format!(
                        "{p} passes over {samples} samples is less than one step"
                    )));
                }
                Ok(steps as usize)
            }
            InnerBudget::Steps(0) => Err(Error::invalid("inner steps must be >= 1")),
            InnerBudget::Steps(s) => Ok(s),
        }
    }
}

/// SVRG on `g` with one snapshot at `w_prev`, sampling uniformly with
/// replacement from `P_k`. Deterministic in `seed`.
pub fn svrg_solve(
    spec: &SubproblemSpec<'_>,
    budget: InnerBudget,
    step: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    svrg_with_rng(spec, budget, step, &mut rng)
}

pub(crate) fn svrg_with_rng<R: Rng>(
    spec: &SubproblemSpec<'_>,
    budget: InnerBudget,
    step: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_step(step)?;
    let steps = budget.steps(spec.local.num_samples())?;
    Ok(svrg_inner_loop(
        spec.local,
        &spec.w_prev,
        &spec.anchor_gradient,
        spec.mu,
        steps,
        step,
        rng,
    ))
}

/// Inner loop shared by the SVRG local solver and distributed SVRG:
///
/// ```text
/// w ← w − h(∇s_i(w) − ∇s_i(snapshot) + snapshot_direction + μ(w − snapshot))
/// ```
///
/// With `μ = 0` and `snapshot_direction = ∇f(snapshot)` this is exactly the
/// worker update of distributed SVRG, so both paths run identical
/// floating-point operations.
pub(crate) fn svrg_inner_loop<R: Rng>(
    local: LocalFunction<'_>,
    snapshot: &DVector<f64>,
    snapshot_direction: &DVector<f64>,
    mu: f64,
    steps: usize,
    step: f64,
    rng: &mut R,
) -> DVector<f64> {
    let n = local.num_samples();
    let mut w = snapshot.clone();
    let mut dir = DVector::zeros(w.len());
    for _ in 0..steps {
        let i = rng.random_range(0..n);
        dir.copy_from(snapshot_direction);
        local.add_sample_gradient_difference(i, &w, snapshot, &mut dir);
        if mu != 0.0 {
            dir.axpy(mu, &(&w - snapshot), 1.0);
        }
        w.axpy(-step, &dir, 1.0);
    }
    w
}

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("stepsize must be > 0"))
    }
}

/// Gradient descent on `g` until `||∇g(w)|| ≤ tol·max(1, ||∇g(w_prev)||)`.
///
/// Used as a high-accuracy reference when no closed form exists.
pub fn reference_minimizer(
    spec: &SubproblemSpec<'_>,
    step: f64,
    tol: f64,
    max_iterations: usize,
) -> Result<DVector<f64>> {
    if let Some(exact) = spec.closed_form_minimizer() {
        return exact;
    }
    check_step(step)?;
    let threshold = tol * spec.anchor_gradient.norm().max(1.0);
    let mut w = spec.w_prev.clone();
    let mut g = spec.anchor_gradient.clone();
    for _ in 0..max_iterations {
        if g.norm() <= threshold {
            return Ok(w);
        }
        w.axpy(-step, &g, 1.0);
        g = spec.gradient(&w);
    }
    if g.norm() <= threshold {
        Ok(w)
    } else {
        Err(Error::NoConvergence(format!(
            "reference solve stopped at gradient norm {:e} > {threshold:e}",
            g.norm()
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inexactness {
    /// `||w_out − ŵ_k|| ≤ γ||w_prev − ŵ_k||`
    OptionI,
    /// `||∇g(w_out)|| ≤ γ||∇g(w_prev)||`
    OptionII,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InexactnessCertificate {
    pub option: Inexactness,
    pub gamma: f64,
    /// The ratio the chosen option tests.
    pub ratio: f64,
    pub gradient_ratio: f64,
    /// Present whenever an exact or reference minimizer was available.
    pub distance_ratio: Option<f64>,
    pub satisfied: bool,
}

impl InexactnessCertificate {
    /// Both the gradient and the distance condition hold.
    pub fn both_satisfied(&self) -> bool {
        self.gradient_ratio <= self.gamma && self.distance_ratio.is_some_and(|r| r <= self.gamma)
    }
}

pub(crate) fn safe_ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Certifies `w_out` against the subproblem; Option I needs a closed-form
/// minimizer (quadratic `F_k`).
pub fn certify(
    spec: &SubproblemSpec<'_>,
    w_out: &DVector<f64>,
    option: Inexactness,
    gamma: f64,
) -> Result<InexactnessCertificate> {
    check_dim(spec.dim(), w_out.len())?;
    let exact = spec.closed_form_minimizer().transpose()?;
    if option == Inexactness::OptionI && exact.is_none() {
        return Err(Error::Unsupported(
            "Option I certification needs an exact minimizer".into(),
        ));
    }
    Ok(build_certificate_for(
        spec,
        w_out,
        option,
        gamma,
        exact.as_ref(),
    ))
}

/// Certifies `w_out` using a caller-supplied minimizer of `g`.
pub fn certify_against(
    spec: &SubproblemSpec<'_>,
    w_out: &DVector<f64>,
    option: Inexactness,
    gamma: f64,
    minimizer: &DVector<f64>,
) -> Result<InexactnessCertificate> {
    check_dim(spec.dim(), w_out.len())?;
    check_dim(spec.dim(), minimizer.len())?;
    Ok(build_certificate_for(
        spec,
        w_out,
        option,
        gamma,
        Some(minimizer),
    ))
}

pub(crate) fn build_certificate_for(
    spec: &SubproblemSpec<'_>,
    w_out: &DVector<f64>,
    option: Inexactness,
    gamma: f64,
    minimizer: Option<&DVector<f64>>,
) -> InexactnessCertificate {
    let gradient_ratio = safe_ratio(spec.gradient(w_out).norm(), spec.anchor_gradient.norm());
    let distance_ratio =
        minimizer.map(|m| safe_ratio((w_out - m).norm(), (&spec.w_prev - m).norm()));
    let ratio = match option {
        Inexactness::OptionI => distance_ratio.expect("Option I needs a minimizer"),
        Inexactness::OptionII => gradient_ratio,
    };
    InexactnessCertificate {
        option,
        gamma,
        ratio,
        gradient_ratio,
        distance_ratio,
        satisfied: ratio <= gamma,
    }
}

/// How a worker attacks its subproblem inside a DANE iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalSolver {
    /// Closed-form minimizer (quadratic `F_k` only).
    Exact,
    /// Exact minimizer pulled back toward `w_prev` so the Option I ratio
    /// equals `ratio`: `ŵ + ratio·(w_prev − ŵ)`.
    Blend {
        ratio: f64,
    },
    GradientDescent {
        iterations: usize,
        step: f64,
    },
    /// Gradient descent until the Option II ratio drops to `target`.
    CertifiedGradient {
        target: f64,
        step: f64,
        max_iterations: usize,
    },
    Svrg {
        budget: InnerBudget,
        step: f64,
    },
}

/// A local solve: the point and the number of passes over local data spent.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub w: DVector<f64>,
    pub passes: f64,
}

impl LocalSolver {
    pub fn solve<R: Rng>(&self, spec: &SubproblemSpec<'_>, rng: &mut R) -> Result<LocalSolution> {
        match *self {
            LocalSolver::Exact => Ok(LocalSolution {
                w: solve_exact_quadratic(spec)?,
                passes: 0.0,
            }),
            LocalSolver::Blend { ratio } => {
                if !(0.0..1.0).contains(&ratio) {
                    return Err(Error::invalid("blend ratio must lie in [0, 1)"));
                }
                let exact = solve_exact_quadratic(spec)?;
                let w = &exact + ratio * (&spec.w_prev - &exact);
                Ok(LocalSolution { w, passes: 0.0 })
            }
            LocalSolver::GradientDescent { iterations, step } => Ok(LocalSolution {
                w: gd_solve(spec, iterations, step)?,
                passes: iterations as f64,
            }),
            LocalSolver::CertifiedGradient {
                target,
                step,
                max_iterations,
            } => {
                check_step(step)?;
                let threshold = target * spec.anchor_gradient.norm();
                let mut w = spec.w_prev.clone();
                let mut g = spec.anchor_gradient.clone();
                let mut iterations = 0;
                while g.norm() > threshold && iterations < max_iterations {
                    w.axpy(-step, &g, 1.0);
                    g = spec.gradient(&w);
                    iterations += 1;
                }
                Ok(LocalSolution {
                    w,
                    passes: iterations as f64,
                })
            }
            LocalSolver::Svrg { budget, step } => {
                let n = spec.local.num_samples();
                let steps = budget.steps(n)?;
                let w = svrg_with_rng(spec, InnerBudget::Steps(steps), step, rng)?;
                Ok(LocalSolution {
                    w,
                    passes: steps as f64 / n as f64,
                })
            }
        }
    }
}
