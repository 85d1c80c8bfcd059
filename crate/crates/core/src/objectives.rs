//! Losses, partitioned finite-sum objectives and the per-worker local
//! functions `F_k`.
//!
//! The global objective is always the worker average `f = (1/K) Σ_k F_k`.
//! For empirical risk, `F_k(w) = (K/N) Σ_{i∈P_k} f_i(w)` where
//! `f_i(w) = φ(y_i x_iᵀw) + (λ/2)||w||²`. Proximal terms
//! `(ρ/2)||w − c||²` (the weak-convexity perturbation, the catalyst anchor)
//! are attached to every `F_k`, and therefore once to `f`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data_io::{Dataset, Partition, SparseRow};
use crate::error::{check_dim, Error, Result};

/// Largest dimension for which dense quadratic forms are materialized.
pub const DENSE_LIMIT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `½(1 − z)²`, i.e. least squares on ±1 targets.
    Quadratic,
    /// `log(1 + e^{−z})`.
    Logistic,
    /// Flat for `z ≥ 1`, quadratic on `(0, 1)`, linear for `z ≤ 0`.
    SmoothedHinge,
}

impl LossKind {
    /// Loss value at margin `z = y·xᵀw`.
    pub fn value(self, z: f64) -> f64 {
        match self {
            LossKind::Quadratic => 0.5 * (1.0 - z) * (1.0 - z),
            LossKind::Logistic => {
                if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                }
            }
            LossKind::SmoothedHinge => smoothed_hinge(z).0,
        }
    }

    /// Derivative of the loss with respect to the margin.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            LossKind::Quadratic => z - 1.0,
            LossKind::Logistic => {
                if z > 0.0 {
                    let e = (-z).exp();
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + z.exp())
                }
            }
            LossKind::SmoothedHinge => smoothed_hinge(z).1,
        }
    }

    /// Upper bound on the second derivative of the loss in the margin.
    pub fn curvature_constant(self) -> f64 {
        match self {
            LossKind::Logistic => 0.25,
            LossKind::Quadratic | LossKind::SmoothedHinge => 1.0,
        }
    }

    /// Curvature bound of one unregularized sample: `c·||x_i||²`.
    pub fn sample_curvature_bound(self, x: &SparseRow) -> f64 {
        self.curvature_constant() * x.norm_squared()
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Quadratic => "quadratic",
            LossKind::Logistic => "logistic",
            LossKind::SmoothedHinge => "smoothed_hinge",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" | "squared" => Ok(LossKind::Quadratic),
            "logistic" => Ok(LossKind::Logistic),
            "smoothed_hinge" | "hinge" => Ok(LossKind::SmoothedHinge),
            other => Err(Error::invalid(format!("unknown loss kind {other:?}"))),
        }
    }
}

/// Smoothed hinge loss: returns `(value, derivative)` at margin `z`.
pub fn smoothed_hinge(z: f64) -> (f64, f64) {
    if z >= 1.0 {
        (0.0, 0.0)
    } else if z <= 0.0 {
        (0.5 - z, -1.0)
    } else {
        let r = 1.0 - z;
        (0.5 * r * r, -r)
    }
}

/// Explicit per-worker quadratics `F_k(w) = ½wᵀH_k w + l_kᵀw`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    hessians: Vec<DMatrix<f64>>,
    linears: Vec<DVector<f64>>,
    dim: usize,
}

impl QuadraticModel {
    pub fn new(hessians: Vec<DMatrix<f64>>, linears: Vec<DVector<f64>>) -> Result<Self> {
        if hessians.is_empty() || hessians.len() != linears.len() {
            return Err(Error::invalid(
                "quadratic model needs the same nonzero number of H_k and l_k",
            ));
        }
        let dim = linears[0].len();
        for (h, l) in hessians.iter().zip(&linears) {
            check_dim(dim, l.len())?;
            if h.nrows() != dim || h.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: h.nrows().max(h.ncols()),
                });
            }
            let scale = h.amax().max(1.0);
            if (h - h.transpose()).amax() > 1e-12 * scale {
                return Err(Error::invalid("H_k must be symmetric"));
            }
        }
        Ok(QuadraticModel {
            hessians,
            linears,
            dim,
        })
    }

    /// Same `H` and `l` on every one of `workers` machines.
    pub fn replicated(h: DMatrix<f64>, l: DVector<f64>, workers: usize) -> Result<Self> {
        QuadraticModel::new(vec![h; workers], vec![l; workers])
    }

    pub fn workers(&self) -> usize {
        self.hessians.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hessian(&self, k: usize) -> &DMatrix<f64> {
        &self.hessians[k]
    }

    pub fn linear(&self, k: usize) -> &DVector<f64> {
        &self.linears[k]
    }

    pub fn hessians(&self) -> &[DMatrix<f64>] {
        &self.hessians
    }

    pub fn linears(&self) -> &[DVector<f64>] {
        &self.linears
    }

    /// `(H, l) = ((1/K) Σ H_k, (1/K) Σ l_k)`
    pub fn aggregate(&self) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.workers() as f64;
        let mut h = DMatrix::zeros(self.dim, self.dim);
        let mut l = DVector::zeros(self.dim);
        for (hk, lk) in self.hessians.iter().zip(&self.linears) {
            h += hk;
            l += lk;
        }
        (h / k, l / k)
    }

    /// Minimizer `−H⁻¹l` of the aggregate quadratic.
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        let (h, l) = self.aggregate();
        let chol = h
            .cholesky()
            .ok_or_else(|| Error::Singular("aggregate Hessian is not positive definite".into()))?;
        Ok(-chol.solve(&l))
    }
}

/// A smooth local function supplied directly by the caller, used for test
/// problems that are not empirical risks (for example nonconvex ones).
pub trait SmoothFunction: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, w: &DVector<f64>) -> f64;
    fn gradient(&self, w: &DVector<f64>) -> DVector<f64>;
}

/// `(weight/2)·||w − center||²`
#[derive(Debug, Clone, PartialEq)]
pub struct ProximalTerm {
    pub center: DVector<f64>,
    pub weight: f64,
}

#[derive(Debug)]
struct ErmProblem {
    data: Arc<Dataset>,
    partition: Arc<Partition>,
    loss: LossKind,
    reg: f64,
    /// `K|P_k|/N`, the weight of one sample of `F_k`.
    scales: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Source {
    Erm(Arc<ErmProblem>),
    Quadratic(Arc<QuadraticModel>),
    Functions(Arc<[Arc<dyn SmoothFunction>]>),
}

/// Finite-sum objective distributed over `K` workers. Immutable; cloning
/// is cheap.
#[derive(Debug, Clone)]
pub struct Objective {
    source: Source,
    proximal: Vec<ProximalTerm>,
    dim: usize,
    workers: usize,
}

impl Objective {
    /// Regularized empirical risk over a partitioned dataset.
    pub fn erm(
        data: Arc<Dataset>,
        partition: Arc<Partition>,
        loss: LossKind,
        reg: f64,
    ) -> Result<Self> {
        if !(reg >= 0.0 && reg.is_finite()) {
            return Err(Error::invalid(
                "regularization weight must be finite and >= 0",
            ));
        }
        if partition.total() != data.len() {
            return Err(Error::invalid("partition does not match dataset size"));
        }
        let workers = partition.workers();
        let n = data.len() as f64;
        let scales = partition
            .parts()
            .iter()
            .map(|p| (workers * p.len()) as f64 / n)
            .collect();
        let dim = data.dim();
        Ok(Objective {
            source: Source::Erm(Arc::new(ErmProblem {
                data,
                partition,
                loss,
                reg,
                scales,
            })),
            proximal: Vec::new(),
            dim,
            workers,
        })
    }

    pub fn quadratic(model: Arc<QuadraticModel>) -> Self {
        let (dim, workers) = (model.dim(), model.workers());
        Objective {
            source: Source::Quadratic(model),
            proximal: Vec::new(),
            dim,
            workers,
        }
    }

    /// One caller-supplied function per worker.
    pub fn from_functions(functions: Vec<Arc<dyn SmoothFunction>>) -> Result<Self> {
        let first = functions
            .first()
            .ok_or_else(|| Error::invalid("objective needs at least one worker"))?;
        let dim = first.dim();
        for f in &functions {
            check_dim(dim, f.dim())?;
        }
        let workers = functions.len();
        Ok(Objective {
            source: Source::Functions(functions.into()),
            proximal: Vec::new(),
            dim,
            workers,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn loss(&self) -> Option<LossKind> {
        match &self.source {
            Source::Erm(p) => Some(p.loss),
            _ => None,
        }
    }

    pub fn regularization(&self) -> f64 {
        match &self.source {
            Source::Erm(p) => p.reg,
            _ => 0.0,
        }
    }

    pub fn dataset(&self) -> Option<&Dataset> {
        match &self.source {
            Source::Erm(p) => Some(&p.data),
            _ => None,
        }
    }

    pub fn quadratic_model(&self) -> Option<&QuadraticModel> {
        match &self.source {
            Source::Quadratic(m) => Some(m),
            _ => None,
        }
    }

    pub fn proximal_terms(&self) -> &[ProximalTerm] {
        &self.proximal
    }

    /// Total weight of attached proximal terms; each adds its weight to both
    /// the smoothness and strong-convexity constants.
    pub fn proximal_weight(&self) -> f64 {
        self.proximal.iter().map(|p| p.weight).sum()
    }

    /// `f(w) = (1/K) Σ_k F_k(w)`
    pub fn eval(&self, w: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, w.len())?;
        Ok(self.value_unchecked(w))
    }

    /// `∇f(w) = (1/K) Σ_k ∇F_k(w)`
    pub fn grad(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, w.len())?;
        Ok(self.gradient_unchecked(w))
    }

    pub(crate) fn value_unchecked(&self, w: &DVector<f64>) -> f64 {
        let sum: f64 = (0..self.workers).map(|k| self.local(k).value(w)).sum();
        sum / self.workers as f64
    }

    pub(crate) fn gradient_unchecked(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for k in 0..self.workers {
            g += self.local(k).gradient(w);
        }
        g / self.workers as f64
    }

    /// Handle to worker `k`'s local function `F_k` (0-based).
    pub fn local_function(&self, k: usize) -> Result<LocalFunction<'_>> {
        if k >= self.workers {
            return Err(Error::WorkerOutOfRange {
                index: k,
                workers: self.workers,
            });
        }
        Ok(self.local(k))
    }

    pub(crate) fn local(&self, k: usize) -> LocalFunction<'_> {
        LocalFunction { obj: self, k }
    }

    /// `f_ε(w) = f(w) + (ε/2)||w − w⁰||²`
    pub fn perturb(&self, center: &DVector<f64>, eps: f64) -> Result<Objective> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid("perturbation strength must be > 0"));
        }
        self.with_proximal(center, eps)
    }

    /// Attaches `(weight/2)||w − center||²` to every `F_k`. A zero weight
    /// returns an unchanged copy.
    pub fn with_proximal(&self, center: &DVector<f64>, weight: f64) -> Result<Objective> {
        check_dim(self.dim, center.len())?;
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::invalid("proximal weight must be finite and >= 0"));
        }
        let mut out = self.clone();
        if weight > 0.0 {
            out.proximal.push(ProximalTerm {
                center: center.clone(),
                weight,
            });
        }
        Ok(out)
    }
}

/// Borrowed view of one worker's `F_k`, including any proximal terms.
///
/// Methods assume `w` has the objective's dimension and panic otherwise;
/// the fallible entry points live on [`Objective`] and the solvers.
#[derive(Debug, Clone, Copy)]
pub struct LocalFunction<'a> {
    obj: &'a Objective,
    k: usize,
}

impl<'a> LocalFunction<'a> {
    pub fn worker(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.obj.dim
    }

    pub fn objective(&self) -> &'a Objective {
        self.obj
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        let base = match &self.obj.source {
            Source::Erm(p) => {
                let part = p.partition.part(self.k);
                let scale = p.scales[self.k];
                let loss: f64 = part
                    .iter()
                    .map(|&i| p.loss.value(p.data.label(i) * p.data.row(i).dot(w)))
                    .sum();
                scale * (loss / part.len() as f64 + 0.5 * p.reg * w.norm_squared())
            }
            Source::Quadratic(m) => 0.5 * w.dot(&(m.hessian(self.k) * w)) + m.linear(self.k).dot(w),
            Source::Functions(fs) => fs[self.k].value(w),
        };
        base + self
            .obj
            .proximal
            .iter()
            .map(|p| 0.5 * p.weight * (w - &p.center).norm_squared())
            .sum::<f64>()
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut g = match &self.obj.source {
            Source::Erm(p) => {
                let part = p.partition.part(self.k);
                let mut g = DVector::zeros(w.len());
                for &i in part {
                    let (x, y) = (p.data.row(i), p.data.label(i));
                    x.axpy(p.loss.derivative(y * x.dot(w)) * y, &mut g);
                }
                let scale = p.scales[self.k];
                g *= scale / part.len() as f64;
                g.axpy(scale * p.reg, w, 1.0);
                g
            }
            Source::Quadratic(m) => m.hessian(self.k) * w + m.linear(self.k),
            Source::Functions(fs) => fs[self.k].gradient(w),
        };
        for p in &self.obj.proximal {
            g.axpy(p.weight, &(w - &p.center), 1.0);
        }
        g
    }

    /// Number of samples `|P_k|` in the stochastic decomposition of `F_k`.
    /// Non-empirical sources are a single sample.
    pub fn num_samples(&self) -> usize {
        match &self.obj.source {
            Source::Erm(p) => p.partition.part(self.k).len(),
            _ => 1,
        }
    }

    /// Adds `alpha·∇s_i(w)` to `out`, where the samples `s_i` of `F_k`
    /// average to `F_k`: `s_i = (K|P_k|/N)·f_i` plus the proximal terms.
    pub fn add_sample_gradient(
        &self,
        i: usize,
        w: &DVector<f64>,
        alpha: f64,
        out: &mut DVector<f64>,
    ) {
        match &self.obj.source {
            Source::Erm(p) => {
                let idx = p.partition.part(self.k)[i];
                let (x, y) = (p.data.row(idx), p.data.label(idx));
                let scale = p.scales[self.k];
                x.axpy(alpha * scale * p.loss.derivative(y * x.dot(w)) * y, out);
                out.axpy(alpha * scale * p.reg, w, 1.0);
                for t in &self.obj.proximal {
                    out.axpy(alpha * t.weight, &(w - &t.center), 1.0);
                }
            }
            _ => {
                debug_assert_eq!(i, 0);
                out.axpy(alpha, &self.gradient(w), 1.0);
            }
        }
    }

    /// Adds `∇s_i(w) − ∇s_i(w_ref)` to `out`.
    pub fn add_sample_gradient_difference(
        &self,
        i: usize,
        w: &DVector<f64>,
        w_ref: &DVector<f64>,
        out: &mut DVector<f64>,
    ) {
        match &self.obj.source {
            Source::Erm(p) => {
                let idx = p.partition.part(self.k)[i];
                let (x, y) = (p.data.row(idx), p.data.label(idx));
                let scale = p.scales[self.k];
                let dphi = p.loss.derivative(y * x.dot(w)) - p.loss.derivative(y * x.dot(w_ref));
                x.axpy(scale * dphi * y, out);
                let linear = scale * p.reg + self.obj.proximal_weight();
                if linear != 0.0 {
                    out.axpy(linear, &(w - w_ref), 1.0);
                }
            }
            _ => {
                debug_assert_eq!(i, 0);
                *out += self.gradient(w) - self.gradient(w_ref);
            }
        }
    }

    /// `(A, b)` such that `F_k(w) = ½wᵀAw + bᵀw + const`, when `F_k` is
    /// quadratic and the dimension is at most [`DENSE_LIMIT`].
    pub fn quadratic_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let d = self.obj.dim;
        if d > DENSE_LIMIT {
            return None;
        }
        let (mut a, mut b) = match &self.obj.source {
            Source::Quadratic(m) => (m.hessian(self.k).clone(), m.linear(self.k).clone()),
            Source::Erm(p) if p.loss == LossKind::Quadratic => {
                let part = p.partition.part(self.k);
                let w = p.scales[self.k] / part.len() as f64;
                let mut a = DMatrix::zeros(d, d);
                let mut b = DVector::zeros(d);
                for &i in part {
                    let (x, y) = (p.data.row(i), p.data.label(i));
                    for (r, vr) in x.iter() {
                        for (c, vc) in x.iter() {
                            a[(r, c)] += w * vr * vc;
                        }
                        b[r] -= w * y * vr;
                    }
                }
                for j in 0..d {
                    a[(j, j)] += p.scales[self.k] * p.reg;
                }
                (a, b)
            }
            _ => return None,
        };
        for t in &self.obj.proximal {
            for j in 0..d {
                a[(j, j)] += t.weight;
            }
            b.axpy(-t.weight, &t.center, 1.0);
        }
        Some((a, b))
    }
}
