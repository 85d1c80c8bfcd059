//! The inexact DANE driver over a simulated synchronous cluster.
//!
//! One iteration costs two communication rounds: the workers' local
//! gradients are averaged into `∇f(w_prev)` and broadcast, then every worker
//! solves its subproblem and the solutions are aggregated. Reductions
//! always run in worker-index order, so parallel and sequential execution
//! produce bit-identical results.

use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aide::{self, AideConfig};
use crate::error::{check_dim, Error, Result};
use crate::local_solvers::{
    build_certificate_for, reference_minimizer, Inexactness, InexactnessCertificate, LocalSolver,
    SubproblemSpec,
};
use crate::objectives::Objective;
use crate::trace::{RunTrace, TraceRecord};

/// Communication rounds charged per DANE / distributed SVRG iteration.
pub const ROUNDS_PER_ITERATION: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Average,
    /// Take worker `k`'s solution (nonconvex mode only).
    PickWorker(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    /// Worker computations on the rayon pool.
    Parallel,
}

/// How the distance half of each worker certificate is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DistanceCertificates {
    Off,
    /// Only where a closed-form minimizer exists.
    #[default]
    ClosedForm,
    /// Closed form, or a gradient-descent reference solve with this step.
    Reference {
        step: f64,
    },
}

/// Early stopping, evaluated on every recorded iterate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StopRule {
    pub grad_tol: Option<f64>,
    /// Stop once `f(w) ≤ target_value` (known-optimum instances).
    pub target_value: Option<f64>,
}

impl StopRule {
    fn reached(&self, f_value: f64, grad_norm: f64) -> bool {
        self.grad_tol.is_some_and(|t| grad_norm <= t)
            || self.target_value.is_some_and(|t| f_value <= t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaneConfig {
    pub eta: f64,
    pub mu: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub solver: LocalSolver,
    pub aggregation: Aggregation,
    pub stop: StopRule,
    pub certificates: DistanceCertificates,
    pub execution: Execution,
    /// Worker `k` draws from a stream seeded with `seed + k`.
    pub seed: u64,
}

impl DaneConfig {
    pub fn new(eta: f64, mu: f64, gamma: f64, iterations: usize, solver: LocalSolver) -> Self {
        DaneConfig {
            eta,
            mu,
            gamma,
            iterations,
            solver,
            aggregation: Aggregation::Average,
            stop: StopRule::default(),
            certificates: DistanceCertificates::default(),
            execution: Execution::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_stop(mut self, stop: StopRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn with_certificates(mut self, certificates: DistanceCertificates) -> Self {
        self.certificates = certificates;
        self
    }

    pub(crate) fn validate(&self, workers: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta must be > 0"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("mu must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1)"));
        }
        if let Aggregation::PickWorker(k) = self.aggregation {
            if k >= workers {
                return Err(Error::WorkerOutOfRange { index: k, workers });
            }
        }
        Ok(())
    }
}

/// One simulated machine.
#[derive(Debug, Clone)]
pub struct WorkerSlot {
    index: usize,
    rng: ChaCha8Rng,
    iterate: Option<DVector<f64>>,
}

impl WorkerSlot {
    pub fn index(&self) -> usize {
        self.index
    }

    /// The worker's most recent local solution.
    pub fn iterate(&self) -> Option<&DVector<f64>> {
        self.iterate.as_ref()
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub(crate) fn set_iterate(&mut self, w: DVector<f64>) {
        self.iterate = Some(w);
    }
}

/// Per-worker state that persists across iterations: the random stream and
/// the latest local iterate.
#[derive(Debug, Clone)]
pub struct ClusterState {
    workers: Vec<WorkerSlot>,
}

impl ClusterState {
    pub fn new(workers: usize, base_seed: u64) -> Self {
        ClusterState {
            workers: (0..workers)
                .map(|index| WorkerSlot {
                    index,
                    rng: ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(index as u64)),
                    iterate: None,
                })
                .collect(),
        }
    }

    pub fn workers(&self) -> usize {
        self.workers.len()
    }

    pub fn slots(&self) -> &[WorkerSlot] {
        &self.workers
    }

    /// Runs `job` on every worker; results come back in worker order.
    pub(crate) fn map_workers<T, F>(&mut self, execution: Execution, job: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut WorkerSlot) -> Result<T> + Sync + Send,
    {
        let run = |slot: &mut WorkerSlot| {
            let k = slot.index;
            job(slot).map_err(|e| e.in_worker(k))
        };
        match execution {
            Execution::Sequential => self.workers.iter_mut().map(run).collect(),
            Execution::Parallel => self.workers.par_iter_mut().map(run).collect(),
        }
    }

    /// As [`Self::map_workers`], handing worker `k` the `k`-th input.
    pub(crate) fn map_workers_with<I, T, F>(
        &mut self,
        execution: Execution,
        inputs: Vec<I>,
        job: F,
    ) -> Result<Vec<T>>
    where
        I: Send,
        T: Send,
        F: Fn(&mut WorkerSlot, I) -> Result<T> + Sync + Send,
    {
        assert_eq!(inputs.len(), self.workers.len(), "one input per worker");
        let run = |(slot, input): (&mut WorkerSlot, I)| {
            let k = slot.index;
            job(slot, input).map_err(|e| e.in_worker(k))
        };
        match execution {
            Execution::Sequential => self.workers.iter_mut().zip(inputs).map(run).collect(),
            Execution::Parallel => self
                .workers
                .par_iter_mut()
                .zip(inputs.into_par_iter())
                .map(run)
                .collect(),
        }
    }
}

/// Fixed-order `(1/K) Σ_k v_k`.
pub(crate) fn average(vectors: &[DVector<f64>]) -> DVector<f64> {
    let mut sum = DVector::zeros(vectors[0].len());
    for v in vectors {
        sum += v;
    }
    sum / vectors.len() as f64
}

/// Local gradients `∇F_k(w)` in worker order.
pub(crate) fn local_gradients(
    obj: &Objective,
    state: &mut ClusterState,
    w: &DVector<f64>,
    execution: Execution,
) -> Result<Vec<DVector<f64>>> {
    state.map_workers(execution, |slot| Ok(obj.local(slot.index).gradient(w)))
}

/// What one DANE step did besides producing the next iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// `∇f(w_prev)` as aggregated in the first round.
    pub gradient: DVector<f64>,
    pub certificates: Vec<InexactnessCertificate>,
    /// Passes over local data, averaged over workers.
    pub local_passes: f64,
    pub comm_rounds: usize,
}

/// One inexact DANE iteration from `w_prev`.
pub fn dane_step(
    state: &mut ClusterState,
    obj: &Objective,
    w_prev: &DVector<f64>,
    cfg: &DaneConfig,
) -> Result<(DVector<f64>, StepRecord)> {
    check_dim(obj.dim(), w_prev.len())?;
    check_workers(state, obj)?;
    cfg.validate(obj.workers())?;
    let grads = local_gradients(obj, state, w_prev, cfg.execution)?;
    step_from_gradients(state, obj, w_prev, grads, cfg)
}

fn check_workers(state: &ClusterState, obj: &Objective) -> Result<()> {
    if state.workers() != obj.workers() {
        return Err(Error::invalid(format!(
            "cluster has {} workers but the objective has {}",
            state.workers(),
            obj.workers()
        )));
    }
    Ok(())
}

fn step_from_gradients(
    state: &mut ClusterState,
    obj: &Objective,
    w_prev: &DVector<f64>,
    local_grads: Vec<DVector<f64>>,
    cfg: &DaneConfig,
) -> Result<(DVector<f64>, StepRecord)> {
    let gradient = average(&local_grads);
    let option = match cfg.solver {
        LocalSolver::Exact | LocalSolver::Blend { .. } => Inexactness::OptionI,
        _ => Inexactness::OptionII,
    };
    let results = state.map_workers_with(cfg.execution, local_grads, |slot, local_grad| {
        let local = obj.local(slot.index);
        let spec = SubproblemSpec::with_local_gradient(
            local, w_prev, local_grad, &gradient, cfg.eta, cfg.mu,
        )?;
        let sol = cfg.solver.solve(&spec, slot.rng())?;
        let cert = worker_certificate(&spec, &sol.w, option, cfg)?;
        slot.set_iterate(sol.w.clone());
        Ok((sol, cert))
    })?;
    let k = results.len() as f64;
    let local_passes = results.iter().map(|(s, _)| s.passes).sum::<f64>() / k;
    let certificates = results.iter().map(|(_, c)| *c).collect();
    let next = match cfg.aggregation {
        Aggregation::Average => {
            let ws: Vec<DVector<f64>> = results.into_iter().map(|(s, _)| s.w).collect();
            average(&ws)
        }
        Aggregation::PickWorker(j) => results.into_iter().nth(j).expect("validated index").0.w,
    };
    Ok((
        next,
        StepRecord {
            gradient,
            certificates,
            local_passes,
            comm_rounds: ROUNDS_PER_ITERATION,
        },
    ))
}

fn worker_certificate(
    spec: &SubproblemSpec<'_>,
    w_out: &DVector<f64>,
    option: Inexactness,
    cfg: &DaneConfig,
) -> Result<InexactnessCertificate> {
    let minimizer = match cfg.certificates {
        DistanceCertificates::Off => None,
        DistanceCertificates::ClosedForm => spec.closed_form_minimizer().transpose()?,
        DistanceCertificates::Reference { step } => {
            Some(reference_minimizer(spec, step, 1e-12, 1_000_000)?)
        }
    };
    let option = if minimizer.is_none() {
        Inexactness::OptionII
    } else {
        option
    };
    Ok(build_certificate_for(
        spec,
        w_out,
        option,
        cfg.gamma,
        minimizer.as_ref(),
    ))
}

/// Running totals carried across chained DANE calls.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Progress {
    pub iteration: usize,
    pub comm_rounds: usize,
    pub local_passes: f64,
    pub started: Instant,
}

impl Progress {
    pub fn new(started: Instant) -> Self {
        Progress {
            iteration: 0,
            comm_rounds: 0,
            local_passes: 0.0,
            started,
        }
    }
}

/// Drives `iterations` DANE steps of `engine` from `w_start`, appending one
/// record per step evaluated on `monitor`. Returns the last iterate and
/// whether the stop rule fired.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_dane_iterations(
    state: &mut ClusterState,
    engine: &Objective,
    monitor: &Objective,
    w_start: DVector<f64>,
    iterations: usize,
    cfg: &DaneConfig,
    progress: &mut Progress,
    outer: Option<usize>,
    trace: &mut RunTrace,
) -> Result<(DVector<f64>, bool)> {
    let same = std::ptr::eq(engine, monitor);
    let mut w = w_start;
    let mut pending = None;
    for _ in 0..iterations {
        let grads = match pending.take() {
            Some(g) => g,
            None => local_gradients(engine, state, &w, cfg.execution)?,
        };
        let (next, step) = step_from_gradients(state, engine, &w, grads, cfg)?;
        progress.iteration += 1;
        progress.comm_rounds += step.comm_rounds;
        progress.local_passes += step.local_passes;
        w = next;
        let (f_value, grad_norm) = if same {
            let g = local_gradients(engine, state, &w, cfg.execution)?;
            let norm = average(&g).norm();
            pending = Some(g);
            (engine.value_unchecked(&w), norm)
        } else {
            (
                monitor.value_unchecked(&w),
                monitor.gradient_unchecked(&w).norm(),
            )
        };
        trace.records.push(TraceRecord {
            iteration: progress.iteration,
            outer,
            w: w.clone(),
            f_value,
            grad_norm,
            comm_rounds: progress.comm_rounds,
            local_passes: progress.local_passes,
            certificates: step.certificates,
            wall_seconds: progress.started.elapsed().as_secs_f64(),
        });
        if cfg.stop.reached(f_value, grad_norm) {
            return Ok((w, true));
        }
    }
    Ok((w, false))
}

pub(crate) fn initial_record(
    monitor: &Objective,
    w0: &DVector<f64>,
    outer: Option<usize>,
) -> TraceRecord {
    TraceRecord {
        iteration: 0,
        outer,
        w: w0.clone(),
        f_value: monitor.value_unchecked(w0),
        grad_norm: monitor.gradient_unchecked(w0).norm(),
        comm_rounds: 0,
        local_passes: 0.0,
        certificates: Vec::new(),
        wall_seconds: 0.0,
    }
}

/// Inexact DANE for `cfg.iterations` steps (or until the stop rule fires).
pub fn inexact_dane(obj: &Objective, w0: &DVector<f64>, cfg: &DaneConfig) -> Result<RunTrace> {
    if let Aggregation::PickWorker(_) = cfg.aggregation {
        return Err(Error::invalid(
            "worker picking is reserved for the nonconvex driver",
        ));
    }
    run_checked(obj, obj, w0, cfg)
}

fn run_checked(
    engine: &Objective,
    monitor: &Objective,
    w0: &DVector<f64>,
    cfg: &DaneConfig,
) -> Result<RunTrace> {
    check_dim(engine.dim(), w0.len())?;
    cfg.validate(engine.workers())?;
    let started = Instant::now();
    let mut trace = RunTrace {
        records: vec![initial_record(monitor, w0, None)],
    };
    if cfg
        .stop
        .reached(trace.records[0].f_value, trace.records[0].grad_norm)
    {
        return Ok(trace);
    }
    let mut state = ClusterState::new(engine.workers(), cfg.seed);
    let mut progress = Progress::new(started);
    run_dane_iterations(
        &mut state,
        engine,
        monitor,
        w0.clone(),
        cfg.iterations,
        cfg,
        &mut progress,
        None,
        &mut trace,
    )?;
    Ok(trace)
}

/// Inexact DANE for smooth nonconvex objectives: `μ` must exceed the
/// smoothness constant `smoothness` so every subproblem is strongly convex,
/// and the next iterate is one worker's solution rather than the average.
pub fn inexact_dane_nonconvex(
    obj: &Objective,
    w0: &DVector<f64>,
    cfg: &DaneConfig,
    smoothness: f64,
) -> Result<RunTrace> {
    if !(smoothness > 0.0 && smoothness.is_finite()) {
        return Err(Error::invalid("smoothness constant must be > 0"));
    }
    if cfg.mu <= smoothness {
        return Err(Error::invalid(format!(
            "nonconvex DANE needs mu > L (mu = {}, L = {smoothness})",
            cfg.mu
        )));
    }
    if cfg.aggregation == Aggregation::Average {
        return Err(Error::invalid("nonconvex DANE uses worker picking"));
    }
    run_checked(obj, obj, w0, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakConvexEngine {
    Dane,
    Aide,
}

/// Settings for [`solve_weakly_convex`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeaklyConvexOptions {
    pub engine: WeakConvexEngine,
    /// Smoothness `L` of the unperturbed objective.
    pub smoothness: f64,
    /// DANE iterations, or AIDE outer iterations.
    pub iterations: usize,
    /// DANE iterations per AIDE outer step.
    pub inner_iterations: usize,
    /// Local solver; defaults to certified gradient descent at `γ = 1/8`.
    pub solver: Option<LocalSolver>,
    pub seed: u64,
    pub execution: Execution,
}

impl WeaklyConvexOptions {
    pub fn new(engine: WeakConvexEngine, smoothness: f64, iterations: usize) -> Self {
        WeaklyConvexOptions {
            engine,
            smoothness,
            iterations,
            inner_iterations: 1,
            solver: None,
            seed: 0,
            execution: Execution::Sequential,
        }
    }
}

/// Minimizes a weakly convex `f` by running the chosen engine on
/// `f_ε(w) = f(w) + (ε/2)||w − w⁰||²`. Trace values are reported on `f`.
///
/// DANE uses `η = 1, γ = 1/8, μ = 6L + 5ε`; AIDE uses `λ = ε, τ = L,
/// μ = 12(L + ε), γ = 1/8`.
pub fn solve_weakly_convex(
    obj: &Objective,
    w0: &DVector<f64>,
    eps: f64,
    opts: &WeaklyConvexOptions,
) -> Result<RunTrace> {
    let l = opts.smoothness;
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::invalid("smoothness constant must be > 0"));
    }
    let perturbed = obj.perturb(w0, eps)?;
    let gamma = 0.125;
    match opts.engine {
        WeakConvexEngine::Dane => {
            let mu = 6.0 * l + 5.0 * eps;
            let solver = opts.solver.unwrap_or(LocalSolver::CertifiedGradient {
                target: gamma,
                step: 1.0 / (l + eps + mu),
                max_iterations: 10_000,
            });
            let cfg = DaneConfig::new(1.0, mu, gamma, opts.iterations, solver)
                .with_seed(opts.seed)
                .with_execution(opts.execution)
                .with_certificates(DistanceCertificates::Off);
            run_checked(&perturbed, obj, w0, &cfg)
        }
        WeakConvexEngine::Aide => {
            let mu = 12.0 * (l + eps);
            let tau = l;
            let solver = opts.solver.unwrap_or(LocalSolver::CertifiedGradient {
                target: gamma,
                step: 1.0 / (l + eps + tau + mu),
                max_iterations: 10_000,
            });
            let inner = DaneConfig::new(1.0, mu, gamma, opts.inner_iterations, solver)
                .with_seed(opts.seed)
                .with_execution(opts.execution)
                .with_certificates(DistanceCertificates::Off);
            let cfg = AideConfig::new(eps, tau, opts.iterations, inner);
            aide::aide_monitored(&perturbed, obj, w0, &cfg)
        }
    }
}
