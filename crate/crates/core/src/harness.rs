//! Experiment runner: sweep expansion, baselines, synthetic quadratics and
//! CSV/manifest output.
//!
//! Configurations are plain `key = value` files; list-valued keys take
//! comma-separated values and expand to a cross-product of runs. A manifest
//! stores every run as a fully resolved configuration section, so replaying
//! it reproduces each CSV exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::aide::{aide, AideConfig};
use crate::analysis::estimate_bounds;
use crate::dane::{inexact_dane, initial_record, DaneConfig, DistanceCertificates};
use crate::data_io::{normalize_and_bias, parse_libsvm, partition, synthetic_classification};
use crate::data_io::{Dataset, PartitionStrategy, SyntheticSpec};
use crate::dsvrg::{distributed_svrg, DsvrgConfig};
use crate::error::{check_dim, Error, Result};
use crate::local_solvers::{InnerBudget, LocalSolver};
use crate::objectives::{LossKind, Objective, QuadraticModel};
use crate::trace::{RunTrace, TraceRecord};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Gradient descent `w ← w − h∇f(w)`; one communication round per step.
pub fn gd_baseline(
    obj: &Objective,
    w0: &DVector<f64>,
    step: f64,
    iterations: usize,
) -> Result<RunTrace> {
    check_dim(obj.dim(), w0.len())?;
    if !(step >= 0.0 && step.is_finite()) {
        return Err(Error::invalid("stepsize must be finite and >= 0"));
    }
    let started = Instant::now();
    let mut trace = RunTrace {
        records: vec![initial_record(obj, w0, None)],
    };
    let mut w = w0.clone();
    let mut g = obj.gradient_unchecked(&w);
    for t in 1..=iterations {
        w.axpy(-step, &g, 1.0);
        g = obj.gradient_unchecked(&w);
        trace
            .records
            .push(baseline_record(obj, t, &w, g.norm(), started));
    }
    Ok(trace)
}

/// Nesterov's constant-momentum method for `L`-smooth, `λ`-strongly
/// convex `f`: `y = w + β(w − w_prev)`, `w⁺ = y − ∇f(y)/L` with
/// `β = (√κ − 1)/(√κ + 1)`. One communication round per step.
pub fn agd_baseline(
    obj: &Objective,
    w0: &DVector<f64>,
    smoothness: f64,
    strong_convexity: f64,
    iterations: usize,
) -> Result<RunTrace> {
    check_dim(obj.dim(), w0.len())?;
    if !(strong_convexity > 0.0) {
        return Err(Error::invalid("accelerated gradient needs lambda > 0"));
    }
    if !(smoothness >= strong_convexity && smoothness.is_finite()) {
        return Err(Error::invalid("need L >= lambda"));
    }
    let momentum = agd_momentum(smoothness / strong_convexity);
    let started = Instant::now();
    let mut trace = RunTrace {
        records: vec![initial_record(obj, w0, None)],
    };
    let mut w = w0.clone();
    let mut prev = w0.clone();
    for t in 1..=iterations {
        let y = &w + momentum * (&w - &prev);
        let g = obj.gradient_unchecked(&y);
        prev = std::mem::replace(&mut w, y - g / smoothness);
        let norm = obj.gradient_unchecked(&w).norm();
        trace
            .records
            .push(baseline_record(obj, t, &w, norm, started));
    }
    Ok(trace)
}

/// `(√κ − 1)/(√κ + 1)`
pub fn agd_momentum(condition: f64) -> f64 {
    let s = condition.sqrt();
    (s - 1.0) / (s + 1.0)
}

fn baseline_record(
    obj: &Objective,
    t: usize,
    w: &DVector<f64>,
    grad_norm: f64,
    started: Instant,
) -> TraceRecord {
    TraceRecord {
        iteration: t,
        outer: None,
        w: w.clone(),
        f_value: obj.value_unchecked(w),
        grad_norm,
        comm_rounds: t,
        local_passes: t as f64,
        certificates: Vec::new(),
        wall_seconds: started.elapsed().as_secs_f64(),
    }
}

/// Generator for stochastic quadratic families: `H_k` is the mean of
/// `samples` matrices `QΛQᵀ` with random rotations `Q` and eigenvalues drawn
/// uniformly from `[eig_min, eig_max]`; `l_k = l̄ + (1/samples) Σ v_i` with
/// `v_i` uniform in the ball of radius `linear_noise`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub workers: usize,
    pub samples: usize,
    pub eig_min: f64,
    pub eig_max: f64,
    pub linear_noise: f64,
    pub seed: u64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        QuadraticSpec {
            dim: 5,
            workers: 4,
            samples: 50,
            eig_min: 0.1,
            eig_max: 1.0,
            linear_noise: 1.0,
            seed: 0,
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // sign fix so Q is Haar distributed
    let signs = DVector::from_fn(d, |i, _| if r[(i, i)] < 0.0 { -1.0 } else { 1.0 });
    q * DMatrix::from_diagonal(&signs)
}

fn random_in_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> DVector<f64> {
    let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let r: f64 = rng.random::<f64>().powf(1.0 / d as f64);
    g.normalize() * (radius * r)
}

pub fn synth_quadratic(spec: &QuadraticSpec) -> Result<(Arc<QuadraticModel>, Objective)> {
    if spec.dim == 0 || spec.workers == 0 || spec.samples == 0 {
        return Err(Error::invalid("dim, workers and samples must be >= 1"));
    }
    if !(spec.eig_min > 0.0 && spec.eig_min <= spec.eig_max && spec.eig_max.is_finite()) {
        return Err(Error::invalid(
            "eigenvalue range must satisfy 0 < min <= max",
        ));
    }
    if !(spec.linear_noise >= 0.0 && spec.linear_noise.is_finite()) {
        return Err(Error::invalid("linear noise must be finite and >= 0"));
    }
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = random_in_ball(&mut rng, d, 1.0);
    let mut hessians = Vec::with_capacity(spec.workers);
    let mut linears = Vec::with_capacity(spec.workers);
    for _ in 0..spec.workers {
        let mut h = DMatrix::zeros(d, d);
        let mut l = DVector::zeros(d);
        for _ in 0..spec.samples {
            let q = random_rotation(&mut rng, d);
            let eig = DVector::from_fn(d, |_, _| {
                if spec.eig_min == spec.eig_max {
                    spec.eig_min
                } else {
                    rng.random_range(spec.eig_min..=spec.eig_max)
                }
            });
            h += &q * DMatrix::from_diagonal(&eig) * q.transpose();
            l += random_in_ball(&mut rng, d, spec.linear_noise);
        }
        h /= spec.samples as f64;
        hessians.push((&h + h.transpose()) * 0.5);
        linears.push(&base + l / spec.samples as f64);
    }
    let model = Arc::new(QuadraticModel::new(hessians, linears)?);
    let obj = Objective::quadratic(model.clone());
    Ok((model, obj))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Gd,
    Agd,
    Dane,
    Aide,
    Dsvrg,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Gd => "gd",
            Algorithm::Agd => "agd",
            Algorithm::Dane => "dane",
            Algorithm::Aide => "aide",
            Algorithm::Dsvrg => "dsvrg",
        }
    }

    pub fn rounds_per_iteration(self) -> usize {
        match self {
            Algorithm::Gd | Algorithm::Agd => 1,
            _ => crate::dane::ROUNDS_PER_ITERATION,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gd" => Ok(Algorithm::Gd),
            "agd" => Ok(Algorithm::Agd),
            "dane" | "inexact_dane" => Ok(Algorithm::Dane),
            "aide" => Ok(Algorithm::Aide),
            "dsvrg" | "svrg" => Ok(Algorithm::Dsvrg),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Local solver family used by DANE and AIDE runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Svrg,
    Gd,
    Exact,
}

impl SolverKind {
    fn name(self) -> &'static str {
        match self {
            SolverKind::Svrg => "svrg",
            SolverKind::Gd => "gd",
            SolverKind::Exact => "exact",
        }
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "svrg" => Ok(SolverKind::Svrg),
            "gd" => Ok(SolverKind::Gd),
            "exact" => Ok(SolverKind::Exact),
            other => Err(Error::Config(format!("unknown solver '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionKind {
    Random,
    ByLabel,
    Contiguous,
}

impl PartitionKind {
    fn name(self) -> &'static str {
        match self {
            PartitionKind::Random => "random",
            PartitionKind::ByLabel => "by_label",
            PartitionKind::Contiguous => "contiguous",
        }
    }
}

impl FromStr for PartitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random" => Ok(PartitionKind::Random),
            "by_label" | "label" => Ok(PartitionKind::ByLabel),
            "contiguous" => Ok(PartitionKind::Contiguous),
            other => Err(Error::Config(format!("unknown partition '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// Worker count comes from the `workers` sweep.
    Quadratic(QuadraticSpec),
    Libsvm(PathBuf),
}

impl DataSource {
    /// Short label used to group runs in reports.
    pub fn label(&self) -> String {
        match self {
            DataSource::Synthetic(s) => format!(
                "synthetic(n={},d={},seed={})",
                s.examples, s.features, s.seed
            ),
            DataSource::Quadratic(q) => {
                format!("quadratic(d={},n={},seed={})", q.dim, q.samples, q.seed)
            }
            DataSource::Libsvm(p) => p.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Iterations(usize),
    CommRounds(usize),
}

/// A parsed configuration; list-valued fields are sweep axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub source: DataSource,
    pub loss: LossKind,
    /// `λ_reg = 1/(cN)` for each `c`.
    pub reg_c: Vec<f64>,
    pub workers: Vec<usize>,
    pub partition: PartitionKind,
    pub partition_seed: u64,
    pub algorithm: Algorithm,
    pub eta: f64,
    /// DANE/AIDE proximal weight; defaults to 0.
    pub mu: Option<f64>,
    pub gamma: f64,
    /// AIDE catalyst weight; defaults to `L − λ`.
    pub tau: Option<f64>,
    /// DANE iterations per AIDE outer step.
    pub inner: usize,
    pub solver: SolverKind,
    /// Local passes per iteration.
    pub passes: Vec<f64>,
    /// Stepsize grid; `None` picks a default from the smoothness estimate.
    pub steps: Vec<Option<f64>>,
    pub seeds: Vec<u64>,
    pub budget: Budget,
    /// Accelerated-gradient iterations for a reference optimum value;
    /// 0 disables it for data-driven problems.
    pub reference_iterations: usize,
    pub record_wall_time: bool,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            source: DataSource::Synthetic(SyntheticSpec::default()),
            loss: LossKind::Logistic,
            reg_c: vec![1.0],
            workers: vec![4],
            partition: PartitionKind::Random,
            partition_seed: 0,
            algorithm: Algorithm::Dane,
            eta: 1.0,
            mu: None,
            gamma: 0.125,
            tau: None,
            inner: 1,
            solver: SolverKind::Svrg,
            passes: vec![1.0],
            steps: vec![None],
            seeds: vec![0],
            budget: Budget::Iterations(20),
            reference_iterations: 0,
            record_wall_time: false,
            output: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{}' for '{key}'", v.trim())))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let items: Vec<T> = v
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("'{key}' needs at least one value")));
    }
    Ok(items)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::Config(format!("bad boolean '{other}' for '{key}'"))),
    }
}

/// Key/value pairs of one section, in file order.
type Section = Vec<(usize, String, String)>;

fn split_sections(text: &str) -> Result<Vec<(Option<String>, Section)>> {
    let mut out: Vec<(Option<String>, Section)> = vec![(None, Vec::new())];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            out.push((Some(name.trim().to_string()), Vec::new()));
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
        out.last_mut().expect("at least one section").1.push((
            i + 1,
            k.trim().to_string(),
            v.trim().to_string(),
        ));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses a config with no `[section]` headers.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = split_sections(text)?;
        if sections.len() > 1 {
            return Err(Error::Config(
                "sections are only allowed in manifests".into(),
            ));
        }
        Self::from_pairs(&sections.remove(0).1)
    }

    fn from_pairs(pairs: &Section) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut synth = SyntheticSpec::default();
        let mut quad = QuadraticSpec::default();
        let mut dataset = String::from("synthetic");
        let mut seen = BTreeMap::new();
        for (line, key, v) in pairs {
            if seen.insert(key.clone(), *line).is_some() {
                return Err(Error::Config(format!("line {line}: duplicate key '{key}'")));
            }
            let k = key.as_str();
            match k {
                "name" => cfg.name = v.clone(),
                "dataset" => dataset = v.clone(),
                "synthetic.examples" => synth.examples = parse_value(k, v)?,
                "synthetic.features" => synth.features = parse_value(k, v)?,
                "synthetic.density" => synth.density = parse_value(k, v)?,
                "synthetic.noise" => synth.noise = parse_value(k, v)?,
                "synthetic.seed" => synth.seed = parse_value(k, v)?,
                "quadratic.dim" => quad.dim = parse_value(k, v)?,
                "quadratic.samples" => quad.samples = parse_value(k, v)?,
                "quadratic.eig_min" => quad.eig_min = parse_value(k, v)?,
                "quadratic.eig_max" => quad.eig_max = parse_value(k, v)?,
                "quadratic.linear_noise" => quad.linear_noise = parse_value(k, v)?,
                "quadratic.seed" => quad.seed = parse_value(k, v)?,
                "loss" => cfg.loss = parse_value(k, v)?,
                "reg_c" => cfg.reg_c = parse_list(k, v)?,
                "workers" => cfg.workers = parse_list(k, v)?,
                "partition" => cfg.partition = parse_value(k, v)?,
                "partition_seed" => cfg.partition_seed = parse_value(k, v)?,
                "algorithm" => cfg.algorithm = parse_value(k, v)?,
                "eta" => cfg.eta = parse_value(k, v)?,
                "mu" => cfg.mu = Some(parse_value(k, v)?),
                "gamma" => cfg.gamma = parse_value(k, v)?,
                "tau" => cfg.tau = Some(parse_value(k, v)?),
                "inner" => cfg.inner = parse_value(k, v)?,
                "solver" => cfg.solver = parse_value(k, v)?,
                "passes" => cfg.passes = parse_list(k, v)?,
                "step" => {
                    cfg.steps = v
                        .split(',')
                        .map(|s| match s.trim() {
                            "auto" => Ok(None),
                            other => parse_value(k, other).map(Some),
                        })
                        .collect::<Result<_>>()?
                }
                "seeds" => cfg.seeds = parse_list(k, v)?,
                "iterations" => cfg.budget = Budget::Iterations(parse_value(k, v)?),
                "comm_rounds" => cfg.budget = Budget::CommRounds(parse_value(k, v)?),
                "reference_iterations" => cfg.reference_iterations = parse_value(k, v)?,
                "record_wall_time" => cfg.record_wall_time = parse_bool(k, v)?,
                "output" => cfg.output = PathBuf::from(v),
                _ => return Err(Error::Config(format!("line {line}: unknown key '{key}'"))),
            }
        }
        if seen.contains_key("iterations") && seen.contains_key("comm_rounds") {
            return Err(Error::Config(
                "give either 'iterations' or 'comm_rounds', not both".into(),
            ));
        }
        cfg.source = match dataset.as_str() {
            "synthetic" => DataSource::Synthetic(synth),
            "quadratic" => DataSource::Quadratic(quad),
            path => DataSource::Libsvm(PathBuf::from(path)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.reg_c.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return bad("reg_c values must be > 0");
        }
        if self.workers.contains(&0) {
            return bad("workers must be >= 1");
        }
        if self.passes.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return bad("passes must be > 0");
        }
        if self
            .steps
            .iter()
            .flatten()
            .any(|h| !(*h > 0.0 && h.is_finite()))
        {
            return bad("step values must be > 0");
        }
        if self.steps.is_empty() {
            return bad("step needs at least one value");
        }
        if self.inner == 0 {
            return bad("inner must be >= 1");
        }
        if self.eta <= 0.0 || !(0.0..1.0).contains(&self.gamma) {
            return bad("need eta > 0 and 0 <= gamma < 1");
        }
        if self.mu.is_some_and(|m| m < 0.0) || self.tau.is_some_and(|t| t < 0.0) {
            return bad("mu and tau must be >= 0");
        }
        if self.partition == PartitionKind::ByLabel && self.workers.iter().any(|&k| k != 2) {
            return bad("by_label partitioning needs workers = 2");
        }
        Ok(())
    }

    /// Cross-product of every sweep axis, in a fixed order.
    pub fn expand(&self) -> Vec<RunSpec> {
        let mut runs = Vec::new();
        for &workers in &self.workers {
            for &reg_c in &self.reg_c {
                for &passes in &self.passes {
                    for &step in &self.steps {
                        for &seed in &self.seeds {
                            runs.push(RunSpec {
                                index: runs.len(),
                                workers,
                                reg_c,
                                passes,
                                step,
                                seed,
                                base: self.clone(),
                            });
                        }
                    }
                }
            }
        }
        runs
    }
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub index: usize,
    pub workers: usize,
    pub reg_c: f64,
    pub passes: f64,
    pub step: Option<f64>,
    pub seed: u64,
    pub base: ExperimentConfig,
}

impl RunSpec {
    pub fn id(&self) -> String {
        format!("run_{:03}", self.index)
    }
}

/// Parameters actually used by a run, after defaults are filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub spec: RunSpec,
    pub reg: f64,
    pub mu: f64,
    pub tau: f64,
    pub step: f64,
    pub iterations: usize,
    pub f_star: Option<f64>,
}

impl ResolvedRun {
    /// The run as a single-run configuration, in manifest form.
    pub fn to_config_text(&self) -> String {
        let b = &self.spec.base;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("name", b.name.clone());
        match &b.source {
            DataSource::Synthetic(x) => {
                kv("dataset", "synthetic".into());
                kv("synthetic.examples", x.examples.to_string());
                kv("synthetic.features", x.features.to_string());
                kv("synthetic.density", format!("{:?}", x.density));
                kv("synthetic.noise", format!("{:?}", x.noise));
                kv("synthetic.seed", x.seed.to_string());
            }
            DataSource::Quadratic(q) => {
                kv("dataset", "quadratic".into());
                kv("quadratic.dim", q.dim.to_string());
                kv("quadratic.samples", q.samples.to_string());
                kv("quadratic.eig_min", format!("{:?}", q.eig_min));
                kv("quadratic.eig_max", format!("{:?}", q.eig_max));
                kv("quadratic.linear_noise", format!("{:?}", q.linear_noise));
                kv("quadratic.seed", q.seed.to_string());
            }
            DataSource::Libsvm(p) => kv("dataset", p.display().to_string()),
        }
        kv("loss", b.loss.name().into());
        kv("reg_c", format!("{:?}", self.spec.reg_c));
        kv("workers", self.spec.workers.to_string());
        kv("partition", b.partition.name().into());
        kv("partition_seed", b.partition_seed.to_string());
        kv("algorithm", b.algorithm.name().into());
        kv("eta", format!("{:?}", b.eta));
        kv("mu", format!("{:?}", self.mu));
        kv("gamma", format!("{:?}", b.gamma));
        kv("tau", format!("{:?}", self.tau));
        kv("inner", b.inner.to_string());
        kv("solver", b.solver.name().into());
        kv("passes", format!("{:?}", self.spec.passes));
        kv("step", format!("{:?}", self.step));
        kv("seeds", self.spec.seed.to_string());
        kv("iterations", self.iterations.to_string());
        kv("reference_iterations", b.reference_iterations.to_string());
        kv("record_wall_time", b.record_wall_time.to_string());
        kv("output", b.output.display().to_string());
        s.push_str(&format!("# resolved: reg = {:?}\n", self.reg));
        s
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub resolved: ResolvedRun,
    pub csv: PathBuf,
    pub trace: RunTrace,
}

impl RunOutcome {
    pub fn final_value(&self) -> f64 {
        self.trace.last().f_value
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<RunOutcome>,
    pub manifest: PathBuf,
}

fn load_dataset(source: &DataSource) -> Result<Option<Dataset>> {
    match source {
        DataSource::Synthetic(s) => Ok(Some(normalize_and_bias(&synthetic_classification(s)?)?)),
        DataSource::Libsvm(p) => Ok(Some(normalize_and_bias(&parse_libsvm(p)?)?)),
        DataSource::Quadratic(_) => Ok(None),
    }
}

fn build_objective(
    spec: &RunSpec,
    data: Option<&Arc<Dataset>>,
) -> Result<(Objective, f64, Option<f64>)> {
    let b = &spec.base;
    match (&b.source, data) {
        (DataSource::Quadratic(q), _) => {
            let qs = QuadraticSpec {
                workers: spec.workers,
                ..*q
            };
            let (model, obj) = synth_quadratic(&qs)?;
            let opt = model.minimizer()?;
            let f_star = obj.value_unchecked(&opt);
            Ok((obj, 0.0, Some(f_star)))
        }
        (_, Some(ds)) => {
            let strategy = match b.partition {
                PartitionKind::Random => PartitionStrategy::Random {
                    seed: b.partition_seed,
                },
                PartitionKind::ByLabel => PartitionStrategy::ByLabel,
                PartitionKind::Contiguous => PartitionStrategy::Contiguous,
            };
            let part = partition(ds, spec.workers, strategy)?;
            let reg = 1.0 / (spec.reg_c * ds.len() as f64);
            let obj = Objective::erm(ds.clone(), Arc::new(part), b.loss, reg)?;
            Ok((obj, reg, None))
        }
        _ => unreachable!("data sets are loaded for every non-quadratic source"),
    }
}

fn resolve(spec: &RunSpec, obj: &Objective, reg: f64, known: Option<f64>) -> Result<ResolvedRun> {
    let b = &spec.base;
    let bounds = estimate_bounds(obj)?;
    let (l, lambda) = (bounds.smoothness, bounds.strong_convexity);
    let mu = b.mu.unwrap_or(0.0);
    let tau = b.tau.unwrap_or((l - lambda).max(0.0));
    let step = spec.step.unwrap_or(match b.algorithm {
        Algorithm::Gd | Algorithm::Agd => 1.0 / l,
        Algorithm::Dsvrg => 0.5 / l,
        Algorithm::Dane => 0.5 / (l + mu),
        Algorithm::Aide => 0.5 / (l + mu + tau),
    });
    let iterations = match b.budget {
        Budget::Iterations(n) => n,
        Budget::CommRounds(r) => r / b.algorithm.rounds_per_iteration(),
    };
    let f_star = match known {
        Some(v) => Some(v),
        None if b.reference_iterations > 0 => {
            if lambda <= 0.0 {
                return Err(Error::Config("a reference run needs lambda > 0".into()));
            }
            let w0 = DVector::zeros(obj.dim());
            let t = agd_baseline(obj, &w0, l, lambda, b.reference_iterations)?;
            Some(
                t.records
                    .iter()
                    .map(|r| r.f_value)
                    .fold(f64::INFINITY, f64::min),
            )
        }
        None => None,
    };
    Ok(ResolvedRun {
        spec: spec.clone(),
        reg,
        mu,
        tau,
        step,
        iterations,
        f_star,
    })
}

fn local_solver(run: &ResolvedRun) -> Result<LocalSolver> {
    let passes = run.spec.passes;
    Ok(match run.spec.base.solver {
        SolverKind::Svrg => LocalSolver::Svrg {
            budget: InnerBudget::Passes(passes),
            step: run.step,
        },
        SolverKind::Gd => LocalSolver::GradientDescent {
            iterations: passes.ceil() as usize,
            step: run.step,
        },
        SolverKind::Exact => LocalSolver::Exact,
    })
}

fn execute(run: &ResolvedRun, obj: &Objective) -> Result<RunTrace> {
    let b = &run.spec.base;
    let w0 = DVector::zeros(obj.dim());
    let n = run.iterations;
    match b.algorithm {
        Algorithm::Gd => gd_baseline(obj, &w0, run.step, n),
        Algorithm::Agd => {
            let bounds = estimate_bounds(obj)?;
            agd_baseline(obj, &w0, bounds.smoothness, bounds.strong_convexity, n)
        }
        Algorithm::Dane => {
            let cfg = DaneConfig::new(b.eta, run.mu, b.gamma, n, local_solver(run)?)
                .with_seed(run.spec.seed)
                .with_certificates(DistanceCertificates::Off);
            inexact_dane(obj, &w0, &cfg)
        }
        Algorithm::Aide => {
            let lambda = estimate_bounds(obj)?.strong_convexity;
            let inner = DaneConfig::new(b.eta, run.mu, b.gamma, b.inner, local_solver(run)?)
                .with_seed(run.spec.seed)
                .with_certificates(DistanceCertificates::Off);
            aide(
                obj,
                &w0,
                &AideConfig::new(lambda, run.tau, n.div_ceil(b.inner), inner),
            )
        }
        Algorithm::Dsvrg => {
            let per_worker = obj.local(0).num_samples();
            let inner_steps = ((run.spec.passes * per_worker as f64).floor() as usize).max(1);
            distributed_svrg(
                obj,
                &w0,
                &DsvrgConfig::new(n, inner_steps, run.step, run.spec.seed),
            )
        }
    }
}

/// Writes `iter,comm_rounds,local_passes,f_value,suboptimality_if_known,
/// grad_norm,wall_seconds`. Wall times are written as 0 unless requested,
/// which keeps reruns byte-identical.
pub fn write_run_csv<W: Write>(
    trace: &RunTrace,
    f_star: Option<f64>,
    wall_time: bool,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(
        out,
        "iter,comm_rounds,local_passes,f_value,suboptimality_if_known,grad_norm,wall_seconds"
    )?;
    for r in &trace.records {
        let sub = f_star
            .map(|f| format!("{:e}", r.f_value - f))
            .unwrap_or_default();
        let wall = if wall_time { r.wall_seconds } else { 0.0 };
        writeln!(
            out,
            "{},{},{},{:e},{},{:e},{}",
            r.iteration, r.comm_rounds, r.local_passes, r.f_value, sub, r.grad_norm, wall
        )?;
    }
    Ok(())
}

fn run_all(runs: Vec<RunSpec>, out_dir: &Path, parallel: bool) -> Result<ExperimentReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut cache: Vec<(DataSource, Option<Arc<Dataset>>)> = Vec::new();
    for r in &runs {
        if !cache.iter().any(|(s, _)| *s == r.base.source) {
            let ds = load_dataset(&r.base.source)?.map(Arc::new);
            cache.push((r.base.source.clone(), ds));
        }
    }
    let one = |spec: &RunSpec| -> Result<RunOutcome> {
        let data = cache
            .iter()
            .find(|(s, _)| *s == spec.base.source)
            .and_then(|(_, d)| d.as_ref());
        let (obj, reg, known) = build_objective(spec, data)?;
        let resolved = resolve(spec, &obj, reg, known)?;
        let trace =
            execute(&resolved, &obj).map_err(|e| Error::Config(format!("{}: {e}", spec.id())))?;
        let csv = out_dir.join(format!("{}.csv", spec.id()));
        let mut buf = Vec::new();
        write_run_csv(
            &trace,
            resolved.f_star,
            spec.base.record_wall_time,
            &mut buf,
        )
        .map_err(|e| Error::io(&csv, e))?;
        fs::write(&csv, buf).map_err(|e| Error::io(&csv, e))?;
        Ok(RunOutcome {
            resolved,
            csv,
            trace,
        })
    };
    let outcomes: Vec<RunOutcome> = if parallel {
        runs.par_iter().map(one).collect::<Result<_>>()?
    } else {
        runs.iter().map(one).collect::<Result<_>>()?
    };
    let manifest = out_dir.join(MANIFEST_FILE);
    let mut text = String::new();
    for o in &outcomes {
        text.push_str(&format!("[{}]\n", o.resolved.spec.id()));
        text.push_str(&o.resolved.to_config_text());
        text.push('\n');
    }
    fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(ExperimentReport {
        runs: outcomes,
        manifest,
    })
}

/// Runs every point of the sweep into `out_dir`, one CSV per run plus
/// `manifest.txt`. Runs execute in parallel when `parallel` is set; output
/// does not depend on it.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    parallel: bool,
) -> Result<ExperimentReport> {
    run_all(cfg.expand(), out_dir, parallel)
}

/// Parses a manifest back into its runs.
pub fn read_manifest(path: &Path) -> Result<Vec<RunSpec>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut runs = Vec::new();
    for (name, pairs) in split_sections(&text)? {
        let Some(name) = name else {
            if pairs.is_empty() {
                continue;
            }
            return Err(Error::Config(
                "manifest entries must sit inside [run_NNN] sections".into(),
            ));
        };
        let index = name
            .strip_prefix("run_")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad manifest section '{name}'")))?;
        let cfg = ExperimentConfig::from_pairs(&pairs)?;
        let mut expanded = cfg.expand();
        if expanded.len() != 1 {
            return Err(Error::Config(format!(
                "manifest section '{name}' is not a single run"
            )));
        }
        let mut run = expanded.remove(0);
        run.index = index;
        runs.push(run);
    }
    Ok(runs)
}

/// Re-executes every run of a manifest into `out_dir`.
pub fn replay_manifest(manifest: &Path, out_dir: &Path) -> Result<ExperimentReport> {
    run_all(read_manifest(manifest)?, out_dir, false)
}

/// Best run (lowest final objective) for each data set and algorithm in an
/// output directory, as a text table.
pub fn analyze(dir: &Path) -> Result<String> {
    let runs = read_manifest(&dir.join(MANIFEST_FILE))?;
    let mut best: BTreeMap<(String, String), (f64, String, usize)> = BTreeMap::new();
    for run in &runs {
        let csv = dir.join(format!("{}.csv", run.id()));
        let text = fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?;
        let last = text
            .lines()
            .skip(1)
            .last()
            .ok_or_else(|| Error::Config(format!("{} is empty", csv.display())))?;
        let cols: Vec<&str> = last.split(',').collect();
        let f: f64 = cols
            .get(3)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Config(format!("{}: malformed row", csv.display())))?;
        let rounds: usize = cols.get(1).and_then(|v| v.parse().ok()).unwrap_or(0);
        let key = (
            run.base.source.label(),
            run.base.algorithm.name().to_string(),
        );
        let entry = best.entry(key).or_insert((f64::INFINITY, String::new(), 0));
        if f < entry.0 {
            *entry = (f, run.id(), rounds);
        }
    }
    let mut out = String::from("dataset\talgorithm\tbest_run\tcomm_rounds\tfinal_f\n");
    for ((data, alg), (f, id, rounds)) in best {
        out.push_str(&format!("{data}\t{alg}\t{id}\t{rounds}\t{f:e}\n"));
    }
    Ok(out)
}
