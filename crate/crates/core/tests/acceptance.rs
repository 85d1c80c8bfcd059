//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use inexact_dane::aide::{select_params_strongly_convex, select_tau_quadratic};
use inexact_dane::analysis::{
    contraction_rho, delta_relatedness, estimate_bounds, linear_rate, related_quadratic_params,
    stationarity_rate, stochastic_delta_bound,
};
use inexact_dane::data_io::{
    normalize_and_bias, partition, synthetic_classification, SyntheticSpec,
};
use inexact_dane::dsvrg::deviation_between;
use inexact_dane::harness::{agd_baseline, synth_quadratic, QuadraticSpec};
use inexact_dane::{
    aide, inexact_dane, inexact_dane_nonconvex, solve_weakly_convex, Aggregation, AideConfig,
    DaneConfig, Dataset, DistanceCertificates, InnerBudget, LocalSolver, LossKind, Objective,
    PartitionStrategy, QuadraticModel, SmoothFunction, SparseRow, StopRule, WeakConvexEngine,
    WeaklyConvexOptions,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0))
        .qr()
        .q()
}

fn spd_with_spectrum(rng: &mut ChaCha8Rng, eig: &DVector<f64>) -> DMatrix<f64> {
    let q = random_orthogonal(rng, eig.len());
    let m = &q * DMatrix::from_diagonal(eig) * q.transpose();
    (&m + m.transpose()) * 0.5
}

fn symmetric_noise(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let e = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    (&e + e.transpose()) * (0.5 * scale)
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().min()
}

fn max_eig(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().max()
}

/// Local quadratics around a common SPD matrix, every `H_k ≻ 0`.
fn random_local_quadratics(
    rng: &mut ChaCha8Rng,
    d: usize,
    k: usize,
    spread: f64,
) -> QuadraticModel {
    loop {
        let eig = DVector::from_fn(d, |_, _| rng.random_range(0.5..3.0));
        let base = spd_with_spectrum(rng, &eig);
        let hs: Vec<DMatrix<f64>> = (0..k)
            .map(|_| &base + symmetric_noise(rng, d, spread))
            .collect();
        if hs.iter().all(|h| min_eig(h) > 0.05) {
            let ls = (0..k)
                .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            return QuadraticModel::new(hs, ls).unwrap();
        }
    }
}

fn quadratic_contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut steps = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for inst in 0..50 {
        let d = rng.random_range(1..=10);
        let k = rng.random_range(1..=8);
        let spread = rng.random_range(0.0..1.5);
        let model = random_local_quadratics(&mut rng, d, k, spread);
        let opt = model.minimizer().map_err(err)?;
        let mu = if inst % 2 == 0 {
            0.0
        } else {
            rng.random_range(0.0..2.0)
        };
        let gamma = if inst % 4 < 2 { 0.0 } else { 0.125 };
        let rho = contraction_rho(&model, 1.0, mu, gamma).map_err(err)?;
        let f = Objective::quadratic(Arc::new(model));
        let solver = if gamma == 0.0 {
            LocalSolver::Exact
        } else {
            LocalSolver::Blend { ratio: gamma }
        };
        let cfg = DaneConfig::new(1.0, mu, gamma, 15, solver)
            .with_certificates(DistanceCertificates::Off);
        let w0 = DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
        let t = inexact_dane(&f, &w0, &cfg).map_err(err)?;
        for pair in t.records.windows(2) {
            let before = (&pair[0].w - &opt).norm();
            let after = (&pair[1].w - &opt).norm();
            worst = worst.max(after - rho * before);
            ensure(after <= rho * before + 1e-9, || {
                format!("instance {inst}: {after} > {rho}·{before}")
            })?;
            steps += 1;
        }
    }
    Ok(format!("{steps} steps, max excess {worst:.2e}"))
}

fn related_parameter_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut checked, mut small, mut large) = (0, 0, 0);
    let mut slack = f64::INFINITY;
    while checked < 100 {
        let d = rng.random_range(2..=8);
        let k = rng.random_range(2..=8);
        let eig = DVector::from_fn(d, |_, _| rng.random_range(0.5..4.0));
        let base = spd_with_spectrum(&mut rng, &eig);
        let spread = if checked % 2 == 0 {
            rng.random_range(0.0..0.3)
        } else {
            rng.random_range(0.3..3.0)
        };
        let hs: Vec<DMatrix<f64>> = (0..k)
            .map(|_| &base + symmetric_noise(&mut rng, d, spread))
            .collect();
        let ls = (0..k)
            .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-spread..spread.max(1e-12))))
            .collect();
        let model = QuadraticModel::new(hs, ls).map_err(err)?;
        let lambda = min_eig(&model.aggregate().0);
        if lambda <= 0.0 {
            continue;
        }
        let delta = delta_relatedness(&model);
        let p = related_quadratic_params(delta, lambda).map_err(err)?;
        if 2.0 * 2f64.sqrt() * delta <= lambda {
            small += 1;
        } else {
            large += 1;
        }
        let rho = contraction_rho(&model, 1.0, p.mu, p.gamma).map_err(err)?;
        slack = slack.min(p.rho_bound - rho);
        ensure(rho <= p.rho_bound + 1e-12, || {
            format!("rho {rho} > bound {}", p.rho_bound)
        })?;
        checked += 1;
    }
    Ok(format!(
        "100 families ({small} small-δ, {large} large-δ), min slack {slack:.3e}"
    ))
}

fn logistic_problem(
    seed: u64,
    examples: usize,
    features: usize,
    workers: usize,
    reg: f64,
) -> Objective {
    let spec = SyntheticSpec {
        examples,
        features,
        seed,
        ..SyntheticSpec::default()
    };
    let ds = normalize_and_bias(&synthetic_classification(&spec).unwrap()).unwrap();
    let p = partition(&ds, workers, PartitionStrategy::Random { seed }).unwrap();
    Objective::erm(Arc::new(ds), Arc::new(p), LossKind::Logistic, reg).unwrap()
}

fn strongly_convex_constants() -> Outcome {
    let rho = linear_rate(1.0, 1.0, 1.0, 5.0, 0.125).map_err(err)?;
    // (7/8)²/6 − 2/36 − 2·(1/8)·6/36, substituted by hand
    let oracle = 0.765625 / 6.0 - 2.0 / 36.0 - 1.5 / 36.0;
    ensure(
        (rho - 0.030382).abs() <= 1e-6 && (rho - oracle).abs() <= 1e-12,
        || format!("rho = {rho}, oracle {oracle}"),
    )?;
    let mut certified = 0;
    for (seed, workers, reg) in [(1, 2, 0.1), (2, 4, 0.01), (3, 3, 0.05), (4, 2, 0.02)] {
        let f = logistic_problem(seed, 120, 6, workers, reg);
        let b = estimate_bounds(&f).map_err(err)?;
        let (l, lambda) = (b.smoothness, b.strong_convexity);
        let mu = 6.0 * l - lambda;
        let solver = LocalSolver::CertifiedGradient {
            target: 0.0625,
            step: 1.0 / (l + mu),
            max_iterations: 10_000,
        };
        let cfg = DaneConfig::new(1.0, mu, 0.125, 25, solver).with_certificates(
            DistanceCertificates::Reference {
                step: 1.0 / (l + mu),
            },
        );
        let w0 = DVector::from_element(f.dim(), 1.0);
        let t = inexact_dane(&f, &w0, &cfg).map_err(err)?;
        for pair in t.records.windows(2) {
            if pair[1].certificates.iter().all(|c| c.both_satisfied()) {
                certified += 1;
                ensure(pair[1].f_value <= pair[0].f_value, || {
                    format!(
                        "ascent at t = {}: {} > {}",
                        pair[1].iteration, pair[1].f_value, pair[0].f_value
                    )
                })?;
            }
        }
    }
    ensure(certified >= 50, || {
        format!("only {certified} certified steps")
    })?;
    Ok(format!(
        "rho = {rho:.7}, {certified} certified descent steps"
    ))
}

/// `½||w||² + a cos(w₁) + b sin(w₂)` with `|a|, |b| ≤ 2`: Hessian
/// eigenvalues in `[−1, 3]`.
#[derive(Debug)]
struct Wavy {
    a: f64,
    b: f64,
}

impl SmoothFunction for Wavy {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        0.5 * w.norm_squared() + self.a * w[0].cos() + self.b * w[1].sin()
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![w[0] - self.a * w[0].sin(), w[1] + self.b * w[1].cos()])
    }
}

fn grid_minimum(f: &Objective) -> f64 {
    let mut best = (f64::INFINITY, DVector::zeros(2));
    let n = 801;
    for i in 0..n {
        for j in 0..n {
            let w = DVector::from_vec(vec![
                -5.0 + 10.0 * i as f64 / (n - 1) as f64,
                -5.0 + 10.0 * j as f64 / (n - 1) as f64,
            ]);
            let v = f.eval(&w).unwrap();
            if v < best.0 {
                best = (v, w);
            }
        }
    }
    // polish the best cell with small gradient steps
    let mut w = best.1;
    for _ in 0..20_000 {
        let g = f.grad(&w).unwrap();
        w -= g / 3.0;
    }
    best.0.min(f.eval(&w).unwrap())
}

fn nonconvex_stationarity() -> Outcome {
    let theta_unit = stationarity_rate(1.0, 1.0, 10.0, 0.125).map_err(err)?;
    let oracle = 0.765625 / 11.0 - 2.0 / 81.0 - 2.75 / 81.0;
    ensure(
        theta_unit >= 0.01
            && (theta_unit - 0.01096).abs() <= 1e-5
            && (theta_unit - oracle).abs() < 1e-12,
        || format!("theta = {theta_unit}"),
    )?;
    let l = 3.0;
    let mu = 10.0 * l;
    let theta = stationarity_rate(l, 1.0, mu, 0.125).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checks = 0;
    for _ in 0..4 {
        let fs: Vec<Arc<dyn SmoothFunction>> = (0..3)
            .map(|_| {
                Arc::new(Wavy {
                    a: rng.random_range(-2.0..2.0),
                    b: rng.random_range(-2.0..2.0),
                }) as Arc<dyn SmoothFunction>
            })
            .collect();
        let f = Objective::from_functions(fs).map_err(err)?;
        let f_min = grid_minimum(&f);
        for _ in 0..3 {
            let w0 = DVector::from_vec(vec![
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
            ]);
            let solver = LocalSolver::CertifiedGradient {
                target: 0.125,
                step: 1.0 / (l + mu),
                max_iterations: 100_000,
            };
            let cfg = DaneConfig::new(1.0, mu, 0.125, 200, solver)
                .with_aggregation(Aggregation::PickWorker(0))
                .with_certificates(DistanceCertificates::Off);
            let t = inexact_dane_nonconvex(&f, &w0, &cfg, l).map_err(err)?;
            let gap = t.first().f_value - f_min;
            let mut best = f64::INFINITY;
            for (i, r) in t.records.iter().enumerate().take(t.len() - 1) {
                best = best.min(r.grad_norm * r.grad_norm);
                let steps = (i + 1) as f64;
                ensure(best <= gap / (theta * steps) * (1.0 + 1e-6), || {
                    format!("t = {steps}: {best} > {}", gap / (theta * steps))
                })?;
                checks += 1;
            }
        }
    }
    Ok(format!(
        "theta(L=1) = {theta_unit:.6}, {checks} stationarity bounds hold"
    ))
}

fn catalyst_parameter_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let threshold = |delta: f64| 2.0 * 2f64.sqrt() * delta;
    let mut cases = Vec::new();
    for _ in 0..1000 {
        cases.push((rng.random_range(0.0..3.0), rng.random_range(1e-3..5.0)));
    }
    for delta in [0.1, 0.5, 1.0, 2.0] {
        cases.push((delta, threshold(delta)));
    }
    cases.push((0.0, 1.0));
    let (mut above, mut below) = (0, 0);
    for (delta, lambda) in cases {
        let p = select_tau_quadratic(delta, lambda).map_err(err)?;
        if threshold(delta) >= lambda {
            above += 1;
            ensure(p.gamma == 1.0 / 16.0, || {
                format!("delta {delta}, lambda {lambda}: gamma {}", p.gamma)
            })?;
        }
        if threshold(delta) <= lambda {
            below += 1;
            ensure(p.tau == 0.0, || {
                format!("delta {delta}, lambda {lambda}: tau {}", p.tau)
            })?;
        }
        ensure(p.mu == 0.0 && p.eta == 1.0, || "mu/eta".into())?;
    }
    Ok(format!(
        "{above} cases with 2√2δ ≥ λ, {below} with 2√2δ ≤ λ"
    ))
}

fn svrg_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for run in 0..20u64 {
        let workers = rng.random_range(1..=4);
        let loss = [
            LossKind::Logistic,
            LossKind::Quadratic,
            LossKind::SmoothedHinge,
        ][run as usize % 3];
        let spec = SyntheticSpec {
            examples: rng.random_range(30..90),
            features: rng.random_range(2..8),
            seed: run,
            ..SyntheticSpec::default()
        };
        let ds = normalize_and_bias(&synthetic_classification(&spec).map_err(err)?).map_err(err)?;
        let p = partition(&ds, workers, PartitionStrategy::Random { seed: run }).map_err(err)?;
        let per_worker = p.parts().iter().map(|x| x.len()).min().unwrap();
        let f = Objective::erm(Arc::new(ds), Arc::new(p), loss, 0.01).map_err(err)?;
        let inner = rng.random_range(1..=per_worker);
        let w0 = DVector::from_fn(f.dim(), |_, _| rng.random_range(-1.0..1.0));
        let seed = 1000 + run;
        let dev = deviation_between(&f, &w0, 3, inner, 0.3, seed, seed).map_err(err)?;
        worst = worst.max(dev);
        ensure(dev <= 1e-9, || format!("run {run}: deviation {dev}"))?;
    }
    Ok(format!("20 runs, max deviation {worst:.1e}"))
}

/// Quadratic with prescribed condition number; every `H_k` shares the
/// spectrum bounds `[λ, L]`.
fn ill_conditioned(rng: &mut ChaCha8Rng, d: usize, k: usize) -> (QuadraticModel, f64, f64) {
    loop {
        let log_min = -3.2;
        let eig = DVector::from_fn(d, |i, _| 10f64.powf(log_min * i as f64 / (d - 1) as f64));
        let base = spd_with_spectrum(rng, &eig);
        let hs: Vec<DMatrix<f64>> = (0..k)
            .map(|_| &base + symmetric_noise(rng, d, 2e-4))
            .collect();
        let lambda = hs.iter().map(min_eig).fold(f64::INFINITY, f64::min);
        let l = hs.iter().map(max_eig).fold(0.0, f64::max);
        let agg = hs.iter().fold(DMatrix::zeros(d, d), |a, h| a + h) / k as f64;
        if lambda > 0.0 && max_eig(&agg) / min_eig(&agg) >= 1e3 {
            let ls = (0..k)
                .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            return (QuadraticModel::new(hs, ls).unwrap(), l, lambda);
        }
    }
}

fn aide_acceleration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut wins = 0;
    let mut summary = Vec::new();
    for _ in 0..10 {
        let (model, l, lambda) = ill_conditioned(&mut rng, 8, 4);
        let opt = model.minimizer().map_err(err)?;
        let f = Objective::quadratic(Arc::new(model));
        let target = f.eval(&opt).map_err(err)? + 1e-6;
        let stop = StopRule {
            grad_tol: None,
            target_value: Some(target),
        };
        let w0 = DVector::zeros(8);

        let mu = 6.0 * l - lambda;
        let solver = LocalSolver::CertifiedGradient {
            target: 0.125,
            step: 1.0 / (l + mu),
            max_iterations: 10_000,
        };
        let cfg = DaneConfig::new(1.0, mu, 0.125, 400_000, solver)
            .with_stop(stop)
            .with_certificates(DistanceCertificates::Off);
        let dane = inexact_dane(&f, &w0, &cfg).map_err(err)?;
        let dane_iters = dane.first_reaching(target).map(|r| r.comm_rounds / 2);

        let p = select_params_strongly_convex(l, lambda).map_err(err)?;
        let solver = LocalSolver::CertifiedGradient {
            target: p.gamma,
            step: 1.0 / (l + p.tau + p.mu),
            max_iterations: 10_000,
        };
        let inner = DaneConfig::new(p.eta, p.mu, p.gamma, 80, solver)
            .with_stop(stop)
            .with_certificates(DistanceCertificates::Off);
        let acc = aide(&f, &w0, &AideConfig::new(lambda, p.tau, 20_000, inner)).map_err(err)?;
        let aide_iters = acc.first_reaching(target).map(|r| r.comm_rounds / 2);
        if let (Some(a), Some(d)) = (aide_iters, dane_iters) {
            if a < d {
                wins += 1;
            }
        }
        summary.push(format!("{}/{}", fmt_opt(aide_iters), fmt_opt(dane_iters)));
    }
    ensure(wins >= 9, || {
        format!("AIDE faster on {wins}/10: {}", summary.join(" "))
    })?;
    Ok(format!(
        "AIDE faster on {wins}/10 (aide/dane inner iterations: {})",
        summary.join(" ")
    ))
}

fn fmt_opt(x: Option<usize>) -> String {
    x.map_or("-".into(), |v| v.to_string())
}

fn aide_degeneracy() -> Outcome {
    let f = logistic_problem(8, 120, 6, 3, 0.02);
    let solver = LocalSolver::Svrg {
        budget: InnerBudget::Passes(1.0),
        step: 0.5,
    };
    let inner = DaneConfig::new(1.0, 0.1, 0.125, 3, solver).with_seed(77);
    let w0 = DVector::from_element(f.dim(), 0.5);
    let a = aide(&f, &w0, &AideConfig::new(0.02, 0.0, 5, inner.clone())).map_err(err)?;
    let mut long = inner;
    long.iterations = 15;
    let d = inexact_dane(&f, &w0, &long).map_err(err)?;
    ensure(a.len() == d.len(), || {
        format!("lengths {} vs {}", a.len(), d.len())
    })?;
    for (x, y) in a.records.iter().zip(&d.records) {
        let same =
            x.w.iter()
                .zip(y.w.iter())
                .all(|(p, q)| p.to_bits() == q.to_bits())
                && x.f_value.to_bits() == y.f_value.to_bits()
                && x.grad_norm.to_bits() == y.grad_norm.to_bits()
                && x.comm_rounds == y.comm_rounds
                && x.local_passes.to_bits() == y.local_passes.to_bits();
        ensure(same, || format!("records differ at t = {}", x.iteration))?;
    }
    Ok(format!("{} records bitwise identical", a.len()))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn stochastic_relatedness() -> Outcome {
    let (d, k, n, l) = (5, 4, 50, 1.0);
    let alpha = 0.05;
    let mut ratios = Vec::new();
    let mut covered = 0;
    let mut draws = 0;
    for seed in 0..20u64 {
        let spec = QuadraticSpec {
            dim: d,
            workers: k,
            samples: n,
            eig_min: 0.0 + 1e-3,
            eig_max: l,
            linear_noise: l,
            seed,
        };
        let small = delta_relatedness(&synth_quadratic(&spec).map_err(err)?.0);
        let big = delta_relatedness(
            &synth_quadratic(&QuadraticSpec {
                samples: 4 * n,
                seed: seed + 10_000,
                ..spec
            })
            .map_err(err)?
            .0,
        );
        ratios.push(big / small);
        for (delta, samples) in [(small, n), (big, 4 * n)] {
            draws += 1;
            if delta <= stochastic_delta_bound(l, k, d, alpha, samples).map_err(err)? {
                covered += 1;
            }
        }
    }
    let m = median(ratios);
    let frac = covered as f64 / draws as f64;
    ensure((0.4..=0.6).contains(&m), || format!("median ratio {m}"))?;
    ensure(frac >= 0.95, || format!("bound covers {frac}"))?;
    Ok(format!(
        "median δ(4n)/δ(n) = {m:.3}, bound covers {covered}/{draws}"
    ))
}

/// Positives live on the first half of the features, negatives on the
/// second, so each worker of a label split sees a rank-deficient block.
fn label_supported_dataset(rng: &mut ChaCha8Rng, n: usize, half: usize) -> Dataset {
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        let offset = if y > 0.0 { 0 } else { half };
        let mut x = vec![0.0; 2 * half];
        for j in 0..half {
            x[offset + j] = rng.random_range(-1.0..1.0);
        }
        // small shared component keeps the classes overlapping
        x[(offset + half) % (2 * half)] += 0.05 * rng.random_range(-1.0..1.0);
        rows.push(SparseRow::from_dense(&x));
        labels.push(y);
    }
    Dataset::new(rows, labels, 2 * half).unwrap()
}

fn aggregate_form(f: &Objective) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(f.dim(), f.dim());
    let mut b = DVector::zeros(f.dim());
    for k in 0..f.workers() {
        let (ak, bk) = f.local_function(k).unwrap().quadratic_form().unwrap();
        a += ak;
        b += bk;
    }
    (a / f.workers() as f64, b / f.workers() as f64)
}

fn label_partition_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let raw = label_supported_dataset(&mut rng, 160, 4);
    let ds = Arc::new(normalize_and_bias(&raw).map_err(err)?);
    let split = Arc::new(partition(&ds, 2, PartitionStrategy::ByLabel).map_err(err)?);

    // inexact DANE, strongly convex logistic risk
    let reg = 0.05;
    let f = Objective::erm(ds.clone(), split.clone(), LossKind::Logistic, reg).map_err(err)?;
    let b = estimate_bounds(&f).map_err(err)?;
    let (l, lambda) = (b.smoothness, b.strong_convexity);
    let w0 = DVector::zeros(f.dim());
    let reference = agd_baseline(&f, &w0, l, lambda, 5000).map_err(err)?;
    let f_ref = reference
        .records
        .iter()
        .map(|r| r.f_value)
        .fold(f64::INFINITY, f64::min);
    let mu = 6.0 * l - lambda;
    let solver = LocalSolver::CertifiedGradient {
        target: 0.125,
        step: 1.0 / (l + mu),
        max_iterations: 10_000,
    };
    let cfg = DaneConfig::new(1.0, mu, 0.125, 3000, solver)
        .with_certificates(DistanceCertificates::Off)
        .with_stop(StopRule {
            grad_tol: None,
            target_value: Some(f_ref + 1e-4),
        });
    let t = inexact_dane(&f, &w0, &cfg).map_err(err)?;
    let sub = t.last().f_value - f_ref;
    ensure(sub <= 1e-4, || format!("inexact DANE suboptimality {sub}"))?;

    // exact DANE with μ = 0 on a nearly unregularized squared loss
    let g = Objective::erm(ds, split, LossKind::Quadratic, 1e-4).map_err(err)?;
    let (a, bvec) = aggregate_form(&g);
    let opt = a.cholesky().ok_or("aggregate not PD")?.solve(&(-bvec));
    let locals: Vec<f64> = (0..2)
        .map(|k| min_eig(&g.local_function(k).unwrap().quadratic_form().unwrap().0))
        .collect();
    let exact = DaneConfig::new(1.0, 0.0, 0.0, 10, LocalSolver::Exact)
        .with_certificates(DistanceCertificates::Off);
    let start = DVector::from_element(g.dim(), 1.0);
    let e = inexact_dane(&g, &start, &exact).map_err(err)?;
    let growth = e
        .records
        .windows(2)
        .map(|p| (&p[1].w - &opt).norm() / (&p[0].w - &opt).norm())
        .fold(0.0, f64::max);
    ensure(growth > 1.0, || {
        format!("exact DANE contracted every step (max ratio {growth})")
    })?;
    Ok(format!(
        "inexact DANE reaches {sub:.1e} in {} iterations; exact DANE distance grows by {growth:.1e}x in one step (local λ_min {:.1e}, {:.1e})",
        t.iterations(),
        locals[0],
        locals[1]
    ))
}

/// Logistic value, gradient and Hessian of the unregularized risk, from
/// the raw data; used only as an independent reference.
fn logistic_newton(ds: &Dataset) -> DVector<f64> {
    let d = ds.dim();
    let xs: Vec<DVector<f64>> = (0..ds.len()).map(|i| ds.row(i).to_dense(d)).collect();
    let mut w = DVector::zeros(d);
    for _ in 0..60 {
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for (x, &y) in xs.iter().zip(ds.labels()) {
            let z = y * x.dot(&w);
            let s = 1.0 / (1.0 + z.exp());
            g -= s * y * x;
            h += s * (1.0 - s) * x * x.transpose();
        }
        let n = ds.len() as f64;
        let step = (h / n).cholesky().unwrap().solve(&(g / n));
        w -= step;
    }
    w
}

fn weakly_convex_wrapper() -> Outcome {
    let spec = SyntheticSpec {
        examples: 200,
        features: 6,
        noise: 1.0,
        seed: 11,
        ..SyntheticSpec::default()
    };
    let ds =
        Arc::new(normalize_and_bias(&synthetic_classification(&spec).map_err(err)?).map_err(err)?);
    let p = Arc::new(partition(&ds, 4, PartitionStrategy::Random { seed: 11 }).map_err(err)?);
    let f = Objective::erm(ds.clone(), p, LossKind::Logistic, 0.0).map_err(err)?;
    let opt = logistic_newton(&ds);
    let f_ref = f.eval(&opt).map_err(err)?;
    ensure(f.grad(&opt).map_err(err)?.norm() < 1e-10, || {
        "reference solve did not converge".into()
    })?;
    let eps = 1e-2;
    let l = estimate_bounds(&f).map_err(err)?.smoothness;
    let w0 = DVector::zeros(f.dim());
    let bound =
        eps * (0.5 * (&opt - &w0).norm_squared() + f.eval(&w0).map_err(err)? - f_ref) + 1e-6;
    let mut parts = Vec::new();
    for (engine, iterations, inner) in [
        (WeakConvexEngine::Dane, 3000, 1),
        (WeakConvexEngine::Aide, 400, 5),
    ] {
        let mut opts = WeaklyConvexOptions::new(engine, l, iterations);
        opts.inner_iterations = inner;
        let t = solve_weakly_convex(&f, &w0, eps, &opts).map_err(err)?;
        let gap = t.last().f_value - f_ref;
        ensure(gap <= bound, || {
            format!("{engine:?}: gap {gap} > bound {bound}")
        })?;
        parts.push(format!("{engine:?} gap {gap:.2e}"));
    }
    Ok(format!("{} ≤ bound {bound:.2e}", parts.join(", ")))
}

fn gradient_finite_differences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checks = 0;
    let mut worst: f64 = 0.0;
    for loss in [
        LossKind::Quadratic,
        LossKind::Logistic,
        LossKind::SmoothedHinge,
    ] {
        let f = logistic_problem(12, 80, 6, 3, 0.01);
        let f = Objective::erm(
            Arc::new(f.dataset().unwrap().clone()),
            Arc::new(
                partition(
                    f.dataset().unwrap(),
                    3,
                    PartitionStrategy::Random { seed: 3 },
                )
                .map_err(err)?,
            ),
            loss,
            0.01,
        )
        .map_err(err)?;
        for _ in 0..100 {
            let w = DVector::from_fn(f.dim(), |_, _| rng.random_range(-2.0..2.0));
            let g = f.grad(&w).map_err(err)?;
            let h = 1e-6;
            let fd = DVector::from_fn(f.dim(), |j, _| {
                let mut e = DVector::zeros(f.dim());
                e[j] = h;
                (f.eval(&(&w + &e)).unwrap() - f.eval(&(&w - &e)).unwrap()) / (2.0 * h)
            });
            let rel = (&fd - &g).norm() / g.norm().max(1.0);
            worst = worst.max(rel);
            ensure(rel <= 1e-5, || {
                format!("{}: relative error {rel}", loss.name())
            })?;
            checks += 1;
        }
    }
    Ok(format!("{checks} points, worst relative error {worst:.1e}"))
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, Option<u64>); 12] = [
        (
            "quadratic contraction bound",
            quadratic_contraction,
            Some(10),
        ),
        (
            "related-family parameter rule",
            related_parameter_rule,
            Some(10),
        ),
        (
            "strongly convex rate constant and descent",
            strongly_convex_constants,
            Some(30),
        ),
        ("nonconvex stationarity", nonconvex_stationarity, Some(30)),
        (
            "catalyst parameters for quadratics",
            catalyst_parameter_rule,
            None,
        ),
        ("distributed SVRG equivalence", svrg_equivalence, Some(30)),
        ("AIDE acceleration", aide_acceleration, Some(120)),
        ("AIDE with tau = 0 matches DANE", aide_degeneracy, None),
        (
            "stochastic relatedness scaling",
            stochastic_relatedness,
            Some(60),
        ),
        (
            "label-partition robustness",
            label_partition_robustness,
            Some(60),
        ),
        ("weakly convex wrapper", weakly_convex_wrapper, Some(60)),
        (
            "loss gradient finite differences",
            gradient_finite_differences,
            None,
        ),
    ];
    let mut failures = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = started.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(secs)) if elapsed > Duration::from_secs(*secs) => {
                Err(format!("took {:.1}s, limit {secs}s", elapsed.as_secs_f64()))
            }
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!(
                "PASS {:>2} {name}: {detail} [{:.2}s]",
                i + 1,
                elapsed.as_secs_f64()
            ),
            Err(why) => {
                failures += 1;
                println!(
                    "FAIL {:>2} {name}: {why} [{:.2}s]",
                    i + 1,
                    elapsed.as_secs_f64()
                );
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
