//! Labeled sparse datasets: libsvm text ingestion, row normalization with a
//! bias feature, and assignment of examples to workers.
//!
//! On disk, feature indices are 1-based (`label idx:val idx:val ...`). In
//! memory every index is 0-based and the dense dimension is the largest
//! index seen in the file.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Sparse feature vector with strictly increasing 0-based indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRow {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::invalid(
                "sparse row: indices and values differ in length",
            ));
        }
        if indices.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::invalid(
                "sparse row: indices must be strictly increasing",
            ));
        }
        Ok(SparseRow { indices, values })
    }

    pub fn from_dense(x: &[f64]) -> Self {
        let (indices, values) = x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        SparseRow { indices, values }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// One past the largest stored index, or 0 for an empty row.
    pub fn extent(&self) -> usize {
        self.indices.last().map_or(0, |i| i + 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn dot(&self, w: &DVector<f64>) -> f64 {
        self.iter().map(|(i, v)| v * w[i]).sum()
    }

    /// `out += alpha * x`
    pub fn axpy(&self, alpha: f64, out: &mut DVector<f64>) {
        for (i, v) in self.iter() {
            out[i] += alpha * v;
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self, dim: usize) -> DVector<f64> {
        let mut out = DVector::zeros(dim);
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// N labeled examples with labels in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<SparseRow>,
    labels: Vec<f64>,
    dim: usize,
    preprocessed: bool,
}

impl Dataset {
    /// Builds a dataset from rows and ±1 labels. `dim` must cover every row.
    pub fn new(rows: Vec<SparseRow>, labels: Vec<f64>, dim: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::invalid("dataset: rows and labels differ in length"));
        }
        if let Some(bad) = labels.iter().find(|y| **y != 1.0 && **y != -1.0) {
            return Err(Error::NonBinaryLabels(vec![*bad]));
        }
        if let Some(r) = rows.iter().find(|r| r.extent() > dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.extent(),
            });
        }
        Ok(Dataset {
            rows,
            labels,
            dim,
            preprocessed: false,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &SparseRow {
        &self.rows[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    /// True once [`normalize_and_bias`] has been applied.
    pub fn is_preprocessed(&self) -> bool {
        self.preprocessed
    }

    pub fn max_row_norm_squared(&self) -> f64 {
        self.rows
            .iter()
            .map(SparseRow::norm_squared)
            .fold(0.0, f64::max)
    }
}

/// Reads a libsvm file from disk.
pub fn parse_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm_reader(BufReader::new(file))
}

/// Parses libsvm-formatted text. Blank lines and `#` comments are skipped.
///
/// Labels must be drawn from {-1, +1} or {0, 1}; in the latter case 0 maps
/// to -1.
pub fn parse_libsvm_reader<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut rows = Vec::new();
    let mut dim = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: lineno,
            message,
        };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("bad label {label_tok:?}")))?;
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected idx:val, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("bad feature index {idx:?}")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("bad feature value {val:?}")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value {val}")));
            }
            if indices.last().is_some_and(|&last| idx - 1 <= last) {
                return Err(err("feature indices must be strictly increasing".into()));
            }
            indices.push(idx - 1);
            values.push(val);
        }
        let row = SparseRow { indices, values };
        dim = dim.max(row.extent());
        raw_labels.push(label);
        rows.push(row);
    }
    let labels = map_labels(&raw_labels)?;
    Ok(Dataset {
        rows,
        labels,
        dim,
        preprocessed: false,
    })
}

fn map_labels(raw: &[f64]) -> Result<Vec<f64>> {
    let distinct: BTreeSet<i64> = raw
        .iter()
        .map(|y| {
            if y.fract() == 0.0 {
                *y as i64
            } else {
                i64::MAX
            }
        })
        .collect();
    let signed = distinct.iter().all(|y| *y == -1 || *y == 1);
    let zero_one = distinct.iter().all(|y| *y == 0 || *y == 1);
    if signed {
        Ok(raw.to_vec())
    } else if zero_one {
        Ok(raw
            .iter()
            .map(|y| if *y == 0.0 { -1.0 } else { 1.0 })
            .collect())
    } else {
        let mut seen: Vec<f64> = Vec::new();
        for y in raw {
            if !seen.contains(y) {
                seen.push(*y);
            }
        }
        Err(Error::NonBinaryLabels(seen))
    }
}

/// Writes a dataset back out in libsvm format (labels as `+1` / `-1`).
pub fn write_libsvm<W: Write>(ds: &Dataset, mut out: W) -> std::io::Result<()> {
    for (row, y) in ds.rows.iter().zip(&ds.labels) {
        write!(out, "{}", if *y > 0.0 { "+1" } else { "-1" })?;
        for (i, v) in row.iter() {
            write!(out, " {}:{}", i + 1, v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Scales every nonzero example to unit Euclidean norm, then appends a
/// constant bias feature equal to 1 at index `dim`.
///
/// A dataset may only be preprocessed once.
pub fn normalize_and_bias(ds: &Dataset) -> Result<Dataset> {
    if ds.preprocessed {
        return Err(Error::AlreadyPreprocessed);
    }
    let bias = ds.dim;
    let rows = ds
        .rows
        .iter()
        .map(|r| {
            let norm = r.norm_squared().sqrt();
            let mut indices = r.indices.clone();
            let mut values: Vec<f64> = if norm > 0.0 {
                r.values.iter().map(|v| v / norm).collect()
            } else {
                vec![0.0; r.values.len()]
            };
            indices.push(bias);
            values.push(1.0);
            SparseRow { indices, values }
        })
        .collect();
    Ok(Dataset {
        rows,
        labels: ds.labels.clone(),
        dim: ds.dim + 1,
        preprocessed: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionStrategy {
    /// Seeded shuffle, then a near-equal split.
    Random { seed: u64 },
    /// Positives on worker 0, negatives on worker 1. Requires two workers.
    ByLabel,
    /// Consecutive blocks in file order.
    Contiguous,
}

impl std::fmt::Display for PartitionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartitionStrategy::Random { seed } => write!(f, "random({seed})"),
            PartitionStrategy::ByLabel => write!(f, "by_label"),
            PartitionStrategy::Contiguous => write!(f, "contiguous"),
        }
    }
}

/// Disjoint, nonempty index sets covering `0..n`, one per worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    parts: Vec<Vec<usize>>,
    n: usize,
    strategy: Option<PartitionStrategy>,
}

impl Partition {
    /// Validates an explicit assignment.
    pub fn from_parts(parts: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("partition needs at least one worker"));
        }
        let mut seen = vec![false; n];
        for p in &parts {
            if p.is_empty() {
                return Err(Error::invalid("partition has an empty worker"));
            }
            for &i in p {
                if i >= n || seen[i] {
                    return Err(Error::invalid(format!(
                        "partition index {i} is out of range or repeated"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("partition does not cover every example"));
        }
        Ok(Partition {
            parts,
            n,
            strategy: None,
        })
    }

    /// Every example on a single worker.
    pub fn single(n: usize) -> Result<Self> {
        Partition::from_parts(vec![(0..n).collect()], n)
    }

    pub fn workers(&self) -> usize {
        self.parts.len()
    }

    pub fn total(&self) -> usize {
        self.n
    }

    pub fn part(&self, k: usize) -> &[usize] {
        &self.parts[k]
    }

    pub fn parts(&self) -> &[Vec<usize>] {
        &self.parts
    }

    pub fn strategy(&self) -> Option<PartitionStrategy> {
        self.strategy
    }
}

fn split_sizes(n: usize, k: usize) -> impl Iterator<Item = usize> {
    let (base, extra) = (n / k, n % k);
    (0..k).map(move |j| base + usize::from(j < extra))
}

/// Assigns the examples of `ds` to `k` workers.
pub fn partition(ds: &Dataset, k: usize, strategy: PartitionStrategy) -> Result<Partition> {
    let n = ds.len();
    if k == 0 {
        return Err(Error::invalid("partition needs at least one worker"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "cannot split {n} examples over {k} workers"
        )));
    }
    let parts = match strategy {
        PartitionStrategy::Contiguous | PartitionStrategy::Random { .. } => {
            let mut order: Vec<usize> = (0..n).collect();
            if let PartitionStrategy::Random { seed } = strategy {
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            }
            let mut parts = Vec::with_capacity(k);
            let mut start = 0;
            for size in split_sizes(n, k) {
                let mut p = order[start..start + size].to_vec();
                p.sort_unstable();
                parts.push(p);
                start += size;
            }
            parts
        }
        PartitionStrategy::ByLabel => {
            if k != 2 {
                return Err(Error::invalid(
                    "by_label partitioning requires exactly 2 workers",
                ));
            }
            let (pos, neg): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| ds.label(i) > 0.0);
            if pos.is_empty() || neg.is_empty() {
                return Err(Error::invalid(
                    "by_label partitioning needs both classes present",
                ));
            }
            vec![pos, neg]
        }
    };
    let mut p = Partition::from_parts(parts, n)?;
    p.strategy = Some(strategy);
    Ok(p)
}

/// Parameters of the planted-model binary classification generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub examples: usize,
    pub features: usize,
    /// Probability that a feature is nonzero in an example.
    pub density: f64,
    /// Standard deviation of the noise added to the planted margin.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            examples: 200,
            features: 10,
            density: 0.5,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// Draws a binary classification dataset: Gaussian sparse features, labels
/// from the sign of a noisy planted linear score. Labels are flipped where
/// needed so both classes are always present.
pub fn synthetic_classification(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.examples < 2 || spec.features == 0 {
        return Err(Error::invalid(
            "synthetic dataset needs >= 2 examples and >= 1 feature",
        ));
    }
    if !(spec.density > 0.0 && spec.density <= 1.0) || spec.noise < 0.0 {
        return Err(Error::invalid(
            "synthetic density must be in (0,1] and noise >= 0",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let planted: Vec<f64> = (0..spec.features)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut rows = Vec::with_capacity(spec.examples);
    let mut labels = Vec::with_capacity(spec.examples);
    for _ in 0..spec.examples {
        let mut x = vec![0.0; spec.features];
        for v in x.iter_mut() {
            if rng.random::<f64>() < spec.density {
                *v = rng.sample(StandardNormal);
            }
        }
        let score: f64 = x.iter().zip(&planted).map(|(a, b)| a * b).sum::<f64>()
            + spec.noise * rng.sample::<f64, _>(StandardNormal);
        labels.push(if score >= 0.0 { 1.0 } else { -1.0 });
        rows.push(SparseRow::from_dense(&x));
    }
    if labels.iter().all(|y| *y > 0.0) {
        labels[0] = -1.0;
    } else if labels.iter().all(|y| *y < 0.0) {
        labels[0] = 1.0;
    }
    Dataset::new(rows, labels, spec.features)
}
