//! Per-iteration run records and their CSV form.

use std::io::Write;

use nalgebra::DVector;

use crate::local_solvers::InexactnessCertificate;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Global iteration counter; 0 is the starting point.
    pub iteration: usize,
    /// Outer (catalyst) iteration for accelerated runs.
    pub outer: Option<usize>,
    pub w: DVector<f64>,
    pub f_value: f64,
    pub grad_norm: f64,
    /// Cumulative communication rounds.
    pub comm_rounds: usize,
    /// Cumulative passes over local data, averaged over workers.
    pub local_passes: f64,
    /// One certificate per worker for the step that produced `w`.
    pub certificates: Vec<InexactnessCertificate>,
    /// Seconds since the run started.
    pub wall_seconds: f64,
}

/// Full history of a run, including the initial point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> &TraceRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &TraceRecord {
        self.records
            .last()
            .expect("trace always holds the initial point")
    }

    /// Number of iterations performed (records minus the initial point).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// Equality of everything except wall-clock times.
    pub fn same_path(&self, other: &RunTrace) -> bool {
        self.len() == other.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.iteration == b.iteration
                    && a.outer == b.outer
                    && a.w == b.w
                    && a.f_value.to_bits() == b.f_value.to_bits()
                    && a.grad_norm.to_bits() == b.grad_norm.to_bits()
                    && a.comm_rounds == b.comm_rounds
                    && a.local_passes.to_bits() == b.local_passes.to_bits()
                    && a.certificates == b.certificates
            })
    }

    pub fn iterates(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.records.iter().map(|r| &r.w)
    }

    /// First record with `f_value ≤ target`.
    pub fn first_reaching(&self, target: f64) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.f_value <= target)
    }

    /// Writes `t,f,grad_norm,comm_rounds,local_passes`, plus an `outer`
    /// column when any record carries an outer index.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let outer = self.records.iter().any(|r| r.outer.is_some());
        write!(out, "t,f,grad_norm,comm_rounds,local_passes")?;
        if outer {
            write!(out, ",outer")?;
        }
        writeln!(out)?;
        for r in &self.records {
            write!(
                out,
                "{},{},{},{},{}",
                r.iteration, r.f_value, r.grad_norm, r.comm_rounds, r.local_passes
            )?;
            if outer {
                write!(out, ",{}", r.outer.map_or(0, |o| o))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
