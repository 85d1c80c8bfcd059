//! Communication-efficient distributed optimization on a simulated
//! synchronous cluster.
//!
//! The crate provides inexact DANE, its catalyst-accelerated variant AIDE
//! and distributed SVRG over `K` deterministic workers, along with an
//! analysis module that computes the certified contraction and rate
//! constants of each method, GD/AGD baselines and an experiment harness.
//!
//! ```
//! use std::sync::Arc;
//! use nalgebra::{dmatrix, dvector};
//! use inexact_dane::{inexact_dane, DaneConfig, LocalSolver, Objective, QuadraticModel};
//!
//! let model = QuadraticModel::new(
//!     vec![dmatrix![2.0, 0.0; 0.0, 1.0], dmatrix![1.0, 0.0; 0.0, 2.0]],
//!     vec![dvector![1.0, 0.0], dvector![0.0, 1.0]],
//! )?;
//! let f = Objective::quadratic(Arc::new(model));
//! let cfg = DaneConfig::new(1.0, 0.0, 0.0, 30, LocalSolver::Exact);
//! let trace = inexact_dane(&f, &dvector![0.0, 0.0], &cfg)?;
//! assert!(trace.last().grad_norm < 1e-10);
//! # Ok::<(), inexact_dane::Error>(())
//! ```

pub mod aide;
pub mod analysis;
pub mod dane;
pub mod data_io;
pub mod dsvrg;
pub mod error;
pub mod harness;
pub mod local_solvers;
pub mod objectives;
pub mod trace;

pub use aide::{aide, AideConfig};
pub use dane::{
    dane_step, inexact_dane, inexact_dane_nonconvex, solve_weakly_convex, Aggregation,
    ClusterState, DaneConfig, DistanceCertificates, Execution, StopRule, WeakConvexEngine,
    WeaklyConvexOptions,
};
pub use data_io::{Dataset, Partition, PartitionStrategy, SparseRow};
pub use dsvrg::{distributed_svrg, equivalence_check, DsvrgConfig};
pub use error::{Error, Result};
pub use local_solvers::{Inexactness, InnerBudget, LocalSolver, SubproblemSpec};
pub use objectives::{LossKind, Objective, QuadraticModel, SmoothFunction};
pub use trace::{RunTrace, TraceRecord};
