//! Fault-tolerant tall-and-skinny QR on a simulated message-passing runtime.
//!
//! A tall matrix is split into `P` row blocks, one per simulated process.
//! Each process factors its block locally, and the triangular factors are
//! then reduced pairwise over `log2 P` butterfly rounds. Four reduction
//! variants are provided:
//!
//! - [`AlgorithmKind::Baseline`]: a binary tree, only rank 0 ends with R.
//! - [`AlgorithmKind::Redundant`]: a butterfly, every survivor ends with R.
//! - [`AlgorithmKind::Replace`]: on a dead buddy, ask one of its replicas.
//! - [`AlgorithmKind::SelfHealing`]: spawn a replacement and restore it from
//!   a twin, so the world returns to full strength.
//!
//! Fail-stop crashes are injected at phase boundaries by a
//! [`FailureSchedule`]. The same configuration always produces the same
//! bytes.
//!
//! ```
//! use ft_tsqr::{run, AlgorithmKind, RunConfig, Verdict};
//!
//! let config = RunConfig::new(AlgorithmKind::Redundant, 4, 64, 4, 7)
//!     .with_schedule("2@0:after".parse()?);
//! let report = run(&config)?;
//! assert_eq!(report.verdict(), Verdict::Success);
//! assert_eq!(report.holders.len(), 2);
//! # Ok::<(), ft_tsqr::Error>(())
//! ```

pub mod cli;
pub mod densela;
pub mod error;
pub mod simnet;
pub mod tsqr;

pub use densela::{Matrix, TriangularFactor};
pub use error::{Error, Result};
pub use simnet::{FailureEvent, FailureSchedule, Phase, ProcStatus, Rank};
pub use tsqr::{run, run_with_matrix, AlgorithmKind, RunConfig, RunReport, Verdict};
