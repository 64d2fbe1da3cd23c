//! Monte Carlo simulator and closed-form oracle for two independent quantum
//! sources observed by two independent detectors.
//!
//! Each source emits "wavicles": a bra and a ket carrying opposite copies of
//! a random emission phase. A detector needs one bra and one ket to produce a
//! reading. When both come from the same source the phase cancels and the
//! detector sees an ordinary pure-state measurement. When the bra comes from
//! one source and the ket from the other, the reading carries the phase
//! difference between the sources; it averages to zero at each detector but
//! survives in the product of the two detectors' readings.
//!
//! The crate is organised bottom-up:
//!
//! - [`algebra`]: small complex linear algebra, spin operators, Jacobi
//!   eigensolver.
//! - [`wavicle`]: sources, emission events and the four bra/ket channels.
//! - [`rng`]: counter-based random streams keyed by seed, stream and trial.
//! - [`sampler`]: per-event detector readings for each channel.
//! - [`estimator`]: mergeable accumulators for separate and joint averages.
//! - [`oracle`]: closed-form expectations and a brute-force two-particle
//!   check.
//! - [`experiments`]: configurable scans comparing Monte Carlo with the
//!   oracle.

pub mod algebra;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod wavicle;

pub use error::{Error, Result};
