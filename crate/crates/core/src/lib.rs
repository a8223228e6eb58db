//! Receive beamforming for one-dimensionally modulated multiple-access uplinks.
//!
//! The crate covers the full pipeline for a single-input multiple-output
//! multiple access channel where every user sends L-PAM symbols:
//!
//! - [`modem`]: PAM alphabets, interferer tuple enumeration, threshold decisions.
//! - [`channel`]: Rayleigh channels, CSI perturbation, received signal synthesis.
//! - [`analysis`]: exact per-user symbol error probability, its single-term
//!   upper bound, SMINR metrics, feasibility margins and the error floor.
//! - [`beamformers`]: ZF, MMSE, phase alignment and the closed-form maximum
//!   SMINR beamformer (maximum eigenvector of a lifted real matrix).
//! - [`convex`]: a log-barrier solver for minimum-error-probability and
//!   amplitude-SMINR programs on the unit ball.
//! - [`sim`]: Monte-Carlo SER sweeps, sum rate, 64-QAM reference and
//!   imperfect-CSI experiments.
//! - [`check`]: property suites runnable from the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod beamformers;
pub mod channel;
pub mod check;
pub mod convex;
pub mod eigen;
mod error;
pub mod modem;
pub mod sim;

pub use analysis::{BeamVector, EffectiveGains};
pub use channel::ChannelMatrix;
pub use error::{Error, Result};
pub use modem::{Constellation, InterfererTupleSet};

pub use num_complex::Complex64;
