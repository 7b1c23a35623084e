//! Robust-training toolkit built around a constrained reweighting adversary.
//!
//! The centerpiece is bitrate-constrained distributionally robust
//! optimization: a learner minimizes a reweighted loss while an adversary,
//! restricted by an information or norm penalty, picks per-example weights
//! that emphasize hard-but-simple slices of the data. Alongside it live the
//! classical baselines (ERM, CVaR DRO, Group DRO, JTT), a synthetic
//! group-shift benchmark with injectable label noise, ranking metrics for
//! the learned weights, and an online solver for the finite-group CVaR game
//! with a follow-the-regularized-leader adversary.
//!
//! Modules:
//! - [`diffcore`]: parameter containers, stable scalar ops, finite-difference
//!   gradient checking.
//! - [`synthdata`]: the synthetic benchmark (core / spurious / noise-block
//!   features, group labels, label noise, splits, CSV round-trip).
//! - [`models`]: linear and one-hidden-layer learners plus the three
//!   adversary parameterizations (per-label linear heads with l2 or l1
//!   penalties, and a variational bottleneck encoder).
//! - [`dro`]: the five trainers and the CVaR primitives.
//! - [`game`]: finite-group CVaR game, exponential-weights adversary,
//!   duality-gap certificates.
//! - [`metrics`]: per-group accuracy, minority precision/recall, noisy
//!   capture, feature alignment.
//! - [`gradcheck`]: ready-made op bundles wiring models, trainers and the
//!   game into the gradient checker.
//! - [`cli`]: config parsing, experiment runner, report and trace CSV
//!   emission backing the `brdro` binary.
//!
//! Every floating-point computation uses `f64`. All randomness flows
//! through explicitly seeded ChaCha streams, so identical configs produce
//! byte-identical output files.

pub mod cli;
pub mod diffcore;
pub mod dro;
pub mod error;
pub mod game;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod synthdata;
pub mod textio;

pub use error::{Error, Result};
