//! Noise-invariant three-party information transfer over turbulent OAM
//! channels.
//!
//! The sender prepares a five-term three-carrier state whose relative
//! phases carry a message. Ratios of three-party correlators (the
//! invariants) survive the crosstalk channel unchanged, so the receivers
//! recover the message from pooled random-basis measurement statistics,
//! but only when all three pool their data.
//!
//! Module map:
//! - [`qcore`]: states, observables, Born probabilities
//! - [`opexpr`]: operator-expression parser, evaluator, Pauli decomposition
//! - [`channel`]: collective and independent crosstalk channels
//! - [`invariants`]: invariant registry, exact evaluation, invariance scans
//! - [`codec`]: message ↔ coefficient mapping through I5–I8
//! - [`protocol`]: Monte Carlo rounds, estimation, collaboration test
//! - [`cli`]: command-line front end

pub mod channel;
pub mod cli;
pub mod codec;
pub mod exec;
pub mod invariants;
pub mod opexpr;
pub mod protocol;
pub mod qcore;

pub use channel::{make_channel, Channel, ChannelModel, ChannelParams};
pub use codec::{Constellation, Message};
pub use exec::Execution;
pub use qcore::{Complex, DensityMatrix, Operator, Party, StateCoefficients, StateVector};
