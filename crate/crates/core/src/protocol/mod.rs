//! Monte Carlo simulation of the three-party transfer.
//!
//! Each round the sender prepares the encoded state, the channel acts, and
//! each party measures along a uniformly random axis. Afterwards the parties
//! pool their axes and outcomes, sift rounds per Pauli string, and estimate
//! the carrier invariants.

mod estimate;
mod rng;
mod run;
mod sampling;

pub use estimate::{
    estimate_expectation, estimate_invariant, estimate_string, BootstrapConfig, ComplexInterval, Estimate,
    InvariantEstimate, Interval, Tally, DEGENERACY_SIGMAS, DEFAULT_RESAMPLES,
};
pub use rng::{derive_seed, Purpose, Streams};
pub use run::{
    carrier_strings, collaboration_test, randomize_party, run_protocol, CollabReport, ProtocolOptions,
    ProtocolReport, StringComparison, DEFAULT_ROUNDS, MIN_STRING_COUNT,
};
pub use sampling::{
    basis_index, bases_of_index, read_records_csv, simulate, simulate_state, write_records_csv, BornTable,
    MeasurementRecord,
};

use thiserror::Error;

use crate::codec::CodecError;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("no rounds qualify for Pauli string {0}")]
    NoQualifyingRounds(String),
    #[error("decoding unavailable: {0}")]
    DecodingUnavailable(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("bad record file: {0}")]
    Records(String),
}
