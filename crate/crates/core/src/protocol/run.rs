use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use super::estimate::{estimate_invariant_from_tally, BootstrapConfig, Estimate, InvariantEstimate, Tally};
use super::rng::{Purpose, Streams};
use super::sampling::{simulate_state, MeasurementRecord};
use super::ProtocolError;
use crate::channel::{Channel, ChannelModel};
use crate::codec::{decode, encode, Constellation, Message, CARRIER_IDS};
use crate::exec::Execution;
use crate::invariants::{eval_invariant, lookup};
use crate::opexpr::{pauli_decompose, PauliString};
use crate::qcore::{density_of, make_state, Complex, Party, Pauli};

/// Default round count: every three-body string then expects about 7400 qualifying rounds.
pub const DEFAULT_ROUNDS: usize = 200_000;

/// Below this many qualifying rounds for some carrier string the report flags insufficient statistics.
pub const MIN_STRING_COUNT: u64 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOptions {
    pub resamples: usize,
    pub constellation: Constellation,
    pub exec: Execution,
    pub timing: bool,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            resamples: super::estimate::DEFAULT_RESAMPLES,
            constellation: Constellation::default(),
            exec: Execution::default(),
            timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelEcho {
    pub model: ChannelModel,
    pub a: f64,
    pub b: f64,
}

impl From<&Channel> for ChannelEcho {
    fn from(ch: &Channel) -> Self {
        Self {
            model: ch.model(),
            a: ch.params().a(),
            b: ch.params().b(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolReport {
    pub channel: ChannelEcho,
    pub rounds: usize,
    pub seed: u64,
    pub resamples: usize,
    pub sent: String,
    pub estimates: Vec<InvariantEstimate>,
    /// Exact post-channel values of the carriers, for reference.
    pub exact: BTreeMap<String, Complex>,
    pub decoded: Option<String>,
    pub decode_error: Option<String>,
    pub symbol_correct: Option<[bool; 4]>,
    pub success: bool,
    pub insufficient_statistics: bool,
    pub min_qualifying_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

impl ProtocolReport {
    pub fn decoded_message(&self) -> Result<&str, ProtocolError> {
        self.decoded
            .as_deref()
            .ok_or_else(|| ProtocolError::DecodingUnavailable(self.decode_error.clone().unwrap_or_default()))
    }
}

/// Union of the Pauli strings entering the carrier numerators and denominators.
pub fn carrier_strings() -> Vec<PauliString> {
    let mut set = BTreeSet::new();
    for id in CARRIER_IDS {
        let spec = lookup(id).expect("carrier in registry");
        for op in [spec.numerator_operator(), spec.denominator_operator()] {
            set.extend(pauli_decompose(op).coeffs().keys().copied());
        }
    }
    set.into_iter().collect()
}

struct Decoded {
    estimates: Vec<InvariantEstimate>,
    message: Result<Message, String>,
    min_count: u64,
}

fn estimate_and_decode(tally: &Tally, seed: u64, opts: &ProtocolOptions) -> Decoded {
    let mut cfg = BootstrapConfig::new(opts.resamples, seed);
    cfg.exec = opts.exec;
    let mut estimates = Vec::new();
    let mut values = BTreeMap::new();
    let mut problems = Vec::new();
    let mut min_count = u64::MAX;
    for id in CARRIER_IDS {
        let spec = lookup(id).expect("carrier in registry");
        match estimate_invariant_from_tally(tally, spec, &cfg) {
            Ok(est) => {
                min_count = min_count.min(est.min_count);
                match est.value {
                    Some(v) => {
                        values.insert(id.to_string(), v);
                    }
                    None => problems.push(format!("{id} degenerate")),
                }
                estimates.push(est);
            }
            Err(e) => {
                min_count = 0;
                problems.push(format!("{id}: {e}"));
            }
        }
    }
    let message = if problems.is_empty() {
        decode(&values, &opts.constellation).map_err(|e| e.to_string())
    } else {
        Err(problems.join("; "))
    };
    Decoded {
        estimates,
        message,
        min_count: if min_count == u64::MAX { 0 } else { min_count },
    }
}

fn transmitted_records(msg: &Message, ch: &Channel, n: usize, seed: u64, opts: &ProtocolOptions) -> Result<(Vec<MeasurementRecord>, BTreeMap<String, Complex>), ProtocolError> {
    let coeffs = encode(msg, &opts.constellation)?;
    let rho = ch.apply(&density_of(&make_state(&coeffs)));
    let exact = CARRIER_IDS
        .iter()
        .filter_map(|id| {
            let v = eval_invariant(lookup(id)?, &rho).value?;
            Some((id.to_string(), v))
        })
        .collect();
    Ok((simulate_state(&rho, n, seed, opts.exec), exact))
}

/// Encode, transmit `n` rounds, estimate I5–I8 from the pooled records and decode.
pub fn run_protocol(msg: &Message, ch: &Channel, n: usize, seed: u64, opts: &ProtocolOptions) -> Result<ProtocolReport, ProtocolError> {
    let start = Instant::now();
    let (records, exact) = transmitted_records(msg, ch, n, seed, opts)?;
    let decoded = estimate_and_decode(&Tally::from_records(&records), seed, opts);
    Ok(assemble(msg, ch, n, seed, opts, decoded, exact, start))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    msg: &Message,
    ch: &Channel,
    n: usize,
    seed: u64,
    opts: &ProtocolOptions,
    decoded: Decoded,
    exact: BTreeMap<String, Complex>,
    start: Instant,
) -> ProtocolReport {
    let (decoded_msg, decode_error) = match &decoded.message {
        Ok(m) => (Some(*m), None),
        Err(e) => (None, Some(e.clone())),
    };
    let symbol_correct = decoded_msg.map(|d| {
        let (a, b) = (d.symbols(), msg.symbols());
        [0, 1, 2, 3].map(|k| a[k] == b[k])
    });
    ProtocolReport {
        channel: ch.into(),
        rounds: n,
        seed,
        resamples: opts.resamples,
        sent: msg.to_string(),
        estimates: decoded.estimates,
        exact,
        decoded: decoded_msg.map(|m| m.to_string()),
        decode_error,
        symbol_correct,
        success: decoded_msg == Some(*msg),
        insufficient_statistics: decoded.min_count < MIN_STRING_COUNT,
        min_qualifying_count: decoded.min_count,
        elapsed_ms: opts.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
    }
}

/// Replaces `party`'s outcomes by fresh fair coin flips, round by round.
pub fn randomize_party(records: &[MeasurementRecord], party: Party, seed: u64, exec: Execution) -> Vec<MeasurementRecord> {
    let streams = Streams::new(seed, Purpose::Coins);
    exec.map_range(records.len(), |i| {
        let mut r = records[i];
        let flip: bool = streams.stream(r.round).random();
        r.outcomes[party.slot()] = if flip { 1 } else { -1 };
        r
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StringComparison {
    pub string: String,
    /// Identity at the withheld slot: the estimate cannot change.
    pub identity_at_withheld: bool,
    pub control: Estimate,
    pub randomized: Estimate,
    /// Randomized mean within four standard errors of zero.
    pub consistent_with_zero: bool,
    /// Randomized and control means agree within one standard error.
    pub consistent_with_control: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollabReport {
    pub withheld: Option<Party>,
    pub control: ProtocolReport,
    pub randomized: ProtocolReport,
    pub decode_success: bool,
    pub strings: Vec<StringComparison>,
    /// Strings with a non-identity factor at the withheld slot.
    pub lost_signal: Vec<String>,
}

/// Estimation with one party's outcomes replaced by coin flips, against the full-data control.
pub fn collaboration_test(
    msg: &Message,
    ch: &Channel,
    n: usize,
    seed: u64,
    withheld: Option<Party>,
    opts: &ProtocolOptions,
) -> Result<CollabReport, ProtocolError> {
    let start = Instant::now();
    let (records, exact) = transmitted_records(msg, ch, n, seed, opts)?;
    let control_tally = Tally::from_records(&records);
    let control = assemble(msg, ch, n, seed, opts, estimate_and_decode(&control_tally, seed, opts), exact.clone(), start);

    let randomized_tally = match withheld {
        Some(party) => Tally::from_records(&randomize_party(&records, party, seed, opts.exec)),
        None => control_tally.clone(),
    };
    let randomized = assemble(
        msg,
        ch,
        n,
        seed,
        opts,
        estimate_and_decode(&randomized_tally, seed, opts),
        exact,
        start,
    );

    let mut strings = Vec::new();
    let mut lost_signal = Vec::new();
    for s in carrier_strings() {
        let identity_at_withheld = withheld.is_none_or(|p| s.factor(p) == Pauli::I);
        if !identity_at_withheld {
            lost_signal.push(s.label());
        }
        let (Ok(c), Ok(r)) = (control_tally.estimate(&s), randomized_tally.estimate(&s)) else {
            continue;
        };
        strings.push(StringComparison {
            string: s.label(),
            identity_at_withheld,
            consistent_with_zero: r.mean.abs() <= 4.0 * r.stderr,
            consistent_with_control: (r.mean - c.mean).abs() <= r.stderr.max(c.stderr),
            control: c,
            randomized: r,
        });
    }

    Ok(CollabReport {
        withheld,
        decode_success: randomized.success,
        control,
        randomized,
        strings,
        lost_signal,
    })
}
