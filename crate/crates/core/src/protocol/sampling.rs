use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{Purpose, Streams};
use super::ProtocolError;
use crate::channel::Channel;
use crate::exec::Execution;
use crate::qcore::{born_probabilities, density_of, make_state, outcomes_of_index, Axis, DensityMatrix, StateCoefficients};

/// One round as announced by the three parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub round: u64,
    pub bases: [Axis; 3],
    /// Each entry is `+1` or `-1`.
    pub outcomes: [i8; 3],
}

/// Index `9·A + 3·B + C` of a basis triple, axes ordered x, y, z.
pub fn basis_index(bases: [Axis; 3]) -> usize {
    bases.iter().fold(0, |acc, b| acc * 3 + b.index())
}

pub fn bases_of_index(index: usize) -> [Axis; 3] {
    [index / 9, (index / 3) % 3, index % 3].map(Axis::from_index)
}

/// Exact outcome distribution for each of the 27 basis triples.
#[derive(Debug, Clone, PartialEq)]
pub struct BornTable {
    probs: [[f64; 8]; 27],
}

impl BornTable {
    pub fn new(rho: &DensityMatrix) -> Self {
        let mut probs = [[0.0; 8]; 27];
        for (k, row) in probs.iter_mut().enumerate() {
            *row = born_probabilities(rho, bases_of_index(k));
        }
        Self { probs }
    }

    pub fn probabilities(&self, bases: [Axis; 3]) -> &[f64; 8] {
        &self.probs[basis_index(bases)]
    }

    fn sample_outcome(&self, basis: usize, u: f64) -> usize {
        let row = &self.probs[basis];
        let total: f64 = row.iter().sum();
        let target = u * total;
        let mut acc = 0.0;
        let mut last_nonzero = 0;
        for (k, &p) in row.iter().enumerate() {
            if p > 0.0 {
                last_nonzero = k;
                acc += p;
                if target < acc {
                    return k;
                }
            }
        }
        last_nonzero
    }

    /// Draws one round from its own counter-based stream.
    pub fn sample_round(&self, streams: &Streams, round: u64) -> MeasurementRecord {
        let mut rng = streams.stream(round);
        let bases = [(); 3].map(|_| Axis::from_index(rng.random_range(0..3)));
        let u: f64 = rng.random();
        let outcome = self.sample_outcome(basis_index(bases), u);
        MeasurementRecord {
            round,
            bases,
            outcomes: outcomes_of_index(outcome),
        }
    }
}

/// `n` rounds of preparation, transmission and random local measurement.
pub fn simulate(coeffs: &StateCoefficients, ch: &Channel, n: usize, seed: u64) -> Vec<MeasurementRecord> {
    let rho = ch.apply(&density_of(&make_state(coeffs)));
    simulate_state(&rho, n, seed, Execution::default())
}

/// Same as [`simulate`] for an already-transmitted state.
pub fn simulate_state(rho: &DensityMatrix, n: usize, seed: u64, exec: Execution) -> Vec<MeasurementRecord> {
    let table = BornTable::new(rho);
    let streams = Streams::new(seed, Purpose::Rounds);
    exec.map_range(n, |r| table.sample_round(&streams, r as u64))
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    round: u64,
    #[serde(rename = "basisA")]
    basis_a: Axis,
    #[serde(rename = "basisB")]
    basis_b: Axis,
    #[serde(rename = "basisC")]
    basis_c: Axis,
    #[serde(rename = "outA")]
    out_a: i8,
    #[serde(rename = "outB")]
    out_b: i8,
    #[serde(rename = "outC")]
    out_c: i8,
}

/// CSV columns: `round,basisA,basisB,basisC,outA,outB,outC`.
pub fn write_records_csv<W: Write>(records: &[MeasurementRecord], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(CsvRow {
            round: r.round,
            basis_a: r.bases[0],
            basis_b: r.bases[1],
            basis_c: r.bases[2],
            out_a: r.outcomes[0],
            out_b: r.outcomes[1],
            out_c: r.outcomes[2],
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<MeasurementRecord>, ProtocolError> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize::<CsvRow>()
        .map(|row| {
            let row = row.map_err(|e| ProtocolError::Records(e.to_string()))?;
            let outcomes = [row.out_a, row.out_b, row.out_c];
            if outcomes.iter().any(|o| *o != 1 && *o != -1) {
                return Err(ProtocolError::Records(format!("round {}: outcomes must be ±1", row.round)));
            }
            Ok(MeasurementRecord {
                round: row.round,
                bases: [row.basis_a, row.basis_b, row.basis_c],
                outcomes,
            })
        })
        .collect()
}
