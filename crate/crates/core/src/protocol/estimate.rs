use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use super::rng::{Purpose, Streams};
use super::sampling::{bases_of_index, basis_index, MeasurementRecord};
use super::ProtocolError;
use crate::exec::Execution;
use crate::invariants::InvariantSpec;
use crate::opexpr::{pauli_decompose, PauliDecomposition, PauliString};
use crate::qcore::{outcome_index, outcomes_of_index, Complex};

pub const DEFAULT_RESAMPLES: usize = 200;

/// A denominator is treated as zero when `|den| < DEGENERACY_SIGMAS · stderr(den)`.
pub const DEGENERACY_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: u64,
}

/// Round counts per (basis triple, outcome triple) cell.
///
/// Every string estimate depends on the records only through these 216
/// counts, so resampling rounds with replacement is the same as drawing a
/// multinomial over the cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    counts: [[u64; 8]; 27],
    total: u64,
}

impl Tally {
    pub fn from_records(records: &[MeasurementRecord]) -> Self {
        let mut counts = [[0u64; 8]; 27];
        for r in records {
            counts[basis_index(r.bases)][outcome_index(r.outcomes)] += 1;
        }
        Self {
            counts,
            total: records.len() as u64,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, bases: [crate::qcore::Axis; 3], outcomes: [i8; 3]) -> u64 {
        self.counts[basis_index(bases)][outcome_index(outcomes)]
    }

    /// Sample mean of the outcome product over rounds whose axes match `s` on every non-identity slot.
    pub fn estimate(&self, s: &PauliString) -> Result<Estimate, ProtocolError> {
        let factors = s.factors();
        let mut count = 0u64;
        let mut sum = 0i64;
        for (k, row) in self.counts.iter().enumerate() {
            let bases = bases_of_index(k);
            let qualifies = factors
                .iter()
                .zip(bases.iter())
                .all(|(p, b)| p.axis().is_none_or(|a| a == *b));
            if !qualifies {
                continue;
            }
            for (o, &c) in row.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let outcomes = outcomes_of_index(o);
                let product: i64 = factors
                    .iter()
                    .zip(outcomes.iter())
                    .filter(|(p, _)| p.axis().is_some())
                    .map(|(_, &out)| i64::from(out))
                    .product();
                count += c;
                sum += product * c as i64;
            }
        }
        if count == 0 {
            return Err(ProtocolError::NoQualifyingRounds(s.label()));
        }
        let n = count as f64;
        let mean = sum as f64 / n;
        // Products are ±1, so the sample variance is n/(n-1)·(1 - mean²).
        let stderr = if count > 1 {
            let var = (n / (n - 1.0)) * (1.0 - mean * mean).max(0.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Ok(Estimate { mean, stderr, count })
    }

    fn resample(&self, streams: &Streams, index: u64) -> Tally {
        let mut rng = streams.stream(index);
        let mut counts = [[0u64; 8]; 27];
        let mut remaining = self.total;
        let mut mass = self.total;
        for (k, row) in self.counts.iter().enumerate() {
            for (o, &c) in row.iter().enumerate() {
                if c == 0 || remaining == 0 {
                    continue;
                }
                let draw = if c >= mass {
                    remaining
                } else {
                    let p = c as f64 / mass as f64;
                    Binomial::new(remaining, p).expect("p in (0, 1)").sample(&mut rng)
                };
                counts[k][o] = draw;
                remaining -= draw;
                mass -= c;
            }
        }
        Tally {
            counts,
            total: self.total,
        }
    }
}

pub fn estimate_string(records: &[MeasurementRecord], s: &PauliString) -> Result<Estimate, ProtocolError> {
    Tally::from_records(records).estimate(s)
}

/// `Σ c_s · mean(s)` with the naive propagated standard error (strings treated as independent).
pub fn estimate_expectation(tally: &Tally, decomposition: &PauliDecomposition) -> Result<(Complex, f64, u64), ProtocolError> {
    let mut value = Complex::new(0.0, 0.0);
    let mut var = 0.0;
    let mut min_count = u64::MAX;
    for (s, c) in decomposition.iter() {
        let e = tally.estimate(s)?;
        value += c * e.mean;
        var += c.norm_sqr() * e.stderr * e.stderr;
        min_count = min_count.min(e.count);
    }
    Ok((value, var.sqrt(), min_count))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
    /// Two-sided coverage of the percentile interval.
    pub level: f64,
    pub exec: Execution,
}

impl BootstrapConfig {
    pub fn new(resamples: usize, seed: u64) -> Self {
        Self {
            resamples,
            seed,
            level: 0.95,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    fn point(x: f64) -> Self {
        Self { low: x, high: x }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexInterval {
    pub re: Interval,
    pub im: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantEstimate {
    pub id: String,
    /// Ratio estimate; absent when the denominator is degenerate.
    pub value: Option<Complex>,
    pub ci: Option<ComplexInterval>,
    pub num: Complex,
    pub num_stderr: f64,
    pub den: Complex,
    pub den_stderr: f64,
    pub degenerate: bool,
    pub bootstrap_resamples: usize,
    /// Smallest number of qualifying rounds among the strings used.
    pub min_count: u64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[pos]
}

fn interval_of(mut values: Vec<f64>, level: f64) -> Interval {
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Interval {
        low: percentile(&values, tail),
        high: percentile(&values, 1.0 - tail),
    }
}

fn complex_stderr(values: &[Complex]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<Complex>() / n;
    let var = values.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
    var.sqrt()
}

pub fn estimate_invariant(
    records: &[MeasurementRecord],
    spec: &InvariantSpec,
    cfg: &BootstrapConfig,
) -> Result<InvariantEstimate, ProtocolError> {
    estimate_invariant_from_tally(&Tally::from_records(records), spec, cfg)
}

/// Point estimate plus a percentile bootstrap over rounds.
///
/// With fewer than two resamples no bootstrap is run: intervals collapse to
/// the point estimate and the degeneracy test falls back to the propagated
/// standard error.
pub fn estimate_invariant_from_tally(
    tally: &Tally,
    spec: &InvariantSpec,
    cfg: &BootstrapConfig,
) -> Result<InvariantEstimate, ProtocolError> {
    let num_dec = pauli_decompose(spec.numerator_operator());
    let den_dec = pauli_decompose(spec.denominator_operator());
    let (num, num_prop, num_min) = estimate_expectation(tally, &num_dec)?;
    let (den, den_prop, den_min) = estimate_expectation(tally, &den_dec)?;
    let min_count = num_min.min(den_min);

    let (num_stderr, den_stderr, ratio_interval, boot_degenerate) = if cfg.resamples >= 2 {
        let streams = Streams::new(cfg.seed, Purpose::Bootstrap);
        let draws: Vec<Option<(Complex, Complex)>> = cfg.exec.map_range(cfg.resamples, |b| {
            let t = tally.resample(&streams, b as u64);
            let n = estimate_expectation(&t, &num_dec).ok()?.0;
            let d = estimate_expectation(&t, &den_dec).ok()?.0;
            Some((n, d))
        });
        let valid: Vec<(Complex, Complex)> = draws.into_iter().flatten().collect();
        if valid.len() >= 2 {
            let nums: Vec<Complex> = valid.iter().map(|p| p.0).collect();
            let dens: Vec<Complex> = valid.iter().map(|p| p.1).collect();
            let ratios: Vec<Complex> = valid.iter().map(|(n, d)| n / d).collect();
            let ci = ComplexInterval {
                re: interval_of(ratios.iter().map(|r| r.re).collect(), cfg.level),
                im: interval_of(ratios.iter().map(|r| r.im).collect(), cfg.level),
            };
            (complex_stderr(&nums), complex_stderr(&dens), Some(ci), None)
        } else {
            // Too few resamples kept every string populated.
            (num_prop, den_prop, None, Some(true))
        }
    } else {
        (num_prop, den_prop, None, None)
    };

    let degenerate = boot_degenerate.unwrap_or(false) || den.norm() == 0.0 || den.norm() < DEGENERACY_SIGMAS * den_stderr;
    let value = (!degenerate).then(|| num / den);
    let ci = value.map(|v| {
        ratio_interval.unwrap_or(ComplexInterval {
            re: Interval::point(v.re),
            im: Interval::point(v.im),
        })
    });
    Ok(InvariantEstimate {
        id: spec.id.clone(),
        value,
        ci,
        num,
        num_stderr,
        den,
        den_stderr,
        degenerate,
        bootstrap_resamples: cfg.resamples,
        min_count,
    })
}
