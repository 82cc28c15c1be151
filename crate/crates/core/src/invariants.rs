//! Invariant registry, exact evaluation and channel-invariance scans.
//!
//! Each invariant is a ratio `⟨N⟩ / ⟨D⟩` of two operator expressions. The
//! registry ships as `data/invariants.toml` and is re-parsed on first use.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Channel, ChannelModel, ChannelParams};
use crate::exec::Execution;
use crate::opexpr::{eval, parse, OpExpr, ParseError};
use crate::qcore::{density_of, expectation, make_state, Complex, DensityMatrix, Operator, StateCoefficients};

pub const REGISTRY_TEXT: &str = include_str!("../data/invariants.toml");

/// Denominator is degenerate when `|⟨D⟩| < DEGENERACY_REL · ‖D‖_F`.
pub const DEGENERACY_REL: f64 = 1e-9;

/// Floor used in the relative deviation `|ΔI| / max(|I|, ε)`.
pub const RELATIVE_FLOOR: f64 = 1e-12;

/// Deviations at or below this are treated as roundoff when fitting exponents.
pub const DEVIATION_NOISE_FLOOR: f64 = 1e-13;

/// Largest crosstalk amplitude admitted into the weak-turbulence exponent fit.
pub const WEAK_TURBULENCE_B_MAX: f64 = 0.05;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry file is malformed: {0}")]
    Format(#[from] toml::de::Error),
    #[error("invariant {id}: {source}")]
    Expression {
        id: String,
        #[source]
        source: ParseError,
    },
    #[error("duplicate invariant id `{0}`")]
    DuplicateId(String),
}

/// One record of the registry file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryRecord {
    pub id: String,
    pub numerator: String,
    pub denominator: String,
    pub note: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct RegistryFile {
    invariant: Vec<RegistryRecord>,
}

#[derive(Debug, Clone)]
pub struct InvariantSpec {
    pub id: String,
    pub numerator_text: String,
    pub denominator_text: String,
    pub numerator: OpExpr,
    pub denominator: OpExpr,
    pub note: String,
    numerator_op: Operator,
    denominator_op: Operator,
}

impl InvariantSpec {
    pub fn new(id: &str, numerator: OpExpr, denominator: OpExpr, note: &str) -> Self {
        Self {
            id: id.to_string(),
            numerator_text: numerator.to_string(),
            denominator_text: denominator.to_string(),
            numerator_op: eval(&numerator),
            denominator_op: eval(&denominator),
            numerator,
            denominator,
            note: note.to_string(),
        }
    }

    pub fn from_record(record: &RegistryRecord) -> Result<Self, RegistryError> {
        let parse_part = |text: &str| {
            parse(text).map_err(|source| RegistryError::Expression {
                id: record.id.clone(),
                source,
            })
        };
        let numerator = parse_part(&record.numerator)?;
        let denominator = parse_part(&record.denominator)?;
        Ok(Self {
            id: record.id.clone(),
            numerator_text: record.numerator.clone(),
            denominator_text: record.denominator.clone(),
            numerator_op: eval(&numerator),
            denominator_op: eval(&denominator),
            numerator,
            denominator,
            note: record.note.clone(),
        })
    }

    pub fn record(&self) -> RegistryRecord {
        RegistryRecord {
            id: self.id.clone(),
            numerator: self.numerator_text.clone(),
            denominator: self.denominator_text.clone(),
            note: self.note.clone(),
        }
    }

    pub fn numerator_operator(&self) -> &Operator {
        &self.numerator_op
    }

    pub fn denominator_operator(&self) -> &Operator {
        &self.denominator_op
    }

    /// `|den|` below this is degenerate.
    pub fn degeneracy_threshold(&self) -> f64 {
        DEGENERACY_REL * self.denominator_op.frobenius_norm()
    }
}

pub fn load_registry(text: &str) -> Result<Vec<InvariantSpec>, RegistryError> {
    let file: RegistryFile = toml::from_str(text)?;
    let mut seen = std::collections::BTreeSet::new();
    file.invariant
        .iter()
        .map(|record| {
            if !seen.insert(record.id.clone()) {
                return Err(RegistryError::DuplicateId(record.id.clone()));
            }
            InvariantSpec::from_record(record)
        })
        .collect()
}

/// Serializes specs back into the registry file format.
pub fn registry_to_string(specs: &[InvariantSpec]) -> String {
    let file = RegistryFile {
        invariant: specs.iter().map(InvariantSpec::record).collect(),
    };
    toml::to_string(&file).expect("registry records are plain strings")
}

/// The shipped registry: the eight invariants as written plus the I1c, I2c and I3c variants.
pub fn registry() -> &'static [InvariantSpec] {
    static REGISTRY: OnceLock<Vec<InvariantSpec>> = OnceLock::new();
    REGISTRY.get_or_init(|| load_registry(REGISTRY_TEXT).expect("shipped registry parses"))
}

pub fn lookup(id: &str) -> Option<&'static InvariantSpec> {
    registry().iter().find(|spec| spec.id == id)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantValue {
    pub value: Option<Complex>,
    pub num: Complex,
    pub den: Complex,
    pub degenerate: bool,
}

pub fn eval_invariant(spec: &InvariantSpec, rho: &DensityMatrix) -> InvariantValue {
    let num = expectation(rho, &spec.numerator_op);
    let den = expectation(rho, &spec.denominator_op);
    let degenerate = den.norm() < spec.degeneracy_threshold();
    InvariantValue {
        value: (!degenerate).then(|| num / den),
        num,
        den,
        degenerate,
    }
}

/// Exact invariant values keyed by id, degenerate entries omitted.
pub fn exact_values(rho: &DensityMatrix, ids: &[&str]) -> BTreeMap<String, Complex> {
    ids.iter()
        .filter_map(|id| {
            let spec = lookup(id)?;
            eval_invariant(spec, rho).value.map(|v| (spec.id.clone(), v))
        })
        .collect()
}

/// Complex-Gaussian coefficients, normalized: a uniformly random state of the family.
pub fn random_coefficients<R: Rng + ?Sized>(rng: &mut R) -> StateCoefficients {
    loop {
        let alpha = [(); 5].map(|_| Complex::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        if let Ok(coeffs) = StateCoefficients::new(alpha) {
            return coeffs;
        }
    }
}

pub fn random_family_samples(count: usize, seed: u64) -> Vec<StateCoefficients> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_coefficients(&mut rng)).collect()
}

/// Maximum relative deviation over the samples at one (id, model, a, b).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub id: String,
    pub model: ChannelModel,
    pub a: f64,
    pub b: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub id: String,
    pub model: ChannelModel,
    /// Exponent `p` from fitting ln(deviation) = c + p·ln(b) + k·b², which
    /// absorbs the next-order b² correction; `None` when fewer than two
    /// weak-turbulence points rise above the noise floor.
    pub exponent: Option<f64>,
    /// Plain least-squares slope of ln(deviation) against ln(b).
    pub raw_slope: Option<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub samples: usize,
    pub rows: Vec<ScanRow>,
    pub exponents: Vec<ExponentFit>,
    /// Number of samples on which each invariant's input denominator vanishes.
    pub degenerate_inputs: BTreeMap<String, usize>,
    /// Count of (sample, grid point) pairs where the input was regular but the output denominator vanished.
    pub degenerate_outputs: BTreeMap<String, usize>,
}

impl ScanReport {
    pub fn max_deviation(&self, id: &str, model: ChannelModel) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.id == id && r.model == model)
            .map(|r| r.deviation)
            .reduce(f64::max)
    }

    pub fn exponent(&self, id: &str, model: ChannelModel) -> Option<&ExponentFit> {
        self.exponents.iter().find(|e| e.id == id && e.model == model)
    }

    /// Ids that are regular on at least one sample.
    pub fn non_degenerate_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.rows.iter().map(|r| r.id.clone()).collect();
        ids.dedup();
        ids
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "model", "a", "b", "deviation"])?;
        for row in &self.rows {
            w.write_record([
                row.id.clone(),
                row.model.to_string(),
                row.a.to_string(),
                row.b.to_string(),
                format!("{:e}", row.deviation),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn relative_deviation(before: Complex, after: Complex) -> f64 {
    (after - before).norm() / before.norm().max(RELATIVE_FLOOR)
}

/// Slope of a least-squares line through `(ln x, ln y)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Small-`x` exponent of `y ~ x^p`: least squares on `ln y = c + p·ln x + k·x²`.
///
/// With only two points this is the plain slope. Deviations are analytic in
/// b², so the extra term removes the leading finite-b bias of the slope.
pub fn weak_limit_exponent(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 3 {
        return log_log_slope(points);
    }
    let x2_max = points.iter().map(|p| p.0 * p.0).fold(0.0, f64::max);
    if x2_max == 0.0 {
        return None;
    }
    let design = DMatrix::from_fn(points.len(), 3, |r, c| match c {
        0 => 1.0,
        1 => points[r].0.ln(),
        _ => points[r].0 * points[r].0 / x2_max,
    });
    let rhs = DVector::from_iterator(points.len(), points.iter().map(|p| p.1.ln()));
    let coef = design.svd(true, true).solve(&rhs, 1e-12).ok()?;
    coef[1].is_finite().then_some(coef[1])
}

/// Exact (density-matrix) comparison of every registry invariant before and after each channel.
pub fn invariance_scan(
    coeff_samples: &[StateCoefficients],
    models: &[ChannelModel],
    grid: &[ChannelParams],
    exec: Execution,
) -> ScanReport {
    scan_specs(registry(), coeff_samples, models, grid, exec)
}

pub fn scan_specs(
    specs: &[InvariantSpec],
    coeff_samples: &[StateCoefficients],
    models: &[ChannelModel],
    grid: &[ChannelParams],
    exec: Execution,
) -> ScanReport {
    let inputs: Vec<DensityMatrix> = coeff_samples.iter().map(|c| density_of(&make_state(c))).collect();
    let before: Vec<Vec<InvariantValue>> = inputs
        .iter()
        .map(|rho| specs.iter().map(|s| eval_invariant(s, rho)).collect())
        .collect();

    let mut degenerate_inputs = BTreeMap::new();
    for (k, spec) in specs.iter().enumerate() {
        let count = before.iter().filter(|vals| vals[k].degenerate).count();
        if count > 0 {
            degenerate_inputs.insert(spec.id.clone(), count);
        }
    }

    let combos: Vec<(ChannelModel, ChannelParams)> = models
        .iter()
        .flat_map(|&m| grid.iter().map(move |&p| (m, p)))
        .collect();

    // (per-spec max deviation or None when every sample was degenerate, per-spec output-degenerate count)
    let per_combo: Vec<(Vec<Option<f64>>, Vec<usize>)> = exec.map_range(combos.len(), |i| {
        let (model, params) = combos[i];
        let channel = Channel::new(model, params);
        let mut max_dev = vec![None::<f64>; specs.len()];
        let mut out_degenerate = vec![0usize; specs.len()];
        for (rho, vals) in inputs.iter().zip(&before) {
            let out = channel.apply(rho);
            for (k, spec) in specs.iter().enumerate() {
                let Some(v_in) = vals[k].value else { continue };
                match eval_invariant(spec, &out).value {
                    Some(v_out) => {
                        let d = relative_deviation(v_in, v_out);
                        max_dev[k] = Some(max_dev[k].map_or(d, |m: f64| m.max(d)));
                    }
                    None => out_degenerate[k] += 1,
                }
            }
        }
        (max_dev, out_degenerate)
    });

    let mut rows = Vec::new();
    let mut degenerate_outputs = BTreeMap::new();
    for (k, spec) in specs.iter().enumerate() {
        for (&(model, params), (max_dev, out_deg)) in combos.iter().zip(&per_combo) {
            if let Some(deviation) = max_dev[k] {
                rows.push(ScanRow {
                    id: spec.id.clone(),
                    model,
                    a: params.a(),
                    b: params.b(),
                    deviation,
                });
            }
            if out_deg[k] > 0 {
                *degenerate_outputs.entry(spec.id.clone()).or_insert(0) += out_deg[k];
            }
        }
    }

    let mut exponents = Vec::new();
    for spec in specs {
        for &model in models {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.id == spec.id && r.model == model)
                .filter(|r| r.b > 0.0 && r.b <= WEAK_TURBULENCE_B_MAX && r.deviation > DEVIATION_NOISE_FLOOR)
                .map(|r| (r.b, r.deviation))
                .collect();
            if rows.iter().any(|r| r.id == spec.id && r.model == model) {
                exponents.push(ExponentFit {
                    id: spec.id.clone(),
                    model,
                    exponent: weak_limit_exponent(&points),
                    raw_slope: log_log_slope(&points),
                    points: points.len(),
                });
            }
        }
    }

    ScanReport {
        samples: coeff_samples.len(),
        rows,
        exponents,
        degenerate_inputs,
        degenerate_outputs,
    }
}

/// Survival probabilities used for the default invariance grid.
pub const DEFAULT_SURVIVAL_GRID: [f64; 4] = [0.5, 0.7, 0.9, 0.99];
/// Crosstalk amplitudes used for the weak-turbulence exponent fit.
pub const DEFAULT_WEAK_CROSSTALK: [f64; 4] = [1e-3, 2e-3, 4e-3, 8e-3];

pub fn default_grid() -> Vec<ChannelParams> {
    let mut grid: Vec<ChannelParams> = DEFAULT_SURVIVAL_GRID
        .iter()
        .map(|&a2| ChannelParams::from_survival_probability(a2).expect("grid in range"))
        .collect();
    grid.extend(
        DEFAULT_WEAK_CROSSTALK
            .iter()
            .map(|&b| ChannelParams::from_crosstalk(b).expect("grid in range")),
    );
    grid
}
