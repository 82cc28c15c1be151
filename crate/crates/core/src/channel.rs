//! Turbulence crosstalk channels.
//!
//! Each carrier keeps its mode with amplitude `a` and flips `|l⟩ ↔ |-l⟩`
//! with amplitude `b`. `Collective` applies one flip pattern to all three
//! carriers at once (identical turbulence realisation); `Independent` flips
//! every carrier on its own.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qcore::{kron3, pauli_matrix, Axis, Complex, DensityMatrix, Matrix2, Matrix8, Operator, CONSTRUCTION_TOL, VERIFY_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("bad channel parameters a={a}, b={b}: {reason}")]
    BadParams { a: f64, b: f64, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelModel {
    Independent,
    Collective,
}

impl ChannelModel {
    pub const ALL: [ChannelModel; 2] = [ChannelModel::Independent, ChannelModel::Collective];

    pub fn name(self) -> &'static str {
        match self {
            ChannelModel::Independent => "independent",
            ChannelModel::Collective => "collective",
        }
    }
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "independent" => Ok(ChannelModel::Independent),
            "collective" => Ok(ChannelModel::Collective),
            other => Err(format!("unknown channel model `{other}`")),
        }
    }
}

/// Survival amplitude `a` and crosstalk amplitude `b` with `a² + b² = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    a: f64,
    b: f64,
}

impl ChannelParams {
    pub fn new(a: f64, b: f64, renormalize: bool) -> Result<Self, ChannelError> {
        let bad = |reason| ChannelError::BadParams { a, b, reason };
        if !a.is_finite() || !b.is_finite() {
            return Err(bad("non-finite amplitude"));
        }
        if a < 0.0 || b < 0.0 {
            return Err(bad("amplitudes must be non-negative"));
        }
        let norm_sqr = a * a + b * b;
        if norm_sqr == 0.0 {
            return Err(bad("a and b are both zero"));
        }
        if renormalize {
            let norm = norm_sqr.sqrt();
            return Ok(Self { a: a / norm, b: b / norm });
        }
        if (norm_sqr - 1.0).abs() > CONSTRUCTION_TOL {
            return Err(bad("a² + b² must equal 1"));
        }
        Ok(Self { a, b })
    }

    /// From the survival probability `a²`.
    pub fn from_survival_probability(a2: f64) -> Result<Self, ChannelError> {
        if !(0.0..=1.0).contains(&a2) {
            return Err(ChannelError::BadParams {
                a: a2.max(0.0).sqrt(),
                b: (1.0 - a2).max(0.0).sqrt(),
                reason: "survival probability must lie in [0, 1]",
            });
        }
        Ok(Self {
            a: a2.sqrt(),
            b: (1.0 - a2).sqrt(),
        })
    }

    /// From the crosstalk amplitude `b`, with `a = sqrt(1 - b²)`.
    pub fn from_crosstalk(b: f64) -> Result<Self, ChannelError> {
        if !(0.0..=1.0).contains(&b) {
            return Err(ChannelError::BadParams {
                a: 0.0,
                b,
                reason: "crosstalk amplitude must lie in [0, 1]",
            });
        }
        Ok(Self { a: (1.0 - b * b).sqrt(), b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    model: ChannelModel,
    params: ChannelParams,
    kraus: Vec<Operator>,
}

pub fn make_channel(model: ChannelModel, a: f64, b: f64, renormalize: bool) -> Result<Channel, ChannelError> {
    Ok(Channel::new(model, ChannelParams::new(a, b, renormalize)?))
}

fn slot_factors(params: &ChannelParams) -> [Matrix2; 2] {
    let keep = Matrix2::identity() * Complex::new(params.a, 0.0);
    let flip = pauli_matrix(Axis::X) * Complex::new(params.b, 0.0);
    [keep, flip]
}

impl Channel {
    pub fn new(model: ChannelModel, params: ChannelParams) -> Self {
        let kraus = match model {
            ChannelModel::Collective => {
                let x = pauli_matrix(Axis::X);
                let xxx = kron3(&x, &x, &x) * Complex::new(params.b, 0.0);
                vec![
                    Operator::new(Matrix8::identity() * Complex::new(params.a, 0.0)),
                    Operator::new(xxx),
                ]
            }
            ChannelModel::Independent => {
                let f = slot_factors(&params);
                // Bit k of the pattern set means slot k (A = bit 2) is flipped.
                (0..8)
                    .map(|pattern: usize| {
                        let pick = |shift: usize| &f[(pattern >> shift) & 1];
                        Operator::new(kron3(pick(2), pick(1), pick(0)))
                    })
                    .collect()
            }
        };
        Self { model, params, kraus }
    }

    /// Noiseless channel (`a = 1`, `b = 0`) of the given model.
    pub fn identity(model: ChannelModel) -> Self {
        Self::new(model, ChannelParams { a: 1.0, b: 0.0 })
    }

    pub fn model(&self) -> ChannelModel {
        self.model
    }

    pub fn params(&self) -> ChannelParams {
        self.params
    }

    pub fn kraus(&self) -> &[Operator] {
        &self.kraus
    }

    /// `Σ K ρ K†`.
    pub fn apply(&self, rho: &DensityMatrix) -> DensityMatrix {
        let m = self
            .kraus
            .iter()
            .fold(Matrix8::zeros(), |acc, k| acc + k.matrix() * rho.matrix() * k.matrix().adjoint());
        DensityMatrix::from_matrix_unchecked(m)
    }

    /// Largest entrywise deviation of `Σ K†K` from the identity.
    pub fn completeness_error(&self) -> f64 {
        let sum = self
            .kraus
            .iter()
            .fold(Matrix8::zeros(), |acc, k| acc + k.matrix().adjoint() * k.matrix());
        crate::qcore::max_abs_diff(&sum, &Matrix8::identity())
    }

    pub fn is_trace_preserving(&self) -> bool {
        self.completeness_error() <= VERIFY_TOL
    }
}

pub fn kraus_of(ch: &Channel) -> &[Operator] {
    ch.kraus()
}

pub fn apply(ch: &Channel, rho: &DensityMatrix) -> DensityMatrix {
    ch.apply(rho)
}
