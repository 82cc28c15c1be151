//! Message ↔ coefficient mapping read out through the ladder invariants I5–I8.
//!
//! A message is four phase symbols carried by `α2..α5`; `α1` is real and
//! positive and serves as the phase reference. With equal moduli the ladder
//! invariants reduce to pure phases:
//!
//! ```text
//! I5 = e^{i(φ3-φ2)}   I6 = e^{i(φ4-φ2)}   I7 = e^{i(φ5-φ2)}   I8 = e^{i(φ2-2φ3)}
//! ```

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qcore::{Complex, StateCoefficients};

/// Invariants consumed by [`decode`].
pub const CARRIER_IDS: [&str; 4] = ["I5", "I6", "I7", "I8"];

/// Number of phase symbols per message block.
pub const SYMBOLS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("symbol {symbol} at position {position} exceeds alphabet of size {size}")]
    BadSymbol { position: usize, symbol: usize, size: usize },
    #[error("modulus profile is not equal-modulus")]
    UnsupportedProfile,
    #[error("invariant {0} is missing or degenerate")]
    DegenerateInput(String),
    #[error("invalid constellation: {0}")]
    BadConstellation(String),
    #[error("invalid message: {0}")]
    BadMessage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    phase_alphabet: Vec<f64>,
    modulus_profile: [f64; 5],
}

impl Default for Constellation {
    /// QPSK phases `{0, π/2, π, 3π/2}` on equal moduli `1/√5`.
    fn default() -> Self {
        Self {
            phase_alphabet: vec![0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2],
            modulus_profile: [1.0 / 5f64.sqrt(); 5],
        }
    }
}

fn wrap_phase(x: f64) -> f64 {
    x.rem_euclid(TAU)
}

/// Distance on the circle, in `[0, π]`.
fn circular_distance(a: f64, b: f64) -> f64 {
    let d = wrap_phase(a - b);
    d.min(TAU - d)
}

impl Constellation {
    pub fn new(phase_alphabet: Vec<f64>, modulus_profile: [f64; 5]) -> Result<Self, CodecError> {
        if phase_alphabet.is_empty() {
            return Err(CodecError::BadConstellation("empty phase alphabet".into()));
        }
        if phase_alphabet.iter().any(|p| !p.is_finite()) || modulus_profile.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(CodecError::BadConstellation("non-finite phase or negative modulus".into()));
        }
        for (i, &p) in phase_alphabet.iter().enumerate() {
            for &q in &phase_alphabet[i + 1..] {
                if circular_distance(p, q) < 1e-9 {
                    return Err(CodecError::BadConstellation(format!("phases {p} and {q} coincide modulo 2π")));
                }
            }
        }
        let norm: f64 = modulus_profile.iter().map(|m| m * m).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(CodecError::BadConstellation(format!("moduli have squared norm {norm}, expected 1")));
        }
        if modulus_profile[0] == 0.0 {
            return Err(CodecError::BadConstellation("reference modulus must be positive".into()));
        }
        Ok(Self { phase_alphabet, modulus_profile })
    }

    pub fn phases(&self) -> &[f64] {
        &self.phase_alphabet
    }

    pub fn moduli(&self) -> &[f64; 5] {
        &self.modulus_profile
    }

    pub fn size(&self) -> usize {
        self.phase_alphabet.len()
    }

    /// Nearest alphabet index on the circle; ties go to the lower index.
    pub fn snap(&self, phase: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &p) in self.phase_alphabet.iter().enumerate() {
            let d = circular_distance(phase, p);
            // Strictly-less keeps the earlier index on a tie.
            if d < best_d - 1e-15 {
                best = k;
                best_d = d;
            }
        }
        best
    }
}

/// Four phase indices for `α2, α3, α4, α5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Message {
    symbols: [usize; SYMBOLS],
}

impl Message {
    pub fn new(symbols: [usize; SYMBOLS]) -> Self {
        Self { symbols }
    }

    pub fn symbols(&self) -> [usize; SYMBOLS] {
        self.symbols
    }

    /// 2 bits per symbol, most significant pair → `α2`.
    pub fn from_byte(byte: u8) -> Self {
        Self {
            symbols: [6, 4, 2, 0].map(|shift| usize::from((byte >> shift) & 0b11)),
        }
    }

    pub fn to_byte(&self) -> Result<u8, CodecError> {
        self.symbols.iter().try_fold(0u8, |acc, &s| {
            if s > 3 {
                Err(CodecError::BadMessage(format!("symbol {s} does not fit in 2 bits")))
            } else {
                Ok((acc << 2) | s as u8)
            }
        })
    }

    pub fn all_bytes() -> impl Iterator<Item = Message> {
        (0..=255u8).map(Message::from_byte)
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_byte() {
            Ok(b) => write!(f, "{b:02x}"),
            Err(_) => write!(f, "{:?}", self.symbols),
        }
    }
}

/// Parses a hex string into one message per byte.
pub fn messages_from_hex(hex: &str) -> Result<Vec<Message>, CodecError> {
    let hex = hex.trim();
    if hex.is_empty() || !hex.len().is_multiple_of(2) {
        return Err(CodecError::BadMessage(format!("`{hex}` is not an even-length hex string")));
    }
    (0..hex.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&hex[i..i + 2], 16)
                .map(Message::from_byte)
                .map_err(|_| CodecError::BadMessage(format!("`{}` is not a hex byte", &hex[i..i + 2])))
        })
        .collect()
}

pub fn messages_to_hex(msgs: &[Message]) -> Result<String, CodecError> {
    msgs.iter().map(|m| m.to_byte().map(|b| format!("{b:02x}"))).collect()
}

pub fn encode(msg: &Message, c: &Constellation) -> Result<StateCoefficients, CodecError> {
    let m = c.moduli();
    let mut alpha = [Complex::new(m[0], 0.0); 5];
    for (position, &symbol) in msg.symbols.iter().enumerate() {
        let phase = *c.phases().get(symbol).ok_or(CodecError::BadSymbol {
            position,
            symbol,
            size: c.size(),
        })?;
        alpha[position + 1] = Complex::from_polar(m[position + 1], phase);
    }
    StateCoefficients::new(alpha).map_err(|e| CodecError::BadConstellation(e.to_string()))
}

fn has_equal_moduli(coeffs: &StateCoefficients) -> bool {
    let first = coeffs.alpha()[0].norm();
    coeffs.alpha().iter().all(|a| (a.norm() - first).abs() < 1e-9)
}

/// Closed-form I5–I8 for an equal-modulus state, bypassing the density matrix.
pub fn closed_form_invariants(coeffs: &StateCoefficients) -> Result<BTreeMap<String, Complex>, CodecError> {
    if !has_equal_moduli(coeffs) {
        return Err(CodecError::UnsupportedProfile);
    }
    let phase = |k: usize| {
        let a = coeffs.get(k) / coeffs.get(1);
        a.arg()
    };
    let (p2, p3, p4, p5) = (phase(2), phase(3), phase(4), phase(5));
    let unit = |x: f64| Complex::from_polar(1.0, x);
    Ok(BTreeMap::from([
        ("I5".to_string(), unit(p3 - p2)),
        ("I6".to_string(), unit(p4 - p2)),
        ("I7".to_string(), unit(p5 - p2)),
        ("I8".to_string(), unit(p2 - 2.0 * p3)),
    ]))
}

/// Recovers the phases from I5–I8 and snaps each to the nearest alphabet entry.
pub fn decode(vals: &BTreeMap<String, Complex>, c: &Constellation) -> Result<Message, CodecError> {
    let get = |id: &str| {
        vals.get(id)
            .copied()
            .filter(|z| z.re.is_finite() && z.im.is_finite() && z.norm() > 0.0)
            .ok_or_else(|| CodecError::DegenerateInput(id.to_string()))
    };
    let (i5, i6, i7, i8) = (get("I5")?, get("I6")?, get("I7")?, get("I8")?);
    let phi3 = -(i5 * i8).arg();
    let phi2 = phi3 - i5.arg();
    let phi4 = phi2 + i6.arg();
    let phi5 = phi2 + i7.arg();
    Ok(Message::new([phi2, phi3, phi4, phi5].map(|p| c.snap(p))))
}
