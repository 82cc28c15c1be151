//! Dense linear algebra for three two-level OAM carriers.
//!
//! Each carrier lives in the span of `|l⟩` (index 0) and `|-l⟩` (index 1).
//! Composite kets are indexed `4·iA + 2·iB + iC`, slot order A, B, C.
//! The y observable follows `σy = i|l⟩⟨-l| - i|-l⟩⟨l|`, i.e. `[[0, i], [-i, 0]]`,
//! which is the negative of the textbook convention.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use nalgebra::{SMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Complex = nalgebra::Complex<f64>;
pub type Matrix2 = SMatrix<Complex, 2, 2>;
pub type Matrix8 = SMatrix<Complex, 8, 8>;

/// Composite Hilbert-space dimension.
pub const DIM: usize = 8;

/// Normalization tolerance applied when values are constructed.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance for Hermiticity, trace and positivity checks.
pub const VERIFY_TOL: f64 = 1e-10;

/// Basis index of each of the five coefficients `α1..α5` in the state vector.
pub const FAMILY_INDICES: [usize; 5] = [3, 5, 6, 0, 7];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("all state coefficients are zero")]
    ZeroState,
    #[error("non-finite complex component")]
    NonFinite,
    #[error("state vector norm {0} differs from 1")]
    NotNormalized(f64),
    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("trace {0} differs from 1")]
    BadTrace(f64),
    #[error("negative eigenvalue {0:.3e}")]
    NotPositive(f64),
}

/// Builds a complex scalar, rejecting NaN and infinities.
pub fn complex(re: f64, im: f64) -> Result<Complex, StateError> {
    if re.is_finite() && im.is_finite() {
        Ok(Complex::new(re, im))
    } else {
        Err(StateError::NonFinite)
    }
}

fn is_finite(z: &Complex) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// Measurement axis chosen by a party.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i]
    }

    pub fn symbol(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(format!("unknown axis `{other}`")),
        }
    }
}

/// Single-slot factor of a Pauli string: identity or one of the three axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pauli {
    #[serde(rename = "id")]
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn axis(self) -> Option<Axis> {
        match self {
            Pauli::I => None,
            Pauli::X => Some(Axis::X),
            Pauli::Y => Some(Axis::Y),
            Pauli::Z => Some(Axis::Z),
        }
    }

    pub fn matrix(self) -> Matrix2 {
        match self.axis() {
            None => Matrix2::identity(),
            Some(axis) => pauli_matrix(axis),
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Pauli::I => "id",
            Pauli::X => "sx",
            Pauli::Y => "sy",
            Pauli::Z => "sz",
        }
    }
}

impl From<Axis> for Pauli {
    fn from(axis: Axis) -> Self {
        match axis {
            Axis::X => Pauli::X,
            Axis::Y => Pauli::Y,
            Axis::Z => Pauli::Z,
        }
    }
}

/// One of the three receiving parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    A,
    B,
    C,
}

impl Party {
    pub const ALL: [Party; 3] = [Party::A, Party::B, Party::C];

    /// Slot position in the tensor product (A is the most significant bit).
    pub fn slot(self) -> usize {
        match self {
            Party::A => 0,
            Party::B => 1,
            Party::C => 2,
        }
    }

    pub fn label(self) -> char {
        match self {
            Party::A => 'A',
            Party::B => 'B',
            Party::C => 'C',
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl FromStr for Party {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Party::A),
            "B" | "b" => Ok(Party::B),
            "C" | "c" => Ok(Party::C),
            other => Err(format!("unknown party `{other}`")),
        }
    }
}

/// The five amplitudes `α1..α5` of the state family, normalized on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateCoefficients {
    alpha: [Complex; 5],
}

impl StateCoefficients {
    /// Normalizes `alpha` to unit norm.
    pub fn new(alpha: [Complex; 5]) -> Result<Self, StateError> {
        if !alpha.iter().all(is_finite) {
            return Err(StateError::NonFinite);
        }
        let norm = alpha.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(StateError::ZeroState);
        }
        Ok(Self {
            alpha: alpha.map(|a| a / norm),
        })
    }

    pub fn from_real(alpha: [f64; 5]) -> Result<Self, StateError> {
        Self::new(alpha.map(|a| Complex::new(a, 0.0)))
    }

    pub fn alpha(&self) -> &[Complex; 5] {
        &self.alpha
    }

    /// `αk` with one-based `k` as in the state family's labelling.
    pub fn get(&self, k: usize) -> Complex {
        self.alpha[k - 1]
    }
}

/// Pure three-carrier state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    amp: [Complex; DIM],
}

impl StateVector {
    pub fn from_amplitudes(amp: [Complex; DIM]) -> Result<Self, StateError> {
        if !amp.iter().all(is_finite) {
            return Err(StateError::NonFinite);
        }
        let norm = amp.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > CONSTRUCTION_TOL {
            return Err(StateError::NotNormalized(norm));
        }
        Ok(Self { amp })
    }

    /// `|l,l,l⟩`, every carrier in the `+1` eigenstate of σz.
    pub fn all_plus_l() -> Self {
        let mut amp = [Complex::new(0.0, 0.0); DIM];
        amp[0] = Complex::new(1.0, 0.0);
        Self { amp }
    }

    pub fn amplitudes(&self) -> &[Complex; DIM] {
        &self.amp
    }
}

/// Places `α1..α5` on `|l,-l,-l⟩, |-l,l,-l⟩, |-l,-l,l⟩, |l,l,l⟩, |-l,-l,-l⟩`.
pub fn make_state(coeffs: &StateCoefficients) -> StateVector {
    let mut amp = [Complex::new(0.0, 0.0); DIM];
    for (alpha, &index) in coeffs.alpha.iter().zip(FAMILY_INDICES.iter()) {
        amp[index] = *alpha;
    }
    StateVector { amp }
}

/// 8×8 complex matrix used as an observable or a general operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Operator {
    m: Matrix8,
}

impl Operator {
    pub fn new(m: Matrix8) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        Self {
            m: Matrix8::identity(),
        }
    }

    pub fn zero() -> Self {
        Self { m: Matrix8::zeros() }
    }

    pub fn matrix(&self) -> &Matrix8 {
        &self.m
    }

    pub fn adjoint(&self) -> Self {
        Self { m: self.m.adjoint() }
    }

    pub fn scale(&self, c: Complex) -> Self {
        Self { m: self.m * c }
    }

    pub fn is_hermitian(&self) -> bool {
        max_abs_diff(&self.m, &self.m.adjoint()) <= VERIFY_TOL
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        max_abs_diff(&self.m, &other.m)
    }

    pub fn commutes_with(&self, other: &Operator) -> bool {
        let ab = self.m * other.m;
        let ba = other.m * self.m;
        max_abs_diff(&ab, &ba) <= VERIFY_TOL
    }
}

impl Add for Operator {
    type Output = Operator;
    fn add(self, rhs: Operator) -> Operator {
        Operator { m: self.m + rhs.m }
    }
}

impl Sub for Operator {
    type Output = Operator;
    fn sub(self, rhs: Operator) -> Operator {
        Operator { m: self.m - rhs.m }
    }
}

impl Mul for Operator {
    type Output = Operator;
    fn mul(self, rhs: Operator) -> Operator {
        Operator { m: self.m * rhs.m }
    }
}

impl Neg for Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator { m: -self.m }
    }
}

pub(crate) fn max_abs_diff(a: &Matrix8, b: &Matrix8) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Mixed or pure three-carrier state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    m: Matrix8,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity at [`VERIFY_TOL`].
    pub fn new(m: Matrix8) -> Result<Self, StateError> {
        if !m.iter().all(is_finite) {
            return Err(StateError::NonFinite);
        }
        let herm = max_abs_diff(&m, &m.adjoint());
        if herm > VERIFY_TOL {
            return Err(StateError::NotHermitian(herm));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > VERIFY_TOL || tr.im.abs() > VERIFY_TOL {
            return Err(StateError::BadTrace(tr.re));
        }
        let min_eig = min_eigenvalue(&m);
        if min_eig < -VERIFY_TOL {
            return Err(StateError::NotPositive(min_eig));
        }
        Ok(Self { m })
    }

    /// Skips validation; callers guarantee the invariants by construction.
    pub(crate) fn from_matrix_unchecked(m: Matrix8) -> Self {
        Self { m }
    }

    pub fn maximally_mixed() -> Self {
        Self {
            m: Matrix8::identity() * Complex::new(1.0 / DIM as f64, 0.0),
        }
    }

    pub fn matrix(&self) -> &Matrix8 {
        &self.m
    }

    /// Re-runs the constructor checks.
    pub fn validate(&self) -> Result<(), StateError> {
        Self::new(self.m).map(|_| ())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.m)
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        max_abs_diff(&self.m, &other.m)
    }
}

fn min_eigenvalue(m: &Matrix8) -> f64 {
    // Symmetrize so roundoff in the lower triangle cannot leak into the spectrum.
    let herm = (m + m.adjoint()) * Complex::new(0.5, 0.0);
    SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `|ψ⟩⟨ψ|`.
pub fn density_of(psi: &StateVector) -> DensityMatrix {
    let mut m = Matrix8::zeros();
    for r in 0..DIM {
        for c in 0..DIM {
            m[(r, c)] = psi.amp[r] * psi.amp[c].conj();
        }
    }
    DensityMatrix { m }
}

pub fn pauli_matrix(axis: Axis) -> Matrix2 {
    let zero = Complex::new(0.0, 0.0);
    let one = Complex::new(1.0, 0.0);
    let i = Complex::new(0.0, 1.0);
    match axis {
        Axis::X => Matrix2::new(zero, one, one, zero),
        Axis::Y => Matrix2::new(zero, i, -i, zero),
        Axis::Z => Matrix2::new(one, zero, zero, -one),
    }
}

/// Tensor product of three single-slot factors in A⊗B⊗C order.
pub fn kron3(a: &Matrix2, b: &Matrix2, c: &Matrix2) -> Matrix8 {
    let ab = a.kronecker(b);
    let abc = ab.kronecker(c);
    Matrix8::from_iterator(abc.iter().copied())
}

/// Places a single-slot operator on `party`, identity elsewhere.
pub fn embed(op2: &Matrix2, party: Party) -> Operator {
    let id = Matrix2::identity();
    let m = match party {
        Party::A => kron3(op2, &id, &id),
        Party::B => kron3(&id, op2, &id),
        Party::C => kron3(&id, &id, op2),
    };
    Operator { m }
}

/// `Tr(ρ·op)`.
pub fn expectation(rho: &DensityMatrix, op: &Operator) -> Complex {
    // Tr(ρO) = Σ_rc ρ_rc O_cr without forming the product.
    let mut acc = Complex::new(0.0, 0.0);
    for r in 0..DIM {
        for c in 0..DIM {
            acc += rho.m[(r, c)] * op.m[(c, r)];
        }
    }
    acc
}

/// Eigenprojector of `axis` for outcome `+1` (`plus = true`) or `-1`.
pub fn eigenprojector(axis: Axis, plus: bool) -> Matrix2 {
    let half = Complex::new(0.5, 0.0);
    let p = pauli_matrix(axis);
    if plus {
        (Matrix2::identity() + p) * half
    } else {
        (Matrix2::identity() - p) * half
    }
}

/// Outcome triples are indexed `4·bA + 2·bB + bC` with bit 1 meaning `-1`.
pub fn outcome_index(outcomes: [i8; 3]) -> usize {
    outcomes
        .iter()
        .fold(0, |acc, &o| (acc << 1) | usize::from(o < 0))
}

pub fn outcomes_of_index(index: usize) -> [i8; 3] {
    [2, 1, 0].map(|shift| if (index >> shift) & 1 == 1 { -1 } else { 1 })
}

/// Joint Born probabilities of the eight outcome triples for the given local axes.
pub fn born_probabilities(rho: &DensityMatrix, bases: [Axis; 3]) -> [f64; 8] {
    let mut probs = [0.0; 8];
    for (index, p) in probs.iter_mut().enumerate() {
        let o = outcomes_of_index(index);
        let projector = kron3(
            &eigenprojector(bases[0], o[0] > 0),
            &eigenprojector(bases[1], o[1] > 0),
            &eigenprojector(bases[2], o[2] > 0),
        );
        let value = expectation(rho, &Operator::new(projector)).re;
        *p = value.max(0.0);
    }
    probs
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    fn ghz() -> StateVector {
        let coeffs = StateCoefficients::from_real([0.0, 0.0, 0.0, FRAC_1_SQRT_2, FRAC_1_SQRT_2]).unwrap();
        make_state(&coeffs)
    }

    #[test]
    fn make_state_places_single_ket() {
        let psi = make_state(&StateCoefficients::from_real([1.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        for (i, a) in psi.amplitudes().iter().enumerate() {
            if i == 3 {
                assert_eq!(*a, c(1.0, 0.0));
            } else {
                assert_eq!(*a, c(0.0, 0.0));
            }
        }
    }

    #[test]
    fn make_state_equal_weights() {
        let s = 1.0 / 5f64.sqrt();
        let psi = make_state(&StateCoefficients::from_real([s; 5]).unwrap());
        let norm: f64 = psi.amplitudes().iter().map(|a| a.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        let nonzero = psi.amplitudes().iter().filter(|a| a.norm() > 0.0).count();
        assert_eq!(nonzero, 5);
        for &i in &FAMILY_INDICES {
            assert!((psi.amplitudes()[i].re - s).abs() < 1e-15);
        }
        let ghz = ghz();
        assert!((ghz.amplitudes()[0].re - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((ghz.amplitudes()[7].re - FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn coefficients_reject_zero_and_nan() {
        assert_eq!(
            StateCoefficients::from_real([0.0; 5]),
            Err(StateError::ZeroState)
        );
        assert_eq!(
            StateCoefficients::from_real([f64::NAN, 1.0, 0.0, 0.0, 0.0]),
            Err(StateError::NonFinite)
        );
        assert!(complex(f64::INFINITY, 0.0).is_err());
        let unnormalized = StateCoefficients::from_real([3.0, 4.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((unnormalized.get(1).re - 0.6).abs() < 1e-15);
    }

    #[test]
    fn density_of_ghz() {
        let rho = density_of(&ghz());
        for r in 0..8 {
            for col in 0..8 {
                let expected = if (r == 0 || r == 7) && (col == 0 || col == 7) { 0.5 } else { 0.0 };
                assert!((rho.matrix()[(r, col)] - c(expected, 0.0)).norm() < 1e-15);
            }
        }
        rho.validate().unwrap();
    }

    #[test]
    fn density_of_single_ket() {
        let psi = make_state(&StateCoefficients::from_real([1.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        let rho = density_of(&psi);
        assert_eq!(rho.matrix()[(3, 3)], c(1.0, 0.0));
        assert_eq!(rho.matrix().iter().filter(|z| z.norm() > 0.0).count(), 1);
    }

    #[test]
    fn pauli_matrices_follow_ket_bra_definitions() {
        let zero = c(0.0, 0.0);
        let one = c(1.0, 0.0);
        let i = c(0.0, 1.0);
        assert_eq!(pauli_matrix(Axis::X), Matrix2::new(zero, one, one, zero));
        // i|l⟩⟨-l| - i|-l⟩⟨l|
        assert_eq!(pauli_matrix(Axis::Y), Matrix2::new(zero, i, -i, zero));
        assert_eq!(pauli_matrix(Axis::Z), Matrix2::new(one, zero, zero, -one));
    }

    #[test]
    fn embed_z_on_a_is_block_diagonal() {
        let op = embed(&pauli_matrix(Axis::Z), Party::A);
        for r in 0..8 {
            for col in 0..8 {
                let expected = if r != col { 0.0 } else if r < 4 { 1.0 } else { -1.0 };
                assert_eq!(op.matrix()[(r, col)], c(expected, 0.0));
            }
        }
    }

    #[test]
    fn embed_x_on_b_flips_middle_bit() {
        let op = embed(&pauli_matrix(Axis::X), Party::B);
        for r in 0..8 {
            for col in 0..8 {
                let expected = if r ^ col == 2 { 1.0 } else { 0.0 };
                assert_eq!(op.matrix()[(r, col)], c(expected, 0.0));
            }
        }
    }

    #[test]
    fn embedded_paulis_on_distinct_parties_commute() {
        for &j in &Party::ALL {
            for &k in &Party::ALL {
                if j == k {
                    continue;
                }
                for &p in &Axis::ALL {
                    for &q in &Axis::ALL {
                        let a = embed(&pauli_matrix(p), j);
                        let b = embed(&pauli_matrix(q), k);
                        assert!(a.commutes_with(&b), "{p}{j} vs {q}{k}");
                        assert!(a.is_hermitian());
                    }
                }
            }
        }
    }

    #[test]
    fn expectation_examples() {
        let rho = density_of(&ghz());
        let one = expectation(&rho, &Operator::identity());
        assert!((one - c(1.0, 0.0)).norm() < 1e-15);

        let lll = density_of(&StateVector::all_plus_l());
        let z_a = embed(&pauli_matrix(Axis::Z), Party::A);
        assert!((expectation(&lll, &z_a) - c(1.0, 0.0)).norm() < 1e-15);

        let xxx = Operator::new(kron3(
            &pauli_matrix(Axis::X),
            &pauli_matrix(Axis::X),
            &pauli_matrix(Axis::X),
        ));
        assert!((expectation(&rho, &xxx) - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn born_probabilities_examples() {
        let lll = density_of(&StateVector::all_plus_l());
        let p = born_probabilities(&lll, [Axis::Z; 3]);
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1..].iter().all(|&x| x.abs() < 1e-15));

        let mixed = DensityMatrix::maximally_mixed();
        for bases in [[Axis::X, Axis::Y, Axis::Z], [Axis::Y; 3]] {
            let p = born_probabilities(&mixed, bases);
            assert!(p.iter().all(|&x| (x - 0.125).abs() < 1e-15));
        }

        // Frozen from a numpy eigenprojector computation: 1/4 on even parity.
        let rho = density_of(&ghz());
        let p = born_probabilities(&rho, [Axis::X; 3]);
        for (index, prob) in p.iter().enumerate() {
            let product: i8 = outcomes_of_index(index).iter().product();
            let expected = if product > 0 { 0.25 } else { 0.0 };
            assert!((prob - expected).abs() < 1e-12, "{index}: {prob}");
        }
    }

    #[test]
    fn outcome_index_round_trip() {
        for index in 0..8 {
            assert_eq!(outcome_index(outcomes_of_index(index)), index);
        }
        assert_eq!(outcome_index([1, -1, -1]), 3);
    }

    #[test]
    fn density_matrix_rejects_bad_inputs() {
        let mut m = Matrix8::identity();
        assert!(matches!(DensityMatrix::new(m), Err(StateError::BadTrace(_))));
        m[(0, 1)] = c(0.1, 0.0);
        assert!(matches!(DensityMatrix::new(m), Err(StateError::NotHermitian(_))));
        let mut neg = Matrix8::zeros();
        neg[(0, 0)] = c(1.5, 0.0);
        neg[(1, 1)] = c(-0.5, 0.0);
        assert!(matches!(DensityMatrix::new(neg), Err(StateError::NotPositive(_))));
    }

    #[test]
    fn state_vector_requires_unit_norm() {
        let mut amp = [c(0.0, 0.0); 8];
        amp[2] = c(2.0, 0.0);
        assert!(matches!(
            StateVector::from_amplitudes(amp),
            Err(StateError::NotNormalized(_))
        ));
    }
}
