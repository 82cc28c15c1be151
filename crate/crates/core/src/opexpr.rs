//! Operator expressions over the three parties.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor ('*'? factor)*
//! factor := scalar | leaf | '(' expr ')' | '-' factor
//! leaf   := ('sx' | 'sy' | 'sz' | 'id') '[' ('A' | 'B' | 'C') ']'
//! scalar := decimal | 'i' | decimal 'i'
//! ```
//!
//! Products are matrix products of the embedded 8×8 factors, so factors on
//! distinct parties combine as a tensor product and same-party factors
//! multiply within their slot.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qcore::{embed, kron3, Complex, Matrix8, Operator, Party, Pauli};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown symbol `{symbol}` at offset {offset}")]
    UnknownSymbol { offset: usize, symbol: String },
    #[error("operator `{symbol}` at offset {offset} has no party label")]
    MissingParty { offset: usize, symbol: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpExpr {
    Scalar(Complex),
    Leaf { pauli: Pauli, party: Party },
    Sum(Vec<OpExpr>),
    Product(Vec<OpExpr>),
    Neg(Box<OpExpr>),
}

impl OpExpr {
    pub fn leaf(pauli: Pauli, party: Party) -> Self {
        OpExpr::Leaf { pauli, party }
    }

    pub fn eval(&self) -> Operator {
        eval(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token {
    Num(f64),
    /// Decimal immediately followed by `i`.
    Imag(f64),
    Ident(&'static str),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Plus,
    Minus,
    Star,
    Party(Party),
}

#[derive(Debug, Clone, Copy)]
struct Spanned {
    token: Token,
    offset: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let ch = bytes[pos];
        let start = pos;
        let simple = match ch {
            b' ' | b'\t' | b'\n' | b'\r' => {
                pos += 1;
                continue;
            }
            b'[' => Some(Token::LBracket),
            b']' => Some(Token::RBracket),
            b'(' => Some(Token::LParen),
            b')' => Some(Token::RParen),
            b'+' => Some(Token::Plus),
            b'-' => Some(Token::Minus),
            b'*' => Some(Token::Star),
            _ => None,
        };
        if let Some(token) = simple {
            tokens.push(Spanned { token, offset: start });
            pos += 1;
            continue;
        }
        if ch.is_ascii_digit() || ch == b'.' {
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'.' {
                pos += 1;
                while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    pos += 1;
                }
            }
            let literal = &text[start..pos];
            let value: f64 = literal.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{literal}`"),
            })?;
            // `2i` is an imaginary literal; `2id[A]` is still 2 * id[A].
            let imag_suffix = pos < bytes.len()
                && bytes[pos] == b'i'
                && !bytes.get(pos + 1).is_some_and(|b| b.is_ascii_alphanumeric());
            if imag_suffix {
                pos += 1;
                tokens.push(Spanned { token: Token::Imag(value), offset: start });
            } else {
                tokens.push(Spanned { token: Token::Num(value), offset: start });
            }
            continue;
        }
        if ch.is_ascii_alphabetic() {
            while pos < bytes.len() && bytes[pos].is_ascii_alphanumeric() {
                pos += 1;
            }
            let word = &text[start..pos];
            let previous_is_lbracket = matches!(tokens.last(), Some(Spanned { token: Token::LBracket, .. }));
            let token = if previous_is_lbracket {
                match word.parse::<Party>() {
                    Ok(party) if word.chars().all(|c| c.is_ascii_uppercase()) => Token::Party(party),
                    _ => {
                        return Err(ParseError::UnknownSymbol {
                            offset: start,
                            symbol: word.to_string(),
                        })
                    }
                }
            } else {
                match word {
                    "sx" => Token::Ident("sx"),
                    "sy" => Token::Ident("sy"),
                    "sz" => Token::Ident("sz"),
                    "id" => Token::Ident("id"),
                    "i" => Token::Imag(1.0),
                    _ => {
                        return Err(ParseError::UnknownSymbol {
                            offset: start,
                            symbol: word.to_string(),
                        })
                    }
                }
            };
            tokens.push(Spanned { token, offset: start });
            continue;
        }
        let symbol = text[start..].chars().next().map(String::from).unwrap_or_default();
        return Err(ParseError::UnknownSymbol { offset: start, symbol });
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).map(|t| t.token)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.offset)
    }

    /// Position reported when input runs out: the last consumed token.
    fn eof_offset(&self) -> usize {
        self.pos
            .checked_sub(1)
            .and_then(|p| self.tokens.get(p))
            .map_or(0, |t| t.offset)
    }

    fn error_here(&self, expected: &str) -> ParseError {
        match self.tokens.get(self.pos) {
            Some(_) => ParseError::Syntax {
                offset: self.offset(),
                message: format!("expected {expected}"),
            },
            None => ParseError::Syntax {
                offset: self.eof_offset(),
                message: format!("unexpected end of input, expected {expected}"),
            },
        }
    }

    fn expr(&mut self) -> Result<OpExpr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    terms.push(self.term()?);
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    let t = self.term()?;
                    terms.push(OpExpr::Neg(Box::new(t)));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { OpExpr::Sum(terms) })
    }

    fn starts_factor(token: Token) -> bool {
        matches!(
            token,
            Token::Num(_) | Token::Imag(_) | Token::Ident(_) | Token::LParen | Token::Minus
        )
    }

    fn term(&mut self) -> Result<OpExpr, ParseError> {
        let mut factors = vec![self.factor()?];
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    factors.push(self.factor()?);
                }
                // A leading '-' after a factor is a binary minus, not juxtaposition.
                Some(t) if t != Token::Minus && Self::starts_factor(t) => {
                    factors.push(self.factor()?);
                }
                _ => break,
            }
        }
        Ok(if factors.len() == 1 { factors.pop().unwrap() } else { OpExpr::Product(factors) })
    }

    fn factor(&mut self) -> Result<OpExpr, ParseError> {
        let offset = self.offset();
        match self.peek() {
            Some(Token::Minus) => {
                self.pos += 1;
                Ok(OpExpr::Neg(Box::new(self.factor()?)))
            }
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(OpExpr::Scalar(Complex::new(v, 0.0)))
            }
            Some(Token::Imag(v)) => {
                self.pos += 1;
                Ok(OpExpr::Scalar(Complex::new(0.0, v)))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(self.error_here("`)`")),
                }
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                let pauli = match name {
                    "sx" => Pauli::X,
                    "sy" => Pauli::Y,
                    "sz" => Pauli::Z,
                    _ => Pauli::I,
                };
                if self.peek() != Some(Token::LBracket) {
                    return Err(ParseError::MissingParty {
                        offset,
                        symbol: name.to_string(),
                    });
                }
                self.pos += 1;
                let party = match self.peek() {
                    Some(Token::Party(p)) => p,
                    _ => return Err(self.error_here("party label A, B or C")),
                };
                self.pos += 1;
                if self.peek() != Some(Token::RBracket) {
                    return Err(self.error_here("`]`"));
                }
                self.pos += 1;
                Ok(OpExpr::Leaf { pauli, party })
            }
            _ => Err(self.error_here("operand")),
        }
    }
}

pub fn parse(text: &str) -> Result<OpExpr, ParseError> {
    let tokens = lex(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let expr = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(parser.error_here("operator or end of input"));
    }
    Ok(expr)
}

fn fmt_real(x: f64) -> String {
    // Display for f64 is shortest-round-trip and never uses exponents.
    format!("{}", x.abs())
}

impl fmt::Display for OpExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpExpr::Scalar(z) => {
                let re = if z.re < 0.0 { format!("-{}", fmt_real(z.re)) } else { fmt_real(z.re) };
                let im = if z.im < 0.0 { format!("-{}i", fmt_real(z.im)) } else { format!("{}i", fmt_real(z.im)) };
                write!(f, "({re} + {im})")
            }
            OpExpr::Leaf { pauli, party } => write!(f, "{}[{}]", pauli.token(), party),
            OpExpr::Sum(terms) => {
                write!(f, "(")?;
                for (k, t) in terms.iter().enumerate() {
                    if k > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, ")")
            }
            OpExpr::Product(factors) => {
                write!(f, "(")?;
                for (k, t) in factors.iter().enumerate() {
                    if k > 0 {
                        write!(f, "*")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, ")")
            }
            OpExpr::Neg(child) => write!(f, "-{child}"),
        }
    }
}

pub fn eval(expr: &OpExpr) -> Operator {
    match expr {
        OpExpr::Scalar(z) => Operator::identity().scale(*z),
        OpExpr::Leaf { pauli, party } => embed(&pauli.matrix(), *party),
        OpExpr::Sum(terms) => terms.iter().map(eval).fold(Operator::zero(), |acc, t| acc + t),
        OpExpr::Product(factors) => factors
            .iter()
            .map(eval)
            .fold(Operator::identity(), |acc, t| acc * t),
        OpExpr::Neg(child) => -eval(child),
    }
}

/// Tensor product of one Pauli factor per party, in A, B, C order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PauliString(pub [Pauli; 3]);

impl PauliString {
    pub const IDENTITY: PauliString = PauliString([Pauli::I; 3]);

    /// All 64 strings, A varying slowest.
    pub fn all() -> impl Iterator<Item = PauliString> {
        (0..64).map(|k| {
            PauliString([Pauli::ALL[k / 16], Pauli::ALL[(k / 4) % 4], Pauli::ALL[k % 4]])
        })
    }

    pub fn factors(&self) -> [Pauli; 3] {
        self.0
    }

    pub fn factor(&self, party: Party) -> Pauli {
        self.0[party.slot()]
    }

    pub fn weight(&self) -> usize {
        self.0.iter().filter(|p| **p != Pauli::I).count()
    }

    pub fn operator(&self) -> Operator {
        Operator::new(kron3(&self.0[0].matrix(), &self.0[1].matrix(), &self.0[2].matrix()))
    }

    /// Compact label such as `x,id,z`.
    pub fn label(&self) -> String {
        self.0
            .iter()
            .map(|p| match p.axis() {
                None => "id".to_string(),
                Some(a) => a.symbol().to_string(),
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.label())
    }
}

/// Expansion coefficients of an operator over the 64 Pauli strings.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliDecomposition {
    coeffs: BTreeMap<PauliString, Complex>,
}

/// Coefficients below this magnitude are dropped from a decomposition.
pub const DECOMPOSITION_CUTOFF: f64 = 1e-14;

impl PauliDecomposition {
    pub fn coeffs(&self) -> &BTreeMap<PauliString, Complex> {
        &self.coeffs
    }

    pub fn get(&self, s: &PauliString) -> Complex {
        self.coeffs.get(s).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PauliString, &Complex)> {
        self.coeffs.iter()
    }

    /// `Σ c_s · s`.
    pub fn reconstruct(&self) -> Operator {
        self.coeffs
            .iter()
            .fold(Operator::zero(), |acc, (s, c)| acc + s.operator().scale(*c))
    }
}

/// `c_s = Tr(op · s) / 8` for every string with a non-negligible coefficient.
pub fn pauli_decompose(op: &Operator) -> PauliDecomposition {
    let coeffs = PauliString::all()
        .filter_map(|s| {
            let c = trace_product(op.matrix(), s.operator().matrix()) / 8.0;
            (c.norm() > DECOMPOSITION_CUTOFF).then_some((s, c))
        })
        .collect();
    PauliDecomposition { coeffs }
}

fn trace_product(a: &Matrix8, b: &Matrix8) -> Complex {
    let mut acc = Complex::new(0.0, 0.0);
    for r in 0..8 {
        for c in 0..8 {
            acc += a[(r, c)] * b[(c, r)];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{pauli_matrix, Axis};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    #[test]
    fn parses_single_leaf() {
        assert_eq!(parse("sx[A]").unwrap(), OpExpr::leaf(Pauli::X, Party::A));
        assert_eq!(parse("  id[C] ").unwrap(), OpExpr::leaf(Pauli::I, Party::C));
    }

    #[test]
    fn parses_i1_numerator_structure() {
        let e = parse("(sy[A]*sx[C] - sx[A]*sy[C])*(id[B] - sz[B])").unwrap();
        let leaf = OpExpr::leaf;
        let expected = OpExpr::Product(vec![
            OpExpr::Sum(vec![
                OpExpr::Product(vec![leaf(Pauli::Y, Party::A), leaf(Pauli::X, Party::C)]),
                OpExpr::Neg(Box::new(OpExpr::Product(vec![
                    leaf(Pauli::X, Party::A),
                    leaf(Pauli::Y, Party::C),
                ]))),
            ]),
            OpExpr::Sum(vec![
                leaf(Pauli::I, Party::B),
                OpExpr::Neg(Box::new(leaf(Pauli::Z, Party::B))),
            ]),
        ]);
        assert_eq!(e, expected);
    }

    #[test]
    fn juxtaposition_is_product() {
        let a = eval(&parse("(sx[A])(id[B] + sz[B])(id[C] + sz[C])").unwrap());
        let b = eval(&parse("sx[A]*(id[B] + sz[B])*(id[C] + sz[C])").unwrap());
        assert!(a.max_abs_diff(&b) < 1e-15);
        let c2 = eval(&parse("2 sx[A]").unwrap());
        assert!(c2.max_abs_diff(&embed(&pauli_matrix(Axis::X), Party::A).scale(c(2.0, 0.0))) < 1e-15);
    }

    #[test]
    fn dangling_operator_reports_its_offset() {
        assert_eq!(
            parse("sx[A] +"),
            Err(ParseError::Syntax {
                offset: 6,
                message: "unexpected end of input, expected operand".into()
            })
        );
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(parse("sq[A]"), Err(ParseError::UnknownSymbol { offset: 0, .. })));
        assert!(matches!(parse("sx[D]"), Err(ParseError::UnknownSymbol { offset: 3, .. })));
        assert!(matches!(parse("sx + sy[A]"), Err(ParseError::MissingParty { offset: 0, .. })));
        assert!(matches!(parse("(sx[A]"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("sx[A])"), Err(ParseError::Syntax { offset: 5, .. })));
        assert!(matches!(parse("sx[A] # 1"), Err(ParseError::UnknownSymbol { offset: 6, .. })));
        assert!(matches!(parse(""), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn scalar_forms() {
        assert_eq!(parse("i").unwrap(), OpExpr::Scalar(c(0.0, 1.0)));
        assert_eq!(parse("2.5i").unwrap(), OpExpr::Scalar(c(0.0, 2.5)));
        assert_eq!(parse("0.5").unwrap(), OpExpr::Scalar(c(0.5, 0.0)));
        let e = eval(&parse("2i*id[A]").unwrap());
        assert!(e.max_abs_diff(&Operator::identity().scale(c(0.0, 2.0))) < 1e-15);
    }

    #[test]
    fn eval_identity_and_square() {
        assert!(eval(&parse("id[A]").unwrap()).max_abs_diff(&Operator::identity()) < 1e-15);
        assert!(eval(&parse("sz[A]*sz[A]").unwrap()).max_abs_diff(&Operator::identity()) < 1e-15);
    }

    #[test]
    fn raising_combination_maps_l_to_minus_l() {
        // sx + i·sy = [[0, 0], [2, 0]] = 2|-l⟩⟨l| with σy = [[0, i], [-i, 0]].
        let op = eval(&parse("sx[A] + i*sy[A]").unwrap());
        let mut two_flip = crate::qcore::Matrix2::zeros();
        two_flip[(1, 0)] = c(2.0, 0.0);
        let expected = embed(&two_flip, Party::A);
        assert!(op.max_abs_diff(&expected) < 1e-15);
        assert!(!op.is_hermitian());
    }

    #[test]
    fn unary_minus_binds_tighter_than_product() {
        let a = eval(&parse("-sx[A]*sy[B]").unwrap());
        let b = eval(&parse("(-sx[A])*sy[B]").unwrap());
        assert!(a.max_abs_diff(&b) < 1e-15);
        let d = eval(&parse("sx[A] - -sx[A]").unwrap());
        assert!(d.max_abs_diff(&embed(&pauli_matrix(Axis::X), Party::A).scale(c(2.0, 0.0))) < 1e-15);
    }

    #[test]
    fn decompose_basics() {
        let d = pauli_decompose(&Operator::identity());
        assert_eq!(d.len(), 1);
        assert!((d.get(&PauliString::IDENTITY) - c(1.0, 0.0)).norm() < 1e-15);

        let d = pauli_decompose(&embed(&pauli_matrix(Axis::X), Party::A));
        assert_eq!(d.len(), 1);
        assert!((d.get(&PauliString([Pauli::X, Pauli::I, Pauli::I])) - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn decompose_i1_numerator() {
        let op = eval(&parse("(sy[A]*sx[C] - sx[A]*sy[C])*(id[B] - sz[B])").unwrap());
        let d = pauli_decompose(&op);
        let s = |a, b, cc| PauliString([a, b, cc]);
        let expected = [
            (s(Pauli::Y, Pauli::I, Pauli::X), 1.0),
            (s(Pauli::Y, Pauli::Z, Pauli::X), -1.0),
            (s(Pauli::X, Pauli::I, Pauli::Y), -1.0),
            (s(Pauli::X, Pauli::Z, Pauli::Y), 1.0),
        ];
        assert_eq!(d.len(), 4);
        for (string, value) in expected {
            assert!((d.get(&string) - c(value, 0.0)).norm() < 1e-14, "{string}");
        }
    }

    #[test]
    fn sixty_four_distinct_strings() {
        let all: std::collections::BTreeSet<_> = PauliString::all().collect();
        assert_eq!(all.len(), 64);
    }

    fn arb_leaf() -> impl Strategy<Value = OpExpr> {
        (0usize..4, 0usize..3).prop_map(|(p, q)| OpExpr::leaf(Pauli::ALL[p], Party::ALL[q]))
    }

    fn arb_scalar() -> impl Strategy<Value = OpExpr> {
        (-3.0f64..3.0, -3.0f64..3.0).prop_map(|(re, im)| OpExpr::Scalar(c(re, im)))
    }

    fn arb_expr() -> impl Strategy<Value = OpExpr> {
        let leaf = prop_oneof![4 => arb_leaf(), 1 => arb_scalar()];
        leaf.prop_recursive(4, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..4).prop_map(OpExpr::Sum),
                prop::collection::vec(inner.clone(), 1..4).prop_map(OpExpr::Product),
                inner.prop_map(|e| OpExpr::Neg(Box::new(e))),
            ]
        })
    }

    fn arb_matrix() -> impl Strategy<Value = Matrix8> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64)
            .prop_map(|v| Matrix8::from_iterator(v.into_iter().map(|(re, im)| c(re, im))))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn print_parse_round_trip(expr in arb_expr()) {
            let text = expr.to_string();
            let reparsed = parse(&text).unwrap();
            let a = eval(&expr);
            let b = eval(&reparsed);
            let scale = a.frobenius_norm().max(1.0);
            prop_assert!(a.max_abs_diff(&b) <= 1e-12 * scale, "{}", text);
        }

        #[test]
        fn decomposition_reconstructs(m in arb_matrix()) {
            let op = Operator::new(m);
            let back = pauli_decompose(&op).reconstruct();
            prop_assert!(op.max_abs_diff(&back) < 1e-10);
        }
    }
}
