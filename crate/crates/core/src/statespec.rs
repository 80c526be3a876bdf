//! A small text format for Alice–Rob states.
//!
//! ```text
//! (1/sqrt(2))|R⟩|L⟩ + (1/sqrt(2))|L⟩|R⟩
//! 0.5|0>|up nup> + 0.5|0>|up> + 0.5|1>|dn ndn> + 0.5|1>|dn>
//! ```
//!
//! Each term is an optional coefficient, Alice's label and Rob's ket. Rob's ket lists
//! Unruh creation operators applied left to right as written, `C†_{σ1} … C†_{σN}|0⟩_U`;
//! an empty ket is the Unruh vacuum. A label may carry its own weights as
//! `label@(qR,qL)`.

use std::fmt;

use num_complex::Complex64;

use crate::algebra::UnruhParams;
use crate::entanglement::FactorizedState;
use crate::error::{Error, Result};
use crate::fock::{Field, HalfInt, Statistics};
use crate::vacuum::{bose_excitation_product, fermi_excitation_product, Excitation, SectorProduct};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Debug, PartialEq)]
pub enum Coeff {
    Number(f64),
    /// `a/sqrt(b)`
    OverSqrt(f64, f64),
    Paren(Box<Coeff>),
}

impl Coeff {
    pub fn value(&self) -> f64 {
        match self {
            Coeff::Number(x) => *x,
            Coeff::OverSqrt(a, b) => a / b.sqrt(),
            Coeff::Paren(c) => c.value(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobOp {
    pub sigma: HalfInt,
    /// Per-operator `(q_R, q_L)`.
    pub weights: Option<(Coeff, Coeff)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub negative: bool,
    pub coeff: Option<Coeff>,
    pub alice: String,
    pub rob: Vec<RobOp>,
}

impl Term {
    pub fn amplitude(&self) -> f64 {
        let c = self.coeff.as_ref().map_or(1.0, Coeff::value);
        if self.negative {
            -c
        } else {
            c
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateAst {
    pub field: Field,
    pub terms: Vec<Term>,
}

/// σ name for a spin, or `m=<σ>` when the spin has no fixed vocabulary.
pub fn sigma_name(field: Field, sigma: HalfInt) -> String {
    let named = match (field.spin.twice(), sigma.twice()) {
        (3, 3) => Some("up"),
        (3, 1) => Some("nup"),
        (3, -1) => Some("ndn"),
        (3, -3) => Some("dn"),
        (2, 2) => Some("R"),
        (2, -2) => Some("L"),
        (1, 1) => Some("up"),
        (1, -1) => Some("dn"),
        _ => None,
    };
    named.map_or_else(|| format!("m={sigma}"), str::to_string)
}

/// σ labels and the number of operators they stand for.
fn lookup_label(field: Field, name: &str) -> std::result::Result<(HalfInt, usize), String> {
    let spin = field.spin.twice();
    let named = match (spin, name) {
        (3, "up" | "↑") => Some(3),
        (3, "nup" | "↗") => Some(1),
        (3, "ndn" | "↘") => Some(-1),
        (3, "dn" | "↓") => Some(-3),
        (2, "R") => Some(2),
        (2, "L") => Some(-2),
        (1, "up" | "↑") => Some(1),
        (1, "dn" | "↓") => Some(-1),
        _ => None,
    };
    if let Some(t) = named {
        return Ok((HalfInt::from_twice(t), 1));
    }
    if spin == 0 {
        if let Ok(n) = name.parse::<usize>() {
            if n >= 1 {
                return Ok((HalfInt::ZERO, n));
            }
        }
    }
    if let Some(m) = name.strip_prefix("m=") {
        let sigma: HalfInt = m.parse().map_err(|_| format!("bad σ value `{m}`"))?;
        if field.has_sigma(sigma) {
            return Ok((sigma, 1));
        }
        return Err(format!("σ = {sigma} is not available for spin {}", field.spin));
    }
    Err(format!("unknown label `{name}` for spin {}", field.spin))
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    field: Field,
}

fn is_ident(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '=' | '/' | '.' | '↑' | '↓' | '↗' | '↘') || c == '-'
}

impl Parser {
    fn error_at(&self, pos: usize, message: impl Into<String>) -> ParseError {
        let mut line = 1;
        let mut col = 1;
        for &c in &self.chars[..pos.min(self.chars.len())] {
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
        }
        ParseError { line, col, message: message.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char, what: &str) -> std::result::Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error_at(self.pos, format!("expected {what}")))
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        self.skip_ws();
        let end = self.pos + w.chars().count();
        if end <= self.chars.len() && self.chars[self.pos..end].iter().copied().eq(w.chars()) {
            self.pos = end;
            true
        } else {
            false
        }
    }

    fn close_ket(&mut self) -> std::result::Result<(), ParseError> {
        match self.peek() {
            Some('⟩' | '>') => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error_at(self.pos, "expected `⟩`")),
        }
    }

    fn number(&mut self) -> std::result::Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() && (self.chars[self.pos].is_ascii_digit() || self.chars[self.pos] == '.') {
            self.pos += 1;
        }
        // Exponent part.
        if self.pos > start && matches!(self.chars.get(self.pos), Some('e' | 'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.chars.get(self.pos), Some('+' | '-')) {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        match text.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(self.error_at(start, "malformed coefficient")),
        }
    }

    fn coeff(&mut self) -> std::result::Result<Coeff, ParseError> {
        if self.eat('(') {
            let inner = self.coeff()?;
            self.expect(')', "`)`")?;
            return Ok(Coeff::Paren(Box::new(inner)));
        }
        let a = self.number()?;
        let save = self.pos;
        if self.eat('/') {
            if !self.eat_word("sqrt") {
                return Err(self.error_at(save, "malformed coefficient: only a/sqrt(b) is allowed"));
            }
            self.expect('(', "`(`")?;
            let at = self.pos;
            let b = self.number()?;
            if b <= 0.0 {
                return Err(self.error_at(at, "malformed coefficient: sqrt of a non-positive number"));
            }
            self.expect(')', "`)`")?;
            return Ok(Coeff::OverSqrt(a, b));
        }
        Ok(Coeff::Number(a))
    }

    fn open_ket(&mut self) -> std::result::Result<(), ParseError> {
        self.expect('|', "`|`")
    }

    fn ident(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() && is_ident(self.chars[self.pos]) {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn term(&mut self, negative: bool) -> std::result::Result<Term, ParseError> {
        let coeff = match self.peek() {
            Some('|') => None,
            Some(_) => Some(self.coeff()?),
            None => return Err(self.error_at(self.pos, "expected a term")),
        };
        self.open_ket()?;
        let at = self.pos;
        let alice = self.ident();
        if alice.is_empty() {
            return Err(self.error_at(at, "expected Alice's label"));
        }
        self.close_ket()?;
        self.eat('⊗');
        self.open_ket()?;
        let mut rob = Vec::new();
        loop {
            match self.peek() {
                Some('⟩' | '>') => {
                    self.pos += 1;
                    break;
                }
                None => return Err(self.error_at(self.pos, "unterminated ket")),
                _ => {}
            }
            let at = self.pos;
            let name = self.ident();
            if name.is_empty() {
                return Err(self.error_at(at, format!("unexpected `{}`", self.chars[at])));
            }
            let (sigma, count) = lookup_label(self.field, &name).map_err(|m| self.error_at(at, m))?;
            let weights = if self.eat('@') {
                self.expect('(', "`(` after `@`")?;
                let q_r = self.coeff()?;
                self.expect(',', "`,`")?;
                let q_l = self.coeff()?;
                self.expect(')', "`)`")?;
                Some((q_r, q_l))
            } else {
                None
            };
            for _ in 0..count {
                rob.push(RobOp { sigma, weights: weights.clone() });
            }
        }
        Ok(Term { negative, coeff, alice, rob })
    }
}

pub fn parse(input: &str, field: Field) -> std::result::Result<StateAst, ParseError> {
    let mut p = Parser { chars: input.chars().collect(), pos: 0, field };
    if p.peek().is_none() {
        return Err(p.error_at(0, "empty state"));
    }
    let mut terms = Vec::new();
    let mut negative = p.eat('-');
    if !negative {
        p.eat('+');
    }
    loop {
        terms.push(p.term(negative)?);
        match p.peek() {
            None => break,
            Some('+') => negative = false,
            Some('-') => negative = true,
            Some(c) => return Err(p.error_at(p.pos, format!("expected `+` or `-`, found `{c}`"))),
        }
        p.pos += 1;
    }
    Ok(StateAst { field, terms })
}

impl fmt::Display for Coeff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coeff::Number(x) => write!(f, "{x:?}"),
            Coeff::OverSqrt(a, b) => write!(f, "{a:?}/sqrt({b:?})"),
            Coeff::Paren(c) => write!(f, "({c})"),
        }
    }
}

/// Canonical text for a state; [`parse`] reads it back to the same AST.
pub fn print(ast: &StateAst) -> String {
    let mut out = String::new();
    for (k, t) in ast.terms.iter().enumerate() {
        match (k, t.negative) {
            (0, true) => out.push('-'),
            (0, false) => {}
            (_, true) => out.push_str(" - "),
            (_, false) => out.push_str(" + "),
        }
        if let Some(c) = &t.coeff {
            out.push_str(&c.to_string());
        }
        out.push_str(&format!("|{}⟩|", t.alice));
        let names: Vec<String> = t
            .rob
            .iter()
            .map(|op| {
                let name = if ast.field.spin == HalfInt::ZERO { "1".to_string() } else { sigma_name(ast.field, op.sigma) };
                match &op.weights {
                    Some((a, b)) => format!("{name}@({a},{b})"),
                    None => name,
                }
            })
            .collect();
        out.push_str(&names.join(" "));
        out.push('⟩');
    }
    out
}

impl fmt::Display for StateAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print(self))
    }
}

/// A state built from an AST at one `(r, q_R)` point.
#[derive(Clone, Debug)]
pub struct Elaborated {
    pub state: FactorizedState,
    /// Alice's labels in branch order.
    pub alice: [String; 2],
    /// Norm of the state as written, before normalization.
    pub raw_norm: f64,
    pub warnings: Vec<String>,
}

/// Builds every Rob ket through the sector constructions and normalizes the total
/// state. `cutoff` is required for bosons.
pub fn elaborate(ast: &StateAst, r: f64, q_r: f64, cutoff: Option<usize>) -> Result<Elaborated> {
    let field = ast.field;
    let stat = field.statistics;
    let default = UnruhParams::new(stat, r, q_r)?;
    let mut alice: Vec<String> = Vec::new();
    let mut branches: [Vec<SectorProduct>; 2] = [Vec::new(), Vec::new()];
    let mut warnings = Vec::new();
    for (k, t) in ast.terms.iter().enumerate() {
        let a = match alice.iter().position(|l| *l == t.alice) {
            Some(a) => a,
            None => {
                alice.push(t.alice.clone());
                alice.len() - 1
            }
        };
        if a > 1 {
            return Err(Error::AliceNotQubit(alice.len()));
        }
        let ops = t
            .rob
            .iter()
            .map(|op| {
                let params = match &op.weights {
                    None => default,
                    Some((x, y)) => UnruhParams::with_weights(stat, r, Complex64::new(x.value(), 0.0), Complex64::new(y.value(), 0.0))?,
                };
                Ok(Excitation { sigma: op.sigma, params })
            })
            .collect::<Result<Vec<_>>>()?;
        let product = match stat {
            Statistics::Fermi => fermi_excitation_product(field, r, &ops)?,
            Statistics::Bose => {
                let cutoff = cutoff.ok_or_else(|| Error::InvalidParameter("bosonic state needs a cutoff".into()))?;
                Some(bose_excitation_product(field, r, &ops, cutoff, None)?)
            }
        };
        match product {
            Some(mut p) => {
                p.coeff *= t.amplitude();
                branches[a].push(p);
            }
            None => warnings.push(format!("term {} vanishes: repeated fermionic excitation", k + 1)),
        }
    }
    if alice.len() != 2 {
        return Err(Error::AliceNotQubit(alice.len()));
    }
    let mut state = FactorizedState { field, branches };
    let norm = state.norm_sqr()?.sqrt();
    if !(norm > 1e-300) {
        return Err(Error::ZeroState);
    }
    for t in state.branches.iter_mut().flatten() {
        t.coeff /= norm;
    }
    let alice = [alice[0].clone(), alice[1].clone()];
    Ok(Elaborated { state, alice, raw_norm: norm, warnings })
}

/// Smallest bosonic cutoff that holds every term's excitations at `r = 0`.
pub fn inertial_cutoff(ast: &StateAst) -> usize {
    ast.terms.iter().map(|t| t.rob.len()).max().unwrap_or(0) + 1
}

/// Named states used by the figure presets.
pub mod presets {
    /// Spin-1 bosonic helicity state.
    pub const SPIN1: &str = "(1/sqrt(2))|R⟩|L⟩ + (1/sqrt(2))|L⟩|R⟩";
    /// Spin-3/2 fermionic state with two-particle excitations.
    pub const SPIN32: &str = "0.5|0⟩|up nup⟩ + 0.5|0⟩|up⟩ + 0.5|1⟩|dn ndn⟩ + 0.5|1⟩|dn⟩";
    /// Vacuum plus one excitation in the single sector of a spin-0 field.
    pub const SCALAR: &str = "(1/sqrt(2))|0⟩|⟩ + (1/sqrt(2))|1⟩|1⟩";
    /// Vacuum plus one spin-up excitation.
    pub const DIRAC: &str = "(1/sqrt(2))|0⟩|⟩ + (1/sqrt(2))|1⟩|up⟩";
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entanglement::{state_negativity, Limits, Ordering};
    use crate::ordering::OrderingConvention;
    use proptest::prelude::*;

    fn h(t: i32) -> HalfInt {
        HalfInt::from_twice(t)
    }

    #[test]
    fn parses_figure_states() {
        let f = Field::bose(h(2)).unwrap();
        let ast = parse(presets::SPIN1, f).unwrap();
        assert_eq!(ast.terms.len(), 2);
        assert_eq!(ast.terms[0].alice, "R");
        assert_eq!(ast.terms[0].rob, vec![RobOp { sigma: h(-2), weights: None }]);
        assert!((ast.terms[1].amplitude() - 0.5f64.sqrt()).abs() < 1e-15);

        let f = Field::fermi(h(1)).unwrap();
        let ast = parse("(1/sqrt(2))|0⟩|⟩ + (1/sqrt(2))|1⟩|up⟩", f).unwrap();
        assert!(ast.terms[0].rob.is_empty());
        assert_eq!(ast.terms[1].rob.len(), 1);

        let f = Field::fermi(h(3)).unwrap();
        let ast = parse("|0⟩|up nup⟩", f).unwrap();
        assert_eq!(ast.terms[0].rob.iter().map(|o| o.sigma).collect::<Vec<_>>(), vec![h(3), h(1)]);
        let ascii = parse("|0>|↑ ↗>", f).unwrap();
        assert_eq!(ascii, ast);
    }

    #[test]
    fn diagnostics_carry_positions() {
        let f = Field::fermi(h(3)).unwrap();
        let e = parse("|0⟩|up\n  sideways⟩", f).unwrap_err();
        assert_eq!((e.line, e.col), (2, 3));
        assert!(e.message.contains("sideways"));
        let e = parse("   ", f).unwrap_err();
        assert_eq!((e.line, e.col), (1, 1));
        let e = parse("2/3|0⟩|up⟩", f).unwrap_err();
        assert_eq!((e.line, e.col), (1, 2));
        let e = parse("1/sqrt(-2)|0⟩|up⟩", f).unwrap_err();
        assert!(e.message.contains("malformed"));
        let e = parse("|0⟩|up⟩ |1⟩|dn⟩", f).unwrap_err();
        assert_eq!((e.line, e.col), (1, 9));
        let e = parse("|0⟩|R⟩", f).unwrap_err();
        assert!(e.message.contains("unknown label"));
    }

    #[test]
    fn labels_per_spin() {
        let scalar = Field::bose(h(0)).unwrap();
        let ast = parse("|0⟩|3⟩", scalar).unwrap();
        assert_eq!(ast.terms[0].rob.len(), 3);
        let spin2 = Field::bose(h(4)).unwrap();
        let ast = parse("|0⟩|m=-1 m=2⟩", spin2).unwrap();
        assert_eq!(ast.terms[0].rob[0].sigma, h(-2));
        assert!(parse("|0⟩|m=1/2⟩", spin2).is_err());
        let ast = parse("|0⟩|up@(0.6,0.8)⟩", Field::fermi(h(1)).unwrap()).unwrap();
        assert_eq!(ast.terms[0].rob[0].weights, Some((Coeff::Number(0.6), Coeff::Number(0.8))));
    }

    fn arb_coeff() -> impl Strategy<Value = Coeff> {
        let leaf = prop_oneof![
            (0.0f64..10.0).prop_map(Coeff::Number),
            ((0.0f64..10.0), (0.01f64..10.0)).prop_map(|(a, b)| Coeff::OverSqrt(a, b)),
        ];
        leaf.prop_recursive(2, 4, 1, |inner| inner.prop_map(|c| Coeff::Paren(Box::new(c))))
    }

    fn arb_ast() -> impl Strategy<Value = StateAst> {
        let field = Field::fermi(h(3)).unwrap();
        let op = (prop::sample::select(vec![3, 1, -1, -3]), prop::option::of((arb_coeff(), arb_coeff())))
            .prop_map(|(t, w)| RobOp { sigma: h(t), weights: w });
        let term = (any::<bool>(), prop::option::of(arb_coeff()), prop::sample::select(vec!["0", "1", "R", "x_2"]), prop::collection::vec(op, 0..4))
            .prop_map(|(negative, coeff, alice, rob)| Term { negative, coeff, alice: alice.to_string(), rob });
        prop::collection::vec(term, 1..5).prop_map(move |terms| StateAst { field, terms })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(ast in arb_ast()) {
            let text = print(&ast);
            prop_assert_eq!(parse(&text, ast.field).unwrap(), ast);
        }
    }

    #[test]
    fn spin1_is_maximally_entangled_at_rest() {
        let f = Field::bose(h(2)).unwrap();
        let ast = parse(presets::SPIN1, f).unwrap();
        let e = elaborate(&ast, 0.0, 0.9, Some(inertial_cutoff(&ast))).unwrap();
        assert!((e.raw_norm - 1.0).abs() < 1e-14);
        assert!((e.state.norm_sqr().unwrap() - 1.0).abs() < 1e-14);
        let n = state_negativity(&e.state, Ordering::new(OrderingConvention::Spin), &Limits::default()).unwrap();
        // Left weight already sits in region II at rest.
        assert!((n - 0.81 / 2.0).abs() < 1e-12, "{n}");
        let e = elaborate(&ast, 0.0, 1.0, Some(inertial_cutoff(&ast))).unwrap();
        let n = state_negativity(&e.state, Ordering::new(OrderingConvention::Spin), &Limits::default()).unwrap();
        assert!((n - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spin32_sector_patterns() {
        let f = Field::fermi(h(3)).unwrap();
        let ast = parse(presets::SPIN32, f).unwrap();
        let e = elaborate(&ast, 0.3, 0.8, None).unwrap();
        assert_eq!(e.alice, ["0".to_string(), "1".to_string()]);
        let patterns: std::collections::BTreeSet<Vec<bool>> = e
            .state
            .branches
            .iter()
            .flatten()
            .map(|t| t.sectors.iter().map(|s| s.body.amplitude(&crate::fock::BasisLabel::zeros(4)).norm() < 0.5).collect())
            .collect();
        assert_eq!(patterns.len(), 4);
        assert!((e.raw_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vacuum_ket_and_rejections() {
        let f = Field::fermi(h(1)).unwrap();
        let ast = parse(presets::DIRAC, f).unwrap();
        let e = elaborate(&ast, 0.2, 1.0, None).unwrap();
        let vac = crate::vacuum::fermi_full_vacuum(f, 0.2).unwrap();
        let b0 = e.state.branch_vector(0).unwrap();
        assert!(b0.scaled(Complex64::new(2f64.sqrt(), 0.0)).max_abs_diff(&vac).unwrap() < 1e-15);

        let three = parse("|0⟩|⟩ + |1⟩|up⟩ + |2⟩|dn⟩", f).unwrap();
        assert!(matches!(elaborate(&three, 0.2, 1.0, None), Err(Error::AliceNotQubit(3))));
        let one = parse("|0⟩|⟩ + |0⟩|up⟩", f).unwrap();
        assert!(matches!(elaborate(&one, 0.2, 1.0, None), Err(Error::AliceNotQubit(1))));

        let zero = parse("|0⟩|⟩ + |1⟩|up up⟩ + |1⟩|dn⟩", f).unwrap();
        let e = elaborate(&zero, 0.2, 1.0, None).unwrap();
        assert_eq!(e.warnings.len(), 1);
        assert!((e.state.norm_sqr().unwrap() - 1.0).abs() < 1e-14);

        let bose = Field::bose(h(0)).unwrap();
        let ast = parse(presets::SCALAR, bose).unwrap();
        assert!(elaborate(&ast, 0.2, 1.0, None).is_err());
    }
}
