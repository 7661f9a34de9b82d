//! Infix text for expressions.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := signed (('*' | '·') signed)*
//! signed  := '-' signed | power
//! power   := primary ('^' exponent)?
//! exponent:= '-' exponent | primary ('^' exponent)?
//! primary := number | name '(' sum (',' sum)? ')' | name | '(' sum ')'
//! ```
//!
//! Variables are `x<k>` or entries of a feature-name list. `a - b` is read as
//! `a + (−1)·b` with the sign folded into a leading constant when there is one.

use crate::diff::Registry;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::scalar::Scalar;

#[derive(Clone, Debug, Default)]
pub struct TextOptions<'a> {
    /// Round constants to this many significant figures (display only).
    pub sig_figs: Option<usize>,
    /// Names printed instead of `x<k>`.
    pub feature_names: Option<&'a [String]>,
}

const SUM: u8 = 1;
const PRODUCT: u8 = 2;
const SIGNED: u8 = 3;
const POWER: u8 = 4;
const ATOM: u8 = 5;

pub(crate) fn render<T: Scalar>(e: &Expr<T>, opts: &TextOptions) -> String {
    let mut out = String::new();
    write(e, opts, &mut out);
    out
}

fn number(v: f64, opts: &TextOptions) -> String {
    let v = match opts.sig_figs {
        Some(d) if v != 0.0 && v.is_finite() => format!("{:.*e}", d.saturating_sub(1), v).parse().unwrap_or(v),
        _ => v,
    };
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Binding strength of the printed form.
fn level<T: Scalar>(e: &Expr<T>) -> u8 {
    match e {
        Expr::Constant { value } if value.is_sign_negative() && *value != T::zero() => SIGNED,
        Expr::Constant { .. } | Expr::Variable { .. } | Expr::Unary { .. } => ATOM,
        Expr::Binary { op, .. } => match op.as_str() {
            "add" | "sub" => SUM,
            "mul" => match leading_constant(e) {
                Some(c) if c < T::zero() => SIGNED,
                _ => PRODUCT,
            },
            "pow" => POWER,
            _ => ATOM,
        },
    }
}

fn leading_constant<T: Scalar>(e: &Expr<T>) -> Option<T> {
    match e {
        Expr::Constant { value } => Some(*value),
        Expr::Binary { op, left, .. } if op == "mul" => leading_constant(left),
        _ => None,
    }
}

fn wrap<T: Scalar>(e: &Expr<T>, min: u8, opts: &TextOptions, out: &mut String) {
    if level(e) < min {
        out.push('(');
        write(e, opts, out);
        out.push(')');
    } else {
        write(e, opts, out);
    }
}

/// Writes `e` with the sign of its leading constant flipped, for `a - e`.
fn write_negated<T: Scalar>(e: &Expr<T>, opts: &TextOptions, out: &mut String) -> bool {
    match e {
        Expr::Constant { value } if *value < T::zero() => {
            out.push_str(&number(-value.as_f64(), opts));
            true
        }
        Expr::Binary { op, left, right } if op == "mul" => {
            let mut inner = String::new();
            if !write_negated(left, opts, &mut inner) {
                return false;
            }
            out.push_str(&inner);
            out.push('*');
            wrap(right, POWER, opts, out);
            true
        }
        _ => false,
    }
}

fn write<T: Scalar>(e: &Expr<T>, opts: &TextOptions, out: &mut String) {
    match e {
        Expr::Constant { value } => out.push_str(&number(value.as_f64(), opts)),
        Expr::Variable { index } => match opts.feature_names.and_then(|n| n.get(*index)) {
            Some(name) => out.push_str(name),
            None => out.push_str(&format!("x{index}")),
        },
        Expr::Unary { op, child } => {
            out.push_str(op);
            out.push('(');
            write(child, opts, out);
            out.push(')');
        }
        Expr::Binary { op, left, right } => match op.as_str() {
            "add" => {
                wrap(left, SUM, opts, out);
                let mut neg = String::new();
                if write_negated(right, opts, &mut neg) {
                    out.push_str(" - ");
                    out.push_str(&neg);
                } else {
                    out.push_str(" + ");
                    wrap(right, SUM + 1, opts, out);
                }
            }
            "sub" => {
                wrap(left, SUM, opts, out);
                out.push_str(" - ");
                wrap(right, SUM + 1, opts, out);
            }
            "mul" => {
                wrap(left, PRODUCT, opts, out);
                out.push('*');
                wrap(right, POWER, opts, out);
            }
            "pow" => {
                wrap(left, ATOM, opts, out);
                out.push('^');
                wrap(right, ATOM, opts, out);
            }
            _ => {
                out.push_str(op);
                out.push('(');
                write(left, opts, out);
                out.push_str(", ");
                write(right, opts, out);
                out.push(')');
            }
        },
    }
}

/// Parses infix text against the standard operator registry.
pub fn parse_text<T: Scalar>(text: &str, feature_names: Option<&[String]>) -> Result<Expr<T>> {
    parse_text_with(text, feature_names, &Registry::standard())
}

pub fn parse_text_with<T: Scalar>(text: &str, feature_names: Option<&[String]>, registry: &Registry<T>) -> Result<Expr<T>> {
    let mut p = Parser { src: text, pos: 0, names: feature_names, registry };
    let e = p.sum()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error(format!("unexpected `{}`", p.rest().chars().next().unwrap())));
    }
    Ok(e)
}

struct Parser<'a, T> {
    src: &'a str,
    pos: usize,
    names: Option<&'a [String]>,
    registry: &'a Registry<T>,
}

impl<'a, T: Scalar> Parser<'a, T> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse { pos: self.pos, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        let r = self.rest();
        self.pos += r.len() - r.trim_start().len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest().chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{c}`")))
        }
    }

    fn sum(&mut self) -> Result<Expr<T>> {
        let mut acc = self.product()?;
        loop {
            if self.eat('+') {
                let rhs = self.product()?;
                acc = Expr::add(acc, rhs);
            } else if self.eat('-') || self.eat('−') {
                let rhs = self.product()?;
                acc = Expr::add(acc, negate(rhs));
            } else {
                return Ok(acc);
            }
        }
    }

    fn product(&mut self) -> Result<Expr<T>> {
        let mut acc = self.signed()?;
        while self.eat('*') || self.eat('·') {
            let rhs = self.signed()?;
            acc = Expr::mul(acc, rhs);
        }
        Ok(acc)
    }

    fn signed(&mut self) -> Result<Expr<T>> {
        if self.eat('-') || self.eat('−') {
            return Ok(negate_atom(self.signed()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr<T>> {
        let base = self.primary()?;
        if self.eat('^') {
            let exp = self.exponent()?;
            return Ok(Expr::pow(base, exp));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<Expr<T>> {
        if self.eat('-') || self.eat('−') {
            return Ok(negate_atom(self.exponent()?));
        }
        self.power()
    }

    fn primary(&mut self) -> Result<Expr<T>> {
        let start = {
            self.skip_ws();
            self.pos
        };
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some('(') => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_alphabetic() || c == '_' => {
                let r = self.rest();
                let len = r.find(|ch: char| !(ch.is_alphanumeric() || ch == '_')).unwrap_or(r.len());
                let name = &r[..len];
                self.pos += len;
                if self.peek() == Some('(') {
                    self.pos += 1;
                    return self.call(name, start);
                }
                self.variable(name, start)
            }
            Some(c) => Err(self.error(format!("unexpected `{c}`"))),
        }
    }

    fn call(&mut self, name: &str, start: usize) -> Result<Expr<T>> {
        let first = self.sum()?;
        let second = if self.eat(',') { Some(self.sum()?) } else { None };
        self.expect(')')?;
        let arity = if second.is_some() { 2 } else { 1 };
        match self.registry.lookup(name) {
            None => Err(Error::Parse { pos: start, msg: format!("unknown operator `{name}`") }),
            Some(p) if p.arity != arity => Err(Error::Parse {
                pos: start,
                msg: format!("operator `{name}` takes {} argument(s), got {arity}", p.arity),
            }),
            Some(_) => Ok(match second {
                Some(b) => Expr::binary(name, first, b),
                None => Expr::unary(name, first),
            }),
        }
    }

    fn variable(&self, name: &str, start: usize) -> Result<Expr<T>> {
        if let Some(i) = self.names.and_then(|n| n.iter().position(|s| s == name)) {
            return Ok(Expr::var(i));
        }
        if let Some(k) = name.strip_prefix('x') {
            if !k.is_empty() && k.chars().all(|c| c.is_ascii_digit()) {
                if let Ok(i) = k.parse::<usize>() {
                    if let Some(n) = self.names {
                        if i >= n.len() {
                            return Err(Error::Parse { pos: start, msg: format!("variable `{name}` is out of range") });
                        }
                    }
                    return Ok(Expr::var(i));
                }
            }
        }
        Err(Error::Parse { pos: start, msg: format!("unknown variable `{name}`") })
    }

    fn number(&mut self) -> Result<Expr<T>> {
        let r = self.rest().as_bytes();
        let mut i = 0;
        while i < r.len() && (r[i].is_ascii_digit() || r[i] == b'.') {
            i += 1;
        }
        if i < r.len() && (r[i] == b'e' || r[i] == b'E') {
            let mut j = i + 1;
            if j < r.len() && (r[j] == b'+' || r[j] == b'-') {
                j += 1;
            }
            if j < r.len() && r[j].is_ascii_digit() {
                while j < r.len() && r[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = &self.rest()[..i];
        let v: f64 = text.parse().map_err(|_| self.error(format!("malformed number `{text}`")))?;
        self.pos += i;
        Ok(Expr::constant(T::lit(v)))
    }
}

/// `−e` for a unary minus: folds into a constant, otherwise `(−1)·e`.
fn negate_atom<T: Scalar>(e: Expr<T>) -> Expr<T> {
    match e {
        Expr::Constant { value } => Expr::constant(-value),
        other => Expr::mul(Expr::constant(-T::one()), other),
    }
}

/// `−e` for the right side of a subtraction: flips a leading constant when there is one.
fn negate<T: Scalar>(e: Expr<T>) -> Expr<T> {
    fn flip<T: Scalar>(e: &mut Expr<T>) -> bool {
        match e {
            Expr::Constant { value } => {
                *value = -*value;
                true
            }
            Expr::Binary { op, left, .. } if op == "mul" => flip(left),
            _ => false,
        }
    }
    let mut e = e;
    if flip(&mut e) {
        e
    } else {
        Expr::mul(Expr::constant(-T::one()), e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::simplify::tests::tree;
    use proptest::prelude::*;

    type E = Expr<f64>;

    fn p(s: &str) -> E {
        parse_text(s, None).unwrap()
    }

    #[test]
    fn basic_parses() {
        assert_eq!(p("x0 + x1"), E::add(E::var(0), E::var(1)));
        let z = p("0.43*exp(-6.9*(x13)^2)");
        assert_eq!(z.complexity(), 8);
        assert_eq!(
            z,
            E::mul(E::constant(0.43), E::unary("exp", E::mul(E::constant(-6.9), E::pow(E::var(13), E::constant(2.0)))))
        );
        assert_eq!(p("2^3^2").as_constant(), None);
        assert_eq!(p("-x0^2"), E::mul(E::constant(-1.0), E::pow(E::var(0), E::constant(2.0))));
        assert_eq!(p("x0 - 2*x1"), E::add(E::var(0), E::mul(E::constant(-2.0), E::var(1))));
        assert_eq!(p("x0 - x1"), E::add(E::var(0), E::mul(E::constant(-1.0), E::var(1))));
        assert_eq!(p("1.5e-3"), E::constant(1.5e-3));
        assert_eq!(p("pow(x0, 2)"), E::pow(E::var(0), E::constant(2.0)));
        assert_eq!(p("x1^-2"), E::pow(E::var(1), E::constant(-2.0)));
    }

    #[test]
    fn precedence() {
        let reg = Registry::standard();
        let at = |s: &str, x: &[f64]| p(s).eval(&reg, x).unwrap();
        assert_eq!(at("1 + 2*3", &[]), 7.0);
        assert_eq!(at("2*3^2", &[]), 18.0);
        assert_eq!(at("2^3^2", &[]), 512.0);
        assert_eq!(at("sin(x0)^2", &[1.0]), 1f64.sin().powi(2));
        assert_eq!(at("1 - 2 - 3", &[]), -4.0);
        assert_eq!(at("-2^2", &[]), -4.0);
        assert_eq!(at("(1 + 2)*(3 - 1)", &[]), 6.0);
    }

    #[test]
    fn product_chains_print_flat() {
        let e = E::mul(E::mul(E::constant(1.5), E::var(1)), E::var(2));
        assert_eq!(e.to_text(), "1.5*x1*x2");
        assert_eq!(p(&e.to_text()), e);
        let right = E::mul(E::var(0), E::mul(E::var(1), E::var(2)));
        assert_eq!(right.to_text(), "x0*(x1*x2)");
        assert_eq!(E::mul(E::mul(E::constant(-2.0), E::var(0)), E::var(1)).to_text(), "-2*x0*x1");
    }

    #[test]
    fn named_features() {
        let names: Vec<String> = ["j_mass", "j_c1"].iter().map(|s| s.to_string()).collect();
        let e = parse_text::<f64>("2*j_mass + tanh(j_c1)", Some(&names)).unwrap();
        assert_eq!(e.variables().into_iter().collect::<Vec<_>>(), vec![0, 1]);
        let text = e.to_text_with(&TextOptions { sig_figs: None, feature_names: Some(&names) });
        assert_eq!(text, "2*j_mass + tanh(j_c1)");
        assert!(parse_text::<f64>("j_nope", Some(&names)).is_err());
    }

    #[test]
    fn errors_carry_positions() {
        match parse_text::<f64>("x0 + * x1", None) {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_text::<f64>("foo(x0)", None), Err(Error::Parse { pos: 0, .. })));
        assert!(matches!(parse_text::<f64>("y", None), Err(Error::Parse { .. })));
        assert!(matches!(parse_text::<f64>("(x0", None), Err(Error::Parse { .. })));
        assert!(matches!(parse_text::<f64>("x0)", None), Err(Error::Parse { pos: 2, .. })));
        assert!(matches!(parse_text::<f64>("sin(x0, x1)", None), Err(Error::Parse { .. })));
        assert!(parse_text::<f64>("", None).is_err());
    }

    #[test]
    fn rendering() {
        assert_eq!(p("x0 - 2*x1").to_text(), "x0 - 2*x1");
        assert_eq!(p("0.43*exp(-6.9*x13^2)").to_text(), "0.43*exp(-6.9*x13^2)");
        assert_eq!(E::mul(E::constant(0.43219), E::var(0)).to_display(), "0.43*x0");
        assert_eq!(E::constant(-0.0012345).to_display(), "-0.0012");
        assert_eq!(E::constant(1e-20).to_text(), "1e-20");
        assert_eq!(E::pow(E::constant(-2.0), E::var(0)).to_text(), "(-2)^x0");
        assert_eq!(E::mul(E::var(0), E::add(E::var(1), E::var(2))).to_text(), "x0*(x1 + x2)");
        assert_eq!(E::binary("sub", E::var(0), E::add(E::var(1), E::var(2))).to_text(), "x0 - (x1 + x2)");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip_is_semantic_identity(e in tree(6), pts in prop::collection::vec(prop::collection::vec(-1.5f64..1.5, 4), 8)) {
            let reg = Registry::standard();
            let text = e.to_text();
            let back: E = parse_text(&text, None).unwrap();
            for x in &pts {
                if let (Ok(a), Ok(b)) = (e.eval(&reg, x), back.eval(&reg, x)) {
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{text}: {a} vs {b}");
                }
            }
            let again: E = parse_text(&back.to_text(), None).unwrap();
            prop_assert_eq!(again.to_text(), back.to_text());
        }
    }
}
