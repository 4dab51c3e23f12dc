//! Small expression grammar for metric and Higgs-field entries.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | atom
//! atom   := number | 'pi' | 'i' | 'x0'..'x3' | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp
//! ```
//!
//! Variables are real lattice coordinates. `i` is the imaginary unit.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lattice::C64;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(C64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!("unexpected trailing input in '{src}'")));
        }
        Ok(e)
    }

    pub fn real(v: f64) -> Expr {
        Expr::Const(C64::new(v, 0.0))
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        use Expr::*;
        match self {
            Const(_) => None,
            Var(k) => Some(*k),
            Neg(a) | Sin(a) | Cos(a) | Exp(a) => a.max_var(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    pub fn is_constant(&self) -> bool {
        self.max_var().is_none()
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        use Expr::*;
        match self {
            Const(c) => *c,
            Var(k) => C64::new(x.get(*k).copied().unwrap_or(0.0), 0.0),
            Neg(a) => -a.eval(x),
            Add(a, b) => a.eval(x) + b.eval(x),
            Sub(a, b) => a.eval(x) - b.eval(x),
            Mul(a, b) => a.eval(x) * b.eval(x),
            Div(a, b) => a.eval(x) / b.eval(x),
            Sin(a) => a.eval(x).sin(),
            Cos(a) => a.eval(x).cos(),
            Exp(a) => a.eval(x).exp(),
        }
    }

    /// Symbolic derivative with respect to real coordinate `axis`.
    pub fn diff(&self, axis: usize) -> Expr {
        use Expr::*;
        let b = Box::new;
        match self {
            Const(_) => Expr::real(0.0),
            Var(k) => Expr::real(if *k == axis { 1.0 } else { 0.0 }),
            Neg(a) => Neg(b(a.diff(axis))),
            Add(p, q) => Add(b(p.diff(axis)), b(q.diff(axis))),
            Sub(p, q) => Sub(b(p.diff(axis)), b(q.diff(axis))),
            Mul(p, q) => Add(
                b(Mul(b(p.diff(axis)), q.clone())),
                b(Mul(p.clone(), b(q.diff(axis)))),
            ),
            Div(p, q) => Div(
                b(Sub(
                    b(Mul(b(p.diff(axis)), q.clone())),
                    b(Mul(p.clone(), b(q.diff(axis)))),
                )),
                b(Mul(q.clone(), q.clone())),
            ),
            Sin(a) => Mul(b(Cos(a.clone())), b(a.diff(axis))),
            Cos(a) => Neg(b(Mul(b(Sin(a.clone())), b(a.diff(axis))))),
            Exp(a) => Mul(b(Exp(a.clone())), b(a.diff(axis))),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Expr::*;
        match self {
            Const(c) if c.im == 0.0 => write!(f, "{:?}", c.re),
            Const(c) => write!(f, "({:?}+{:?}*i)", c.re, c.im),
            Var(k) => write!(f, "x{k}"),
            Neg(a) => write!(f, "(-{a})"),
            Add(a, b) => write!(f, "({a}+{b})"),
            Sub(a, b) => write!(f, "({a}-{b})"),
            Mul(a, b) => write!(f, "({a}*{b})"),
            Div(a, b) => write!(f, "({a}/{b})"),
            Sin(a) => write!(f, "sin({a})"),
            Cos(a) => write!(f, "cos({a})"),
            Exp(a) => write!(f, "exp({a})"),
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Expr::real(v)),
            Raw::Text(s) => Expr::parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part, e.g. 1e-3
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| Error::Expr(format!("bad number '{text}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character '{c}' in '{src}'")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat_op(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_op('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_op('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_op('-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.atom()
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self.peek().cloned().ok_or_else(|| Error::Expr("unexpected end of expression".into()))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::real(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                if !self.eat_op(')') {
                    return Err(Error::Expr("missing ')'".into()));
                }
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "pi" => Ok(Expr::real(std::f64::consts::PI)),
                "i" => Ok(Expr::Const(C64::new(0.0, 1.0))),
                "sin" | "cos" | "exp" => {
                    if !self.eat_op('(') {
                        return Err(Error::Expr(format!("expected '(' after {name}")));
                    }
                    let arg = Box::new(self.expr()?);
                    if !self.eat_op(')') {
                        return Err(Error::Expr("missing ')'".into()));
                    }
                    Ok(match name.as_str() {
                        "sin" => Expr::Sin(arg),
                        "cos" => Expr::Cos(arg),
                        _ => Expr::Exp(arg),
                    })
                }
                v if v.starts_with('x') => {
                    let k: usize = v[1..].parse().map_err(|_| Error::Expr(format!("unknown variable '{v}'")))?;
                    if k > 3 {
                        return Err(Error::Expr(format!("variable '{v}' out of range (x0..x3)")));
                    }
                    Ok(Expr::Var(k))
                }
                other => Err(Error::Expr(format!("unknown identifier '{other}'"))),
            },
            Tok::Op(c) => Err(Error::Expr(format!("unexpected '{c}'"))),
        }
    }
}
