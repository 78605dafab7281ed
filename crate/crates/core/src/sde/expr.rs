//! Arithmetic expressions over `t`, `x1..xd` and named quasi-periodic
//! coefficients.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := number | 't' | 'x'IDX | 'pi' | name | func '(' expr ')' | '(' expr ')' | '-' factor
//! func   := sin | cos | tanh | arctan | exp | abs | sqrt
//! ```
//!
//! `sqrt` only accepts constant arguments, so frequencies such as `sqrt(2)`
//! can be written exactly. Every division must have a denominator whose
//! interval enclosure over all `t` and `x` excludes zero.

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

use crate::apfun::{Mode, QpFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("offset {offset}: unknown coefficient or variable '{name}'")]
    Unknown { offset: usize, name: String },
    #[error("offset {offset}: denominator may vanish (enclosure [{lo}, {hi}])")]
    UnsafeDivision { offset: usize, lo: f64, hi: f64 },
    #[error("offset {offset}: {msg}")]
    NotQuasiPeriodic { offset: usize, msg: String },
}

impl ExprError {
    pub fn offset(&self) -> usize {
        match self {
            ExprError::Syntax { offset, .. }
            | ExprError::Unknown { offset, .. }
            | ExprError::UnsafeDivision { offset, .. }
            | ExprError::NotQuasiPeriodic { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tanh,
    Arctan,
    Exp,
    Abs,
    Sqrt,
}

impl Func {
    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "arctan" | "atan" => Func::Arctan,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Arctan => "arctan",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tanh => v.tanh(),
            Func::Arctan => v.atan(),
            Func::Exp => v.exp(),
            Func::Abs => v.abs(),
            Func::Sqrt => v.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Syntax tree; `offset` fields are byte offsets into the source text.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    T,
    /// Zero-based state coordinate.
    X(usize),
    /// Index into the coefficient table the expression was parsed against.
    Coef(usize),
    Neg(Box<Node>),
    Func(Func, Box<Node>, usize),
    Bin(BinOp, Box<Node>, Box<Node>, usize),
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    T,
    X(usize),
    Coef(usize),
    Neg,
    Func(Func),
    Add,
    Sub,
    Mul,
    Div,
}

const MAX_STACK: usize = 64;

/// Parsed, validated and compiled expression.
#[derive(Debug, Clone)]
pub struct Expression {
    source: String,
    root: Node,
    program: Vec<Op>,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

/// Names visible to the parser.
#[derive(Debug, Clone, Default)]
pub struct Scope<'a> {
    /// State dimension; `x1..x{dim}` are accepted.
    pub dim: usize,
    pub coefficients: &'a [(String, QpFunction)],
}

impl Expression {
    pub fn parse(src: &str, scope: &Scope) -> Result<Self, ExprError> {
        let mut p = Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            scope,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(p.err("unexpected trailing input"));
        }
        check_divisions(&root, scope.coefficients)?;
        let mut program = Vec::new();
        let depth = compile(&root, &mut program);
        if depth > MAX_STACK {
            return Err(ExprError::Syntax {
                offset: 0,
                msg: "expression nested too deeply".into(),
            });
        }
        Ok(Self {
            source: src.trim().to_string(),
            root,
            program,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn depends_on_x(&self) -> bool {
        fn go(n: &Node) -> bool {
            match n {
                Node::X(_) => true,
                Node::Const(_) | Node::T | Node::Coef(_) => false,
                Node::Neg(a) | Node::Func(_, a, _) => go(a),
                Node::Bin(_, a, b, _) => go(a) || go(b),
            }
        }
        go(&self.root)
    }

    /// One plus the largest state index used, so `x3` gives 3; 0 if none.
    pub fn max_state_index(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::X(i) => i + 1,
                Node::Const(_) | Node::T | Node::Coef(_) => 0,
                Node::Neg(a) | Node::Func(_, a, _) => go(a),
                Node::Bin(_, a, b, _) => go(a).max(go(b)),
            }
        }
        go(&self.root)
    }

    /// Evaluates with coefficient values already taken at `t`.
    pub fn eval(&self, t: f64, x: &[f64], coef_values: &[f64]) -> f64 {
        let mut stack = [0.0f64; MAX_STACK];
        let mut sp = 0usize;
        for op in &self.program {
            match *op {
                Op::Const(c) => {
                    stack[sp] = c;
                    sp += 1;
                }
                Op::T => {
                    stack[sp] = t;
                    sp += 1;
                }
                Op::X(i) => {
                    stack[sp] = x[i];
                    sp += 1;
                }
                Op::Coef(i) => {
                    stack[sp] = coef_values[i];
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Func(f) => stack[sp - 1] = f.apply(stack[sp - 1]),
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let b = stack[sp - 1];
                    let a = stack[sp - 2];
                    sp -= 1;
                    stack[sp - 1] = match op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        _ => a / b,
                    };
                }
            }
        }
        stack[0]
    }

    /// Evaluates, taking coefficient values from the table at `t`.
    pub fn eval_with(&self, t: f64, x: &[f64], coefficients: &[(String, QpFunction)]) -> f64 {
        let values: Vec<f64> = coefficients.iter().map(|(_, q)| q.eval(t)).collect();
        self.eval(t, x, &values)
    }

    /// Exact quasi-periodic form of an expression in `t` alone.
    pub fn to_qp(&self, coefficients: &[(String, QpFunction)]) -> Result<QpFunction, ExprError> {
        to_qp(&self.root, coefficients)
    }
}

fn compile(n: &Node, out: &mut Vec<Op>) -> usize {
    match n {
        Node::Const(c) => {
            out.push(Op::Const(*c));
            1
        }
        Node::T => {
            out.push(Op::T);
            1
        }
        Node::X(i) => {
            out.push(Op::X(*i));
            1
        }
        Node::Coef(i) => {
            out.push(Op::Coef(*i));
            1
        }
        Node::Neg(a) => {
            let d = compile(a, out);
            out.push(Op::Neg);
            d
        }
        Node::Func(f, a, _) => {
            let d = compile(a, out);
            out.push(Op::Func(*f));
            d
        }
        Node::Bin(op, a, b, _) => {
            let da = compile(a, out);
            let db = compile(b, out);
            out.push(match op {
                BinOp::Add => Op::Add,
                BinOp::Sub => Op::Sub,
                BinOp::Mul => Op::Mul,
                BinOp::Div => Op::Div,
            });
            da.max(db + 1)
        }
    }
}

struct Parser<'s, 'c> {
    src: &'s str,
    bytes: &'s [u8],
    pos: usize,
    scope: &'c Scope<'c>,
}

impl Parser<'_, '_> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let at = self.pos;
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs), at);
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            let at = self.pos;
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs), at);
        }
    }

    fn factor(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => Err(self.err("unexpected end of expression")),
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.factor()?)))
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let b = self.bytes;
        let mut i = self.pos;
        while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
            i += 1;
        }
        if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
            let mut j = i + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            if j < b.len() && b[j].is_ascii_digit() {
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = &self.src[start..i];
        let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            msg: format!("malformed number '{text}'"),
        })?;
        self.pos = i;
        Ok(Node::Const(v))
    }

    fn ident(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let b = self.bytes;
        let mut i = self.pos;
        while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
            i += 1;
        }
        let name = &self.src[start..i];
        self.pos = i;
        if let Some(f) = Func::from_name(name) {
            self.expect(b'(')?;
            let arg = self.expr()?;
            self.expect(b')')?;
            if f == Func::Sqrt {
                return match const_value(&arg) {
                    Some(v) if v >= 0.0 => Ok(Node::Const(v.sqrt())),
                    _ => Err(ExprError::Syntax {
                        offset: start,
                        msg: "sqrt needs a nonnegative constant argument".into(),
                    }),
                };
            }
            return Ok(Node::Func(f, Box::new(arg), start));
        }
        if name == "t" {
            return Ok(Node::T);
        }
        if name == "pi" {
            return Ok(Node::Const(PI));
        }
        if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if idx >= 1 && idx <= self.scope.dim {
                return Ok(Node::X(idx - 1));
            }
        }
        if let Some(k) = self.scope.coefficients.iter().position(|(n, _)| n == name) {
            return Ok(Node::Coef(k));
        }
        Err(ExprError::Unknown {
            offset: start,
            name: name.into(),
        })
    }
}

fn const_value(n: &Node) -> Option<f64> {
    match n {
        Node::Const(c) => Some(*c),
        Node::T | Node::X(_) | Node::Coef(_) => None,
        Node::Neg(a) => const_value(a).map(|v| -v),
        Node::Func(f, a, _) => const_value(a).map(|v| f.apply(v)),
        Node::Bin(op, a, b, _) => {
            let (a, b) = (const_value(a)?, const_value(b)?);
            Some(match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
            })
        }
    }
}

/// Closed interval with possibly infinite ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    const ALL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn contains_zero(&self) -> bool {
        self.lo <= 0.0 && self.hi >= 0.0
    }

    fn mul(self, o: Self) -> Self {
        let p = |a: f64, b: f64| if a == 0.0 || b == 0.0 { 0.0 } else { a * b };
        let c = [p(self.lo, o.lo), p(self.lo, o.hi), p(self.hi, o.lo), p(self.hi, o.hi)];
        Self {
            lo: c.iter().copied().fold(f64::INFINITY, f64::min),
            hi: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn square(self) -> Self {
        let m = self.mul(self);
        Self {
            lo: if self.contains_zero() { 0.0 } else { m.lo.max(0.0) },
            hi: m.hi,
        }
    }

    fn recip(self) -> Self {
        Self {
            lo: 1.0 / self.hi,
            hi: 1.0 / self.lo,
        }
    }
}

/// Enclosure of the range of `n` over all `t ∈ R`, `x ∈ R^d`.
pub fn enclosure(n: &Node, coefs: &[(String, QpFunction)]) -> Interval {
    match n {
        Node::Const(c) => Interval::point(*c),
        Node::T | Node::X(_) => Interval::ALL,
        Node::Coef(k) => {
            let q = &coefs[*k].1;
            let r: f64 = q.modes().iter().map(|m| m.amp.abs()).sum();
            Interval {
                lo: q.offset() - r,
                hi: q.offset() + r,
            }
        }
        Node::Neg(a) => {
            let i = enclosure(a, coefs);
            Interval { lo: -i.hi, hi: -i.lo }
        }
        Node::Func(f, a, _) => {
            let i = enclosure(a, coefs);
            if i.lo == i.hi {
                return Interval::point(f.apply(i.lo));
            }
            match f {
                Func::Sin | Func::Cos => Interval { lo: -1.0, hi: 1.0 },
                Func::Tanh => Interval {
                    lo: i.lo.tanh(),
                    hi: i.hi.tanh(),
                },
                Func::Arctan => Interval {
                    lo: i.lo.atan(),
                    hi: i.hi.atan(),
                },
                Func::Exp => Interval {
                    lo: i.lo.exp(),
                    hi: i.hi.exp(),
                },
                Func::Abs => {
                    if i.contains_zero() {
                        Interval {
                            lo: 0.0,
                            hi: i.hi.max(-i.lo),
                        }
                    } else {
                        Interval {
                            lo: i.lo.abs().min(i.hi.abs()),
                            hi: i.lo.abs().max(i.hi.abs()),
                        }
                    }
                }
                Func::Sqrt => Interval {
                    lo: i.lo.max(0.0).sqrt(),
                    hi: i.hi.max(0.0).sqrt(),
                },
            }
        }
        Node::Bin(op, a, b, _) => {
            let (ia, ib) = (enclosure(a, coefs), enclosure(b, coefs));
            match op {
                BinOp::Add => Interval {
                    lo: ia.lo + ib.lo,
                    hi: ia.hi + ib.hi,
                },
                BinOp::Sub => Interval {
                    lo: ia.lo - ib.hi,
                    hi: ia.hi - ib.lo,
                },
                BinOp::Mul if a == b => ia.square(),
                BinOp::Mul => ia.mul(ib),
                BinOp::Div => {
                    if ib.contains_zero() {
                        Interval::ALL
                    } else {
                        ia.mul(ib.recip())
                    }
                }
            }
        }
    }
}

fn check_divisions(n: &Node, coefs: &[(String, QpFunction)]) -> Result<(), ExprError> {
    match n {
        Node::Const(_) | Node::T | Node::X(_) | Node::Coef(_) => Ok(()),
        Node::Neg(a) | Node::Func(_, a, _) => check_divisions(a, coefs),
        Node::Bin(op, a, b, at) => {
            check_divisions(a, coefs)?;
            check_divisions(b, coefs)?;
            if *op == BinOp::Div {
                let den = enclosure(b, coefs);
                if den.contains_zero() || den.lo.is_nan() || den.hi.is_nan() {
                    return Err(ExprError::UnsafeDivision {
                        offset: *at,
                        lo: den.lo,
                        hi: den.hi,
                    });
                }
            }
            Ok(())
        }
    }
}

/// `(ω, φ)` with `n ≡ ω·t + φ`, if `n` is affine in `t`.
fn affine_in_t(n: &Node) -> Option<(f64, f64)> {
    match n {
        Node::Const(c) => Some((0.0, *c)),
        Node::T => Some((1.0, 0.0)),
        Node::X(_) | Node::Coef(_) | Node::Func(..) => const_value(n).map(|c| (0.0, c)),
        Node::Neg(a) => affine_in_t(a).map(|(w, p)| (-w, -p)),
        Node::Bin(op, a, b, _) => {
            let (wa, pa) = affine_in_t(a)?;
            let (wb, pb) = affine_in_t(b)?;
            match op {
                BinOp::Add => Some((wa + wb, pa + pb)),
                BinOp::Sub => Some((wa - wb, pa - pb)),
                BinOp::Mul if wa == 0.0 => Some((pa * wb, pa * pb)),
                BinOp::Mul if wb == 0.0 => Some((wa * pb, pa * pb)),
                BinOp::Div if wb == 0.0 => Some((wa / pb, pa / pb)),
                _ => None,
            }
        }
    }
}

fn not_qp(offset: usize, msg: &str) -> ExprError {
    ExprError::NotQuasiPeriodic {
        offset,
        msg: msg.into(),
    }
}

fn to_qp(n: &Node, coefs: &[(String, QpFunction)]) -> Result<QpFunction, ExprError> {
    if let Some(c) = const_value(n) {
        return Ok(QpFunction::constant(c));
    }
    match n {
        Node::Const(c) => Ok(QpFunction::constant(*c)),
        Node::T => Err(not_qp(0, "bare t is not quasi-periodic")),
        Node::X(_) => Err(not_qp(0, "coefficient may not depend on the state")),
        Node::Coef(k) => Ok(coefs[*k].1.clone()),
        Node::Neg(a) => Ok(to_qp(a, coefs)?.scale(-1.0)),
        Node::Func(f, a, at) => {
            let shift = match f {
                Func::Cos => 0.0,
                Func::Sin => -PI / 2.0,
                _ => return Err(not_qp(*at, &format!("{} of a time-varying argument", f.name()))),
            };
            let (w, p) = affine_in_t(a).ok_or_else(|| not_qp(*at, "argument must be affine in t"))?;
            let (w, p) = if w < 0.0 { (-w, -p - 2.0 * shift) } else { (w, p) };
            // cos is even, sin odd: sin(−u) = cos(−u − π/2) = cos(u + π/2)
            QpFunction::new(
                0.0,
                vec![Mode {
                    amp: 1.0,
                    freq: w,
                    phase: p + shift,
                }],
            )
            .map_err(|e| not_qp(*at, &e.to_string()))
        }
        Node::Bin(op, a, b, at) => {
            let qa = to_qp(a, coefs)?;
            match op {
                BinOp::Add => Ok(qa.add(&to_qp(b, coefs)?)),
                BinOp::Sub => Ok(qa.sub(&to_qp(b, coefs)?)),
                BinOp::Mul => Ok(qa.mul(&to_qp(b, coefs)?)),
                BinOp::Div => match const_value(b) {
                    Some(c) => Ok(qa.scale(1.0 / c)),
                    None => Err(not_qp(*at, "division by a time-varying quantity")),
                },
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn parse(s: &str, dim: usize) -> Result<Expression, ExprError> {
        Expression::parse(
            s,
            &Scope {
                dim,
                coefficients: &[],
            },
        )
    }

    #[test]
    fn drift_text_evaluates() {
        let e = parse("-x1 + cos(t)", 1).unwrap();
        assert_eq!(e.eval(0.0, &[1.0], &[]), 0.0);
    }

    #[test]
    fn precedence_and_unary_minus() {
        let e = parse("1 + 2*3 - -4/2", 0).unwrap();
        assert_eq!(e.eval(0.0, &[], &[]), 9.0);
        let e = parse("-(2 - 5)*x2", 2).unwrap();
        assert_eq!(e.eval(0.0, &[0.0, 2.0], &[]), 6.0);
        let e = parse("2.5e-1*pi", 0).unwrap();
        assert!((e.eval(0.0, &[], &[]) - PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let err = parse("1 + * 2", 1).unwrap_err();
        assert_eq!(err.offset(), 4);
        assert!(matches!(parse("cos(t", 1), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("x2", 1), Err(ExprError::Unknown { offset: 0, .. })));
        assert!(matches!(parse("foo + 1", 1), Err(ExprError::Unknown { .. })));
        assert!(matches!(parse("1 2", 1), Err(ExprError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn division_certificates() {
        assert!(parse("1/(2 + cos(t))", 1).is_ok());
        assert!(parse("x1/(1 + x1*x1)", 1).is_ok());
        assert!(parse("1/(1 + exp(x1))", 1).is_ok());
        assert!(matches!(parse("1/x1", 1), Err(ExprError::UnsafeDivision { .. })));
        assert!(matches!(parse("1/(1 + cos(t))", 1), Err(ExprError::UnsafeDivision { .. })));
        assert!(matches!(parse("1/(1 - 1)", 1), Err(ExprError::UnsafeDivision { .. })));
    }

    #[test]
    fn sqrt_only_of_constants() {
        let e = parse("cos(sqrt(2)*t)", 0).unwrap();
        assert!((e.eval(1.0, &[], &[]) - SQRT_2.cos()).abs() < 1e-15);
        assert!(parse("sqrt(x1)", 1).is_err());
        assert!(parse("sqrt(-1)", 1).is_err());
    }

    #[test]
    fn coefficients_resolve() {
        let coefs = vec![("wobble".to_string(), QpFunction::cosine(0.5, 1.0, 0.0).unwrap())];
        let e = Expression::parse(
            "1 + wobble",
            &Scope {
                dim: 1,
                coefficients: &coefs,
            },
        )
        .unwrap();
        assert_eq!(e.eval_with(0.0, &[0.0], &coefs), 1.5);
        let q = e.to_qp(&coefs).unwrap();
        assert_eq!(q.mean(), 1.0);
    }

    #[test]
    fn quasi_periodic_conversion() {
        let e = parse("1 + 0.5*sin(t) - 2*cos(sqrt(2)*t + 1)", 0).unwrap();
        let q = e.to_qp(&[]).unwrap();
        for k in 0..40 {
            let t = k as f64 * 0.77 - 9.0;
            assert!((q.eval(t) - e.eval(t, &[], &[])).abs() < 1e-12);
        }
        let e = parse("sin(-2*t) * cos(t/3)", 0).unwrap();
        let q = e.to_qp(&[]).unwrap();
        for k in 0..40 {
            let t = k as f64 * 0.77 - 9.0;
            assert!((q.eval(t) - e.eval(t, &[], &[])).abs() < 1e-12);
        }
        assert!(parse("t", 0).unwrap().to_qp(&[]).is_err());
        assert!(parse("exp(cos(t))", 0).unwrap().to_qp(&[]).is_err());
        assert!(parse("x1", 1).unwrap().to_qp(&[]).is_err());
        assert_eq!(parse("exp(0)", 0).unwrap().to_qp(&[]).unwrap(), QpFunction::constant(1.0));
    }

    #[test]
    fn qp_display_round_trips_through_parser() {
        let q = QpFunction::new(
            -0.25,
            vec![Mode { amp: 1.5, freq: SQRT_2, phase: 2.0 }, Mode { amp: 0.1, freq: 3.0, phase: 0.0 }],
        )
        .unwrap();
        let back = parse(&q.to_string(), 0).unwrap().to_qp(&[]).unwrap();
        for k in 0..20 {
            let t = k as f64 * 1.3;
            assert!((back.eval(t) - q.eval(t)).abs() < 1e-12);
        }
    }
}
