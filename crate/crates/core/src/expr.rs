//! Polynomial vector-field expressions: parsing, symbolic differentiation and
//! evaluation over reals and intervals.
//!
//! Grammar (whitespace-insensitive, left-associative):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary ('*' unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' integer)?
//! atom    := number | identifier | '(' sum ')'
//! ```
//!
//! Only `+`, `-`, `*` and literal nonnegative integer powers are accepted.
//! Transcendental functions would slot in as extra `Expr` variants with a
//! derivative rule in [`Expr::differentiate`] and an interval extension in
//! [`Expr::eval_interval`].

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::interval::{Interval, IntervalMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown variable `{name}` at position {pos}")]
    UnknownVariable { pos: usize, name: String },
    #[error("invalid exponent `{text}` at position {pos}: exponents must be nonnegative integer literals")]
    BadExponent { pos: usize, text: String },
    #[error("no value supplied for variable #{index}")]
    MissingVariable { index: usize },
    #[error("component {component} of a pre-delay field references delayed variable `{name}`")]
    DelayedVariableInPreDelayField { component: usize, name: String },
}

/// Ordered set of variable names an expression may reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphabet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Alphabet { names, index }
    }

    /// `x1..xn, x1_tau..xn_tau, d1..dm, t` in that slot order.
    pub fn dde(n: usize, m: usize) -> Self {
        let mut names = Vec::with_capacity(2 * n + m + 1);
        names.extend((1..=n).map(|i| format!("x{i}")));
        names.extend((1..=n).map(|i| format!("x{i}_tau")));
        names.extend((1..=m).map(|i| format!("d{i}")));
        names.push("t".to_string());
        Alphabet::new(names)
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// A numeric literal together with an interval that encloses the real
/// number it denotes (decimal literals such as `0.1` are not exact binary
/// floats).
#[derive(Debug, Clone, Copy)]
pub struct Constant {
    pub value: f64,
    pub enclosure: Interval,
}

impl PartialEq for Constant {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

impl Constant {
    pub fn exact(value: f64) -> Self {
        Constant {
            value,
            enclosure: Interval::point(value),
        }
    }

    fn is(&self, v: f64) -> bool {
        self.value == v && self.enclosure.is_degenerate()
    }

    fn neg(self) -> Self {
        Constant {
            value: -self.value,
            enclosure: -self.enclosure,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(Constant),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

// Smart constructors: these perform the only simplification we do, which is
// folding of constant operands and the neutral/absorbing elements 0 and 1.
impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(Constant::exact(v))
    }

    fn as_const(&self) -> Option<Constant> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn is_const(&self, v: f64) -> bool {
        matches!(self, Expr::Const(c) if c.is(v))
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(c.neg()),
            a => Expr::Neg(Box::new(a)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        if a.is_const(0.0) {
            return b;
        }
        if b.is_const(0.0) {
            return a;
        }
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(Constant {
                value: x.value + y.value,
                enclosure: x.enclosure + y.enclosure,
            }),
            _ => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        if b.is_const(0.0) {
            return a;
        }
        if a.is_const(0.0) {
            return Expr::neg(b);
        }
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(Constant {
                value: x.value - y.value,
                enclosure: x.enclosure - y.enclosure,
            }),
            _ => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        if a.is_const(0.0) || b.is_const(0.0) {
            return Expr::constant(0.0);
        }
        if a.is_const(1.0) {
            return b;
        }
        if b.is_const(1.0) {
            return a;
        }
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(Constant {
                value: x.value * y.value,
                enclosure: x.enclosure * y.enclosure,
            }),
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Expr, k: u32) -> Expr {
        match k {
            0 => Expr::constant(1.0),
            1 => a,
            _ => match a.as_const() {
                Some(c) => Expr::Const(Constant {
                    value: c.value.powi(k as i32),
                    enclosure: c.enclosure.powi(k),
                }),
                None => Expr::Pow(Box::new(a), k),
            },
        }
    }
}

impl Expr {
    /// Exact symbolic partial derivative with respect to variable slot `v`.
    pub fn differentiate(&self, v: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::constant(0.0),
            Expr::Var(i) => Expr::constant(if *i == v { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::neg(a.differentiate(v)),
            Expr::Add(a, b) => Expr::add(a.differentiate(v), b.differentiate(v)),
            Expr::Sub(a, b) => Expr::sub(a.differentiate(v), b.differentiate(v)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.differentiate(v), (**b).clone()),
                Expr::mul((**a).clone(), b.differentiate(v)),
            ),
            Expr::Pow(a, k) => Expr::mul(
                Expr::mul(Expr::constant(*k as f64), Expr::pow((**a).clone(), k - 1)),
                a.differentiate(v),
            ),
        }
    }

    /// True if slot `v` occurs anywhere in the tree.
    pub fn references(&self, v: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(i) => *i == v,
            Expr::Neg(a) | Expr::Pow(a, _) => a.references(v),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.references(v) || b.references(v)
            }
        }
    }

    /// Largest referenced variable slot, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Pow(a, _) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.max_var().max(b.max_var()),
        }
    }

    fn check_env(&self, len: usize) -> Result<(), ExprError> {
        match self.max_var() {
            Some(i) if i >= len => Err(ExprError::MissingVariable { index: i }),
            _ => Ok(()),
        }
    }

    pub fn eval_real(&self, env: &[f64]) -> Result<f64, ExprError> {
        self.check_env(env.len())?;
        Ok(self.eval_real_unchecked(env))
    }

    pub(crate) fn eval_real_unchecked(&self, env: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => c.value,
            Expr::Var(i) => env[*i],
            Expr::Neg(a) => -a.eval_real_unchecked(env),
            Expr::Add(a, b) => a.eval_real_unchecked(env) + b.eval_real_unchecked(env),
            Expr::Sub(a, b) => a.eval_real_unchecked(env) - b.eval_real_unchecked(env),
            Expr::Mul(a, b) => a.eval_real_unchecked(env) * b.eval_real_unchecked(env),
            Expr::Pow(a, k) => a.eval_real_unchecked(env).powi(*k as i32),
        }
    }

    /// Natural interval extension; encloses the range of the expression over
    /// the box `env`.
    pub fn eval_interval(&self, env: &[Interval]) -> Result<Interval, ExprError> {
        self.check_env(env.len())?;
        Ok(self.eval_interval_unchecked(env))
    }

    pub(crate) fn eval_interval_unchecked(&self, env: &[Interval]) -> Interval {
        match self {
            Expr::Const(c) => c.enclosure,
            Expr::Var(i) => env[*i],
            Expr::Neg(a) => -a.eval_interval_unchecked(env),
            Expr::Add(a, b) => a.eval_interval_unchecked(env) + b.eval_interval_unchecked(env),
            Expr::Sub(a, b) => a.eval_interval_unchecked(env) - b.eval_interval_unchecked(env),
            Expr::Mul(a, b) => a.eval_interval_unchecked(env) * b.eval_interval_unchecked(env),
            Expr::Pow(a, k) => a.eval_interval_unchecked(env).powi(*k),
        }
    }

    pub fn display<'a>(&'a self, alphabet: &'a Alphabet) -> ExprDisplay<'a> {
        ExprDisplay {
            expr: self,
            alphabet,
        }
    }
}

/// Fully parenthesised printer; its output re-parses to an equal tree.
pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    alphabet: &'a Alphabet,
}

impl<'a> fmt::Display for ExprDisplay<'a> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |e: &'a Expr| ExprDisplay {
            expr: e,
            alphabet: self.alphabet,
        };
        match self.expr {
            Expr::Const(c) if c.value < 0.0 || (c.value == 0.0 && c.value.is_sign_negative()) => {
                write!(f, "(-{})", -c.value)
            }
            Expr::Const(c) => write!(f, "{}", c.value),
            Expr::Var(i) => write!(f, "{}", self.alphabet.name(*i)),
            Expr::Neg(a) => write!(f, "(-{})", sub(a)),
            Expr::Add(a, b) => write!(f, "({} + {})", sub(a), sub(b)),
            Expr::Sub(a, b) => write!(f, "({} - {})", sub(a), sub(b)),
            Expr::Mul(a, b) => write!(f, "({} * {})", sub(a), sub(b)),
            Expr::Pow(a, k) => write!(f, "({}^{})", sub(a), k),
        }
    }
}

// --- parser -----------------------------------------------------------------

/// Parse an expression over the given alphabet.
pub fn parse(text: &str, alphabet: &Alphabet) -> Result<Expr, ExprError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        alphabet,
    };
    let e = p.sum()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.err(format!("unexpected `{}`", p.src[p.pos] as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    alphabet: &'a Alphabet,
}

impl Parser<'_> {
    fn err(&self, msg: impl Into<String>) -> ExprError {
        ExprError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::add(lhs, self.product()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::sub(lhs, self.product()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            lhs = Expr::mul(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        let mut end = start;
        while end < self.src.len()
            && (self.src[end].is_ascii_alphanumeric() || matches!(self.src[end], b'.' | b'-' | b'+'))
        {
            // allow a sign only as the first character so `x^2-1` still splits
            if matches!(self.src[end], b'-' | b'+') && end != start {
                break;
            }
            end += 1;
        }
        let text = std::str::from_utf8(&self.src[start..end]).unwrap_or_default();
        let k = if !text.is_empty() && text.bytes().all(|b| b.is_ascii_digit()) {
            text.parse::<u32>().ok()
        } else {
            None
        };
        match k {
            Some(k) => {
                self.pos = end;
                Ok(Expr::pow(base, k))
            }
            None => Err(ExprError::BadExponent {
                pos: start,
                text: if text.is_empty() { "<missing>".into() } else { text.into() },
            }),
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.sum()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
                self.alphabet
                    .lookup(name)
                    .map(Expr::Var)
                    .ok_or_else(|| ExprError::UnknownVariable {
                        pos: start,
                        name: name.to_string(),
                    })
            }
            Some(c) => Err(self.err(format!("unexpected `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).unwrap_or_default();
        let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
            pos: start,
            msg: format!("malformed number `{text}`"),
        })?;
        self.pos = i;
        Ok(Expr::Const(Constant {
            value,
            enclosure: decimal_enclosure(text, value),
        }))
    }
}

/// Interval that provably contains the decimal literal `text`, whose nearest
/// double is `value`. Degenerate when the literal is exactly representable.
pub(crate) fn decimal_enclosure(text: &str, value: f64) -> Interval {
    if literal_is_exact(text, value) {
        Interval::point(value)
    } else {
        Interval::around(value)
    }
}

fn literal_is_exact(text: &str, value: f64) -> bool {
    // Write the literal as digits * 10^(exp), check value * 10^(-exp) == digits
    // exactly when the numbers are small enough for the check to be exact.
    let (mantissa, exp10) = match text.find(['e', 'E']) {
        Some(k) => match text[k + 1..].parse::<i32>() {
            Ok(e) => (&text[..k], e),
            Err(_) => return false,
        },
        None => (text, 0),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(k) => (&mantissa[..k], &mantissa[k + 1..]),
        None => (mantissa, ""),
    };
    let frac_part = frac_part.trim_end_matches('0');
    let digits = format!("{int_part}{frac_part}");
    let Ok(n) = digits.parse::<u64>() else {
        return false;
    };
    if n > (1u64 << 53) {
        return false;
    }
    let scale = exp10 - frac_part.len() as i32;
    if scale >= 0 {
        // integer literal times a power of ten: exact iff the product is exact
        if scale > 22 {
            return false;
        }
        let p = 10f64.powi(scale);
        let prod = (n as f64) * p;
        (n as f64).mul_add(p, -prod) == 0.0 && prod == value
    } else {
        let k = -scale;
        if k > 22 {
            return false;
        }
        let p = 10f64.powi(k);
        let prod = value * p;
        value.mul_add(p, -prod) == 0.0 && prod == n as f64
    }
}

// --- vector fields ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// `g(x, d, t)`, the dynamics on the first delay segment.
    PreDelay,
    /// `f(x, x_tau, d, t)`, the dynamics from the second segment on.
    Delayed,
}

/// Compiled vector field over the slot layout of [`Alphabet::dde`], with
/// symbolic Jacobians precomputed.
#[derive(Debug, Clone)]
pub struct VectorField {
    kind: FieldKind,
    n: usize,
    m: usize,
    components: Vec<Expr>,
    jac_x: Vec<Vec<Expr>>,
    jac_lag: Vec<Vec<Expr>>,
    jac_d: Vec<Vec<Expr>>,
}

impl VectorField {
    pub fn new(kind: FieldKind, n: usize, m: usize, components: Vec<Expr>) -> Result<Self, ExprError> {
        assert_eq!(components.len(), n, "one expression per state component");
        let alphabet = Alphabet::dde(n, m);
        let max = alphabet.len();
        for c in &components {
            c.check_env(max)?;
        }
        if kind == FieldKind::PreDelay {
            for (ci, c) in components.iter().enumerate() {
                if let Some(v) = (n..2 * n).find(|&v| c.references(v)) {
                    return Err(ExprError::DelayedVariableInPreDelayField {
                        component: ci + 1,
                        name: alphabet.name(v).to_string(),
                    });
                }
            }
        }
        let jac = |offset: usize, cols: usize| -> Vec<Vec<Expr>> {
            components
                .iter()
                .map(|c| (0..cols).map(|j| c.differentiate(offset + j)).collect())
                .collect()
        };
        let jac_x = jac(0, n);
        let jac_lag = jac(n, n);
        let jac_d = jac(2 * n, m);
        Ok(VectorField {
            kind,
            n,
            m,
            components,
            jac_x,
            jac_lag,
            jac_d,
        })
    }

    /// Parse component strings over the standard DDE alphabet.
    pub fn parse(kind: FieldKind, n: usize, m: usize, texts: &[&str]) -> Result<Self, ExprError> {
        let alphabet = Alphabet::dde(n, m);
        let comps = texts
            .iter()
            .map(|t| parse(t, &alphabet))
            .collect::<Result<Vec<_>, _>>()?;
        VectorField::new(kind, n, m, comps)
    }

    pub fn zero(kind: FieldKind, n: usize, m: usize) -> Self {
        VectorField::new(kind, n, m, vec![Expr::constant(0.0); n]).expect("zero field is valid")
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Length of the evaluation environment: `2n + m + 1`.
    pub fn env_len(&self) -> usize {
        2 * self.n + self.m + 1
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn jacobian_x_exprs(&self) -> &[Vec<Expr>] {
        &self.jac_x
    }

    pub fn jacobian_lag_exprs(&self) -> &[Vec<Expr>] {
        &self.jac_lag
    }

    pub fn uses_lag(&self) -> bool {
        self.components.iter().any(|c| (self.n..2 * self.n).any(|v| c.references(v)))
    }

    pub fn is_identically_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_const(0.0))
    }

    fn assert_env(&self, len: usize) {
        assert_eq!(len, self.env_len(), "environment must hold 2n+m+1 slots");
    }

    pub fn eval_real(&self, env: &[f64], out: &mut [f64]) {
        self.assert_env(env.len());
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval_real_unchecked(env);
        }
    }

    pub fn eval_interval(&self, env: &[Interval]) -> Vec<Interval> {
        self.assert_env(env.len());
        self.components.iter().map(|c| c.eval_interval_unchecked(env)).collect()
    }

    fn interval_matrix(exprs: &[Vec<Expr>], env: &[Interval]) -> IntervalMatrix {
        let rows = exprs.len();
        let cols = exprs.first().map_or(0, Vec::len);
        let mut m = IntervalMatrix::zeros(rows, cols);
        for (i, row) in exprs.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                m.set(i, j, e.eval_interval_unchecked(env));
            }
        }
        m
    }

    fn real_matrix(exprs: &[Vec<Expr>], env: &[f64]) -> DMatrix<f64> {
        let rows = exprs.len();
        let cols = exprs.first().map_or(0, Vec::len);
        DMatrix::from_fn(rows, cols, |i, j| exprs[i][j].eval_real_unchecked(env))
    }

    /// Enclosure of `df/dx` over the box `env`.
    pub fn jacobian_x_interval(&self, env: &[Interval]) -> IntervalMatrix {
        self.assert_env(env.len());
        Self::interval_matrix(&self.jac_x, env)
    }

    /// Enclosure of `df/dx_tau` over the box `env`.
    pub fn jacobian_lag_interval(&self, env: &[Interval]) -> IntervalMatrix {
        self.assert_env(env.len());
        Self::interval_matrix(&self.jac_lag, env)
    }

    pub fn jacobian_d_interval(&self, env: &[Interval]) -> IntervalMatrix {
        self.assert_env(env.len());
        Self::interval_matrix(&self.jac_d, env)
    }

    pub fn jacobian_x_real(&self, env: &[f64]) -> DMatrix<f64> {
        self.assert_env(env.len());
        Self::real_matrix(&self.jac_x, env)
    }

    pub fn jacobian_lag_real(&self, env: &[f64]) -> DMatrix<f64> {
        self.assert_env(env.len());
        Self::real_matrix(&self.jac_lag, env)
    }
}
