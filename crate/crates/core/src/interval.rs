//! Outward-rounded interval arithmetic, interval boxes and interval matrices.
//!
//! Bounds are rounded with emulated directed rounding: every elementary
//! operation is evaluated in round-to-nearest, the exact rounding error is
//! recovered with an error-free transformation (TwoSum or FMA), and the bound
//! is moved by one ulp only when the error points outward. Exact operations
//! therefore stay exact, which keeps degenerate boxes degenerate.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntervalError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid interval [{lo}, {hi}]")]
    Invalid { lo: f64, hi: f64 },
}

// --- directed rounding helpers -------------------------------------------

fn two_sum_err(a: f64, b: f64, s: f64) -> f64 {
    let bb = s - a;
    (a - (s - bb)) + (b - bb)
}

pub(crate) fn add_down(a: f64, b: f64) -> f64 {
    let s = a + b;
    if !s.is_finite() {
        return if s == f64::INFINITY && a.is_finite() && b.is_finite() {
            f64::MAX
        } else {
            s
        };
    }
    if two_sum_err(a, b, s) < 0.0 {
        s.next_down()
    } else {
        s
    }
}

pub(crate) fn add_up(a: f64, b: f64) -> f64 {
    -add_down(-a, -b)
}

pub(crate) fn mul_down(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let p = a * b;
    if !p.is_finite() {
        return if p == f64::INFINITY && a.is_finite() && b.is_finite() {
            f64::MAX
        } else {
            p
        };
    }
    if a.mul_add(b, -p) < 0.0 {
        p.next_down()
    } else {
        p
    }
}

pub(crate) fn mul_up(a: f64, b: f64) -> f64 {
    -mul_down(-a, b)
}

pub(crate) fn div_down(a: f64, b: f64) -> f64 {
    let q = a / b;
    if !q.is_finite() {
        return q;
    }
    // residual q*b - a carries the sign of b exactly when q overshoots.
    let r = q.mul_add(b, -a);
    if (r > 0.0 && b > 0.0) || (r < 0.0 && b < 0.0) {
        q.next_down()
    } else {
        q
    }
}

pub(crate) fn div_up(a: f64, b: f64) -> f64 {
    -div_down(-a, b)
}

// --- Interval --------------------------------------------------------------

/// A closed real interval `[lo, hi]` with `lo <= hi`.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = IntervalError;
    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        Interval::try_new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?}, {:?}]", self.lo, self.hi)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl Interval {
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };
    pub const ENTIRE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    /// Panics if `lo > hi` or either bound is NaN.
    pub fn new(lo: f64, hi: f64) -> Self {
        Self::try_new(lo, hi).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn try_new(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if lo <= hi {
            Ok(Interval { lo, hi })
        } else {
            Err(IntervalError::Invalid { lo, hi })
        }
    }

    pub fn point(x: f64) -> Self {
        Self::new(x, x)
    }

    /// Smallest interval with floating-point bounds that contains the real
    /// number denoted by `x` when `x` itself is only a nearest approximation.
    pub fn around(x: f64) -> Self {
        Self::new(x.next_down(), x.next_up())
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn mid(&self) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        let m = 0.5 * self.lo + 0.5 * self.hi;
        m.clamp(self.lo, self.hi)
    }

    /// Upper bound on `hi - lo`.
    pub fn width(&self) -> f64 {
        add_up(self.hi, -self.lo)
    }

    pub fn rad(&self) -> f64 {
        let m = self.mid();
        add_up(self.hi, -m).max(add_up(m, -self.lo))
    }

    /// Magnitude `max(|lo|, |hi|)`.
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// Mignitude: smallest absolute value in the interval.
    pub fn mig(&self) -> f64 {
        if self.contains(0.0) {
            0.0
        } else {
            self.lo.abs().min(self.hi.abs())
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn interior_contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    pub fn subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    /// `self` lies in the open interval `(other.lo, other.hi)`.
    pub fn strict_subset_of(&self, other: &Interval) -> bool {
        other.lo < self.lo && self.hi < other.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        self.lo.max(other.lo) <= self.hi.min(other.hi)
    }

    /// Widen both bounds by `r >= 0` (rounded outward).
    pub fn inflate(&self, r: f64) -> Interval {
        Interval {
            lo: add_down(self.lo, -r),
            hi: add_up(self.hi, r),
        }
    }

    /// Tight enclosure of `{x^2 : x in self}`.
    pub fn sqr(&self) -> Interval {
        let (a, b) = (self.lo, self.hi);
        if a >= 0.0 {
            Interval::new(mul_down(a, a), mul_up(b, b))
        } else if b <= 0.0 {
            Interval::new(mul_down(b, b), mul_up(a, a))
        } else {
            let m = a.abs().max(b);
            Interval::new(0.0, mul_up(m, m))
        }
    }

    /// Integer power by repeated squaring; even powers use `sqr` so the
    /// result never dips below zero.
    pub fn powi(&self, k: u32) -> Interval {
        match k {
            0 => Interval::point(1.0),
            1 => *self,
            2 => self.sqr(),
            _ => {
                if k % 2 == 0 {
                    self.powi(k / 2).sqr()
                } else {
                    // odd powers are monotone
                    let lo = pow_bound(self.lo, k, false);
                    let hi = pow_bound(self.hi, k, true);
                    Interval::new(lo, hi)
                }
            }
        }
    }

    pub fn scale(&self, c: f64) -> Interval {
        *self * Interval::point(c)
    }

    /// Division by an interval not containing zero.
    pub fn checked_div(&self, rhs: &Interval) -> Option<Interval> {
        if rhs.contains(0.0) {
            return None;
        }
        let cands = [
            (self.lo, rhs.lo),
            (self.lo, rhs.hi),
            (self.hi, rhs.lo),
            (self.hi, rhs.hi),
        ];
        let lo = cands
            .iter()
            .map(|&(a, b)| div_down(a, b))
            .fold(f64::INFINITY, f64::min);
        let hi = cands
            .iter()
            .map(|&(a, b)| div_up(a, b))
            .fold(f64::NEG_INFINITY, f64::max);
        Some(Interval::new(lo, hi))
    }
}

fn pow_bound(x: f64, k: u32, up: bool) -> f64 {
    // odd k: sign of x^k equals sign of x; round |x|^k toward the right side.
    let neg = x < 0.0;
    let a = x.abs();
    let mut acc = 1.0;
    // rounding |x|^k up when the result should go up and x >= 0, or down when x < 0
    let round_mag_up = up != neg;
    for _ in 0..k {
        acc = if round_mag_up {
            mul_up(acc, a)
        } else {
            mul_down(acc, a)
        };
    }
    if neg {
        -acc
    } else {
        acc
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval {
            lo: add_down(self.lo, rhs.lo),
            hi: add_up(self.hi, rhs.hi),
        }
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval {
            lo: add_down(self.lo, -rhs.hi),
            hi: add_up(self.hi, -rhs.lo),
        }
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let (a, b, c, d) = (self.lo, self.hi, rhs.lo, rhs.hi);
        let lo = mul_down(a, c)
            .min(mul_down(a, d))
            .min(mul_down(b, c))
            .min(mul_down(b, d));
        let hi = mul_up(a, c)
            .max(mul_up(a, d))
            .max(mul_up(b, c))
            .max(mul_up(b, d));
        Interval { lo, hi }
    }
}

// --- IntervalBox -----------------------------------------------------------

/// An axis-aligned box: one interval per state dimension. Always nonempty;
/// operations that can produce the empty set return `Option<IntervalBox>`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntervalBox {
    dims: Vec<Interval>,
}

impl fmt::Debug for IntervalBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.dims.iter()).finish()
    }
}

impl fmt::Display for IntervalBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl FromIterator<Interval> for IntervalBox {
    fn from_iter<T: IntoIterator<Item = Interval>>(iter: T) -> Self {
        IntervalBox::new(iter.into_iter().collect())
    }
}

impl std::ops::Index<usize> for IntervalBox {
    type Output = Interval;
    fn index(&self, i: usize) -> &Interval {
        &self.dims[i]
    }
}

impl IntervalBox {
    pub fn new(dims: Vec<Interval>) -> Self {
        IntervalBox { dims }
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Self {
        bounds.iter().map(|&(l, h)| Interval::new(l, h)).collect()
    }

    pub fn point(x: &[f64]) -> Self {
        x.iter().map(|&v| Interval::point(v)).collect()
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[Interval] {
        &self.dims
    }

    pub fn dims_mut(&mut self) -> &mut [Interval] {
        &mut self.dims
    }

    pub fn into_dims(self) -> Vec<Interval> {
        self.dims
    }

    pub fn lo(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::lo).collect()
    }

    pub fn hi(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::hi).collect()
    }

    pub fn mid(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::mid).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::width).collect()
    }

    pub fn max_width(&self) -> f64 {
        self.dims.iter().map(Interval::width).fold(0.0, f64::max)
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().map(|d| d.hi - d.lo).product()
    }

    fn check_dim(&self, other: &IntervalBox) -> Result<(), IntervalError> {
        if self.dim() == other.dim() {
            Ok(())
        } else {
            Err(IntervalError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            })
        }
    }

    /// Smallest box containing both operands.
    pub fn hull(&self, other: &IntervalBox) -> Result<IntervalBox, IntervalError> {
        self.check_dim(other)?;
        Ok(self
            .dims
            .iter()
            .zip(&other.dims)
            .map(|(a, b)| a.hull(b))
            .collect())
    }

    /// Hull with a possibly empty set; `hull_opt(None, b) == b`.
    pub fn hull_opt(
        acc: Option<IntervalBox>,
        b: &IntervalBox,
    ) -> Result<IntervalBox, IntervalError> {
        match acc {
            None => Ok(b.clone()),
            Some(a) => a.hull(b),
        }
    }

    pub fn intersect(&self, other: &IntervalBox) -> Result<Option<IntervalBox>, IntervalError> {
        self.check_dim(other)?;
        let mut dims = Vec::with_capacity(self.dim());
        for (a, b) in self.dims.iter().zip(&other.dims) {
            match a.intersect(b) {
                Some(i) => dims.push(i),
                None => return Ok(None),
            }
        }
        Ok(Some(IntervalBox { dims }))
    }

    pub fn intersects(&self, other: &IntervalBox) -> bool {
        self.dim() == other.dim() && self.dims.iter().zip(&other.dims).all(|(a, b)| a.intersects(b))
    }

    /// True iff the closed box `self` meets the open interior of `other`.
    pub fn meets_interior_of(&self, other: &IntervalBox) -> bool {
        self.dims
            .iter()
            .zip(&other.dims)
            .all(|(a, b)| a.lo < b.hi && b.lo < a.hi)
    }

    pub fn subset_of(&self, other: &IntervalBox) -> bool {
        self.dim() == other.dim() && self.dims.iter().zip(&other.dims).all(|(a, b)| a.subset_of(b))
    }

    /// `self` lies in the open interior of `other`.
    pub fn strict_subset_of(&self, other: &IntervalBox) -> bool {
        self.dim() == other.dim()
            && self
                .dims
                .iter()
                .zip(&other.dims)
                .all(|(a, b)| a.strict_subset_of(b))
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.dims.iter().zip(x).all(|(d, &v)| d.contains(v))
    }

    /// Membership with an absolute slack on every bound.
    pub fn contains_point_with_slack(&self, x: &[f64], slack: f64) -> bool {
        x.len() == self.dim()
            && self
                .dims
                .iter()
                .zip(x)
                .all(|(d, &v)| d.lo - slack <= v && v <= d.hi + slack)
    }

    pub fn interior_contains_point(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.dims.iter().zip(x).all(|(d, &v)| d.interior_contains(v))
    }

    pub fn inflate(&self, r: f64) -> IntervalBox {
        self.dims.iter().map(|d| d.inflate(r)).collect()
    }

    /// Shrink every side by `r`; `None` when some side would invert.
    pub fn deflate(&self, r: f64) -> Option<IntervalBox> {
        let mut dims = Vec::with_capacity(self.dim());
        for d in &self.dims {
            let lo = add_up(d.lo, r);
            let hi = add_down(d.hi, -r);
            if lo > hi {
                return None;
            }
            dims.push(Interval::new(lo, hi));
        }
        Some(IntervalBox { dims })
    }

    pub fn is_degenerate_in(&self, i: usize) -> bool {
        self.dims[i].is_degenerate()
    }

    pub fn with_dim(&self, i: usize, v: Interval) -> IntervalBox {
        let mut b = self.clone();
        b.dims[i] = v;
        b
    }

    /// All `2^n` vertices (degenerate dimensions contribute one coordinate).
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(self.dim())];
        for d in &self.dims {
            let choices: &[f64] = if d.is_degenerate() { &[d.lo] } else { &[d.lo, d.hi] };
            out = out
                .into_iter()
                .flat_map(|p| {
                    choices.iter().map(move |&c| {
                        let mut q = p.clone();
                        q.push(c);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

// --- IntervalMatrix ----------------------------------------------------------

/// Dense row-major matrix of intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Interval>,
}

impl IntervalMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntervalMatrix {
            rows,
            cols,
            data: vec![Interval::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Interval::point(1.0));
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Interval>>) -> Result<Self, IntervalError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(IntervalError::DimensionMismatch {
                    left: c,
                    right: row.len(),
                });
            }
            data.extend(row);
        }
        Ok(IntervalMatrix { rows: r, cols: c, data })
    }

    pub fn from_points(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.set(i, j, Interval::point(m[(i, j)]));
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Interval {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Interval) {
        self.data[i * self.cols + j] = v;
    }

    /// Sound upper bound of `||A||_inf` over every point matrix in the set:
    /// the largest row sum of entry magnitudes.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| {
                (0..self.cols).fold(0.0, |acc, j| add_up(acc, self.get(i, j).mag()))
            })
            .fold(0.0, f64::max)
    }

    pub fn mul_vec(&self, v: &[Interval]) -> Result<Vec<Interval>, IntervalError> {
        if v.len() != self.cols {
            return Err(IntervalError::DimensionMismatch {
                left: self.cols,
                right: v.len(),
            });
        }
        Ok((0..self.rows)
            .map(|i| {
                (0..self.cols).fold(Interval::ZERO, |acc, j| acc + self.get(i, j) * v[j])
            })
            .collect())
    }

    pub fn mul_mat(&self, rhs: &IntervalMatrix) -> Result<IntervalMatrix, IntervalError> {
        if self.cols != rhs.rows {
            return Err(IntervalError::DimensionMismatch {
                left: self.cols,
                right: rhs.rows,
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let s = (0..self.cols)
                    .fold(Interval::ZERO, |acc, k| acc + self.get(i, k) * rhs.get(k, j));
                out.set(i, j, s);
            }
        }
        Ok(out)
    }

    pub fn contains_point_matrix(&self, m: &DMatrix<f64>) -> bool {
        m.nrows() == self.rows
            && m.ncols() == self.cols
            && (0..self.rows).all(|i| (0..self.cols).all(|j| self.get(i, j).contains(m[(i, j)])))
    }

    pub fn mid(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).mid())
    }
}

/// `||A||_inf` of a point matrix.
pub fn point_inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Row dominance margins `|A_ii| - sum_{j != i} |A_ij|`.
pub fn dominance_margins(a: &DMatrix<f64>) -> Vec<f64> {
    assert_eq!(a.nrows(), a.ncols(), "dominance margins need a square matrix");
    (0..a.nrows())
        .map(|i| {
            let off: f64 = (0..a.ncols()).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
            a[(i, i)].abs() - off
        })
        .collect()
}

pub fn is_strictly_diagonally_dominant(a: &DMatrix<f64>) -> bool {
    dominance_margins(a).iter().all(|&d| d > 0.0)
}
