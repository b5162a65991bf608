//! Truncated Laurent series in one local variable `s`.
//!
//! A series stores the coefficients of exponents `min_exp .. min_exp + len`;
//! exponents from there up to `trunc` are known to be zero and everything at
//! or above `trunc` is unknown. Arithmetic propagates `trunc` pessimistically.
//! Coefficients are either plain complex numbers or [`EpsPoly`] values, i.e.
//! polynomials in the anti-holomorphic marker ε.

use std::fmt::Debug;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truncation marker for series with no unknown tail.
pub const EXACT: i32 = i32::MAX / 4;

fn is_exact(t: i32) -> bool {
    t >= EXACT / 2
}

fn norm_trunc(t: i64) -> i32 {
    if t >= (EXACT / 2) as i64 {
        EXACT
    } else {
        t as i32
    }
}

/// Coefficient ring of a [`Laurent`] series.
pub trait Coeff: Clone + Debug + PartialEq + Send + Sync {
    fn zero() -> Self;
    fn from_complex(c: Complex64) -> Self;
    fn is_zero(&self) -> bool;
    fn add_assign_ref(&mut self, rhs: &Self);
    fn sub_assign_ref(&mut self, rhs: &Self);
    /// `self += a * b`
    fn mul_add(&mut self, a: &Self, b: &Self);
    fn mul_ref(&self, rhs: &Self) -> Self;
    fn scale(&self, k: Complex64) -> Self;
    fn try_inverse(&self) -> Option<Self>;
    fn magnitude(&self) -> f64;
}

impl Coeff for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_complex(c: Complex64) -> Self {
        c
    }
    fn is_zero(&self) -> bool {
        self.re == 0.0 && self.im == 0.0
    }
    fn add_assign_ref(&mut self, rhs: &Self) {
        *self += rhs;
    }
    fn sub_assign_ref(&mut self, rhs: &Self) {
        *self -= rhs;
    }
    fn mul_add(&mut self, a: &Self, b: &Self) {
        *self += a * b;
    }
    fn mul_ref(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn scale(&self, k: Complex64) -> Self {
        self * k
    }
    fn try_inverse(&self) -> Option<Self> {
        if self.is_zero() {
            None
        } else {
            Some(self.inv())
        }
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// Polynomial in the formal variable ε, where ε stands for π/Im τ.
///
/// Evaluating at ε = π/Im τ gives the almost-holomorphic (Schiffer) value,
/// at ε = 0 the holomorphic-limit (Bergman) value. Trailing exact zeros are
/// trimmed so `degree` is meaningful.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EpsPoly {
    coeffs: Vec<Complex64>,
}

impl EpsPoly {
    pub fn new(coeffs: Vec<Complex64>) -> Self {
        let mut p = EpsPoly { coeffs };
        p.trim();
        p
    }

    pub fn constant(c: Complex64) -> Self {
        Self::new(vec![c])
    }

    /// η̂₁ = η₁ − ε.
    pub fn eta_hat(eta1: Complex64) -> Self {
        Self::new(vec![eta1, Complex64::new(-1.0, 0.0)])
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn eval(&self, eps: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, c| acc * eps + c)
    }

    pub fn coeff(&self, power: usize) -> Complex64 {
        self.coeffs.get(power).copied().unwrap_or_default()
    }

    /// Drops trailing coefficients at most `rel` times the largest one.
    pub fn chopped(&self, rel: f64) -> Self {
        let tol = rel * self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mut out = self.clone();
        while matches!(out.coeffs.last(), Some(c) if c.norm() <= tol) {
            out.coeffs.pop();
        }
        out
    }

    fn trim(&mut self) {
        while matches!(self.coeffs.last(), Some(c) if c.re == 0.0 && c.im == 0.0) {
            self.coeffs.pop();
        }
    }
}

impl Coeff for EpsPoly {
    fn zero() -> Self {
        EpsPoly { coeffs: Vec::new() }
    }
    fn from_complex(c: Complex64) -> Self {
        EpsPoly::constant(c)
    }
    fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }
    fn add_assign_ref(&mut self, rhs: &Self) {
        if self.coeffs.len() < rhs.coeffs.len() {
            self.coeffs.resize(rhs.coeffs.len(), Complex64::new(0.0, 0.0));
        }
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += b;
        }
        self.trim();
    }
    fn sub_assign_ref(&mut self, rhs: &Self) {
        if self.coeffs.len() < rhs.coeffs.len() {
            self.coeffs.resize(rhs.coeffs.len(), Complex64::new(0.0, 0.0));
        }
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a -= b;
        }
        self.trim();
    }
    fn mul_add(&mut self, a: &Self, b: &Self) {
        if a.coeffs.is_empty() || b.coeffs.is_empty() {
            return;
        }
        let need = a.coeffs.len() + b.coeffs.len() - 1;
        if self.coeffs.len() < need {
            self.coeffs.resize(need, Complex64::new(0.0, 0.0));
        }
        for (i, x) in a.coeffs.iter().enumerate() {
            for (j, y) in b.coeffs.iter().enumerate() {
                self.coeffs[i + j] += x * y;
            }
        }
        self.trim();
    }
    fn mul_ref(&self, rhs: &Self) -> Self {
        let mut out = Self::zero();
        out.mul_add(self, rhs);
        out
    }
    fn scale(&self, k: Complex64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * k).collect())
    }
    fn try_inverse(&self) -> Option<Self> {
        // Only constants are units of the polynomial ring.
        match self.coeffs.as_slice() {
            [c] if !c.is_zero() => Some(Self::constant(c.inv())),
            _ => None,
        }
    }
    fn magnitude(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// What [`Laurent::integrate`] does with a nonzero s⁻¹ coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogTerm {
    Reject,
    Drop,
}

/// Truncated Laurent series.
#[derive(Clone, Debug, PartialEq)]
pub struct Laurent<C> {
    min_exp: i32,
    coeffs: Vec<C>,
    trunc: i32,
}

pub type CSeries = Laurent<Complex64>;
pub type EpsSeries = Laurent<EpsPoly>;

impl<C: Coeff> Laurent<C> {
    /// Builds a series; coefficients at or beyond `trunc` are discarded.
    pub fn new(min_exp: i32, mut coeffs: Vec<C>, trunc: i32) -> Self {
        let trunc = norm_trunc(trunc as i64);
        let max_len = (trunc as i64 - min_exp as i64).max(0) as usize;
        coeffs.truncate(max_len);
        Laurent {
            min_exp,
            coeffs,
            trunc,
        }
    }

    pub fn exact(min_exp: i32, coeffs: Vec<C>) -> Self {
        Self::new(min_exp, coeffs, EXACT)
    }

    pub fn zero(trunc: i32) -> Self {
        Self::new(0, Vec::new(), trunc)
    }

    pub fn constant(c: C) -> Self {
        Self::exact(0, vec![c])
    }

    pub fn one() -> Self {
        Self::constant(C::from_complex(Complex64::new(1.0, 0.0)))
    }

    /// `c · s^exp`, exact.
    pub fn monomial(c: C, exp: i32) -> Self {
        Self::exact(exp, vec![c])
    }

    /// The local variable `s` itself.
    pub fn variable() -> Self {
        Self::monomial(C::from_complex(Complex64::new(1.0, 0.0)), 1)
    }

    pub fn min_exp(&self) -> i32 {
        self.min_exp
    }

    pub fn trunc(&self) -> i32 {
        self.trunc
    }

    pub fn is_exact(&self) -> bool {
        is_exact(self.trunc)
    }

    pub fn coeffs(&self) -> &[C] {
        &self.coeffs
    }

    /// One past the last stored exponent.
    pub fn end(&self) -> i32 {
        self.min_exp + self.coeffs.len() as i32
    }

    /// Coefficient of `s^e`; `None` when `e` is at or beyond the truncation.
    pub fn coeff(&self, e: i32) -> Option<C> {
        if e >= self.trunc {
            return None;
        }
        if e < self.min_exp || e >= self.end() {
            return Some(C::zero());
        }
        Some(self.coeffs[(e - self.min_exp) as usize].clone())
    }

    /// Lowest exponent with a non-zero stored coefficient.
    pub fn valuation(&self) -> Option<i32> {
        self.coeffs
            .iter()
            .position(|c| !c.is_zero())
            .map(|i| self.min_exp + i as i32)
    }

    fn rel_len(&self) -> i64 {
        if self.is_exact() {
            i64::MAX
        } else {
            self.trunc as i64 - self.min_exp as i64
        }
    }

    /// Lowers the truncation to `trunc` (never raises it).
    pub fn truncated(&self, trunc: i32) -> Self {
        if trunc >= self.trunc {
            return self.clone();
        }
        Self::new(self.min_exp, self.coeffs.clone(), trunc)
    }

    /// Multiplies by `s^k`.
    pub fn shift(&self, k: i32) -> Self {
        Laurent {
            min_exp: self.min_exp + k,
            coeffs: self.coeffs.clone(),
            trunc: if self.is_exact() {
                EXACT
            } else {
                self.trunc + k
            },
        }
    }

    pub fn map<D: Coeff>(&self, f: impl Fn(&C) -> D) -> Laurent<D> {
        Laurent {
            min_exp: self.min_exp,
            coeffs: self.coeffs.iter().map(f).collect(),
            trunc: self.trunc,
        }
    }

    pub fn scale(&self, k: Complex64) -> Self {
        self.map(|c| c.scale(k))
    }

    pub fn neg(&self) -> Self {
        self.scale(Complex64::new(-1.0, 0.0))
    }

    /// Multiplies every coefficient by a ring element.
    pub fn scale_by(&self, k: &C) -> Self {
        self.map(|c| c.mul_ref(k))
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.combine(rhs, false)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.combine(rhs, true)
    }

    fn combine(&self, rhs: &Self, subtract: bool) -> Self {
        let trunc = self.trunc.min(rhs.trunc);
        let lo = if self.coeffs.is_empty() {
            rhs.min_exp
        } else if rhs.coeffs.is_empty() {
            self.min_exp
        } else {
            self.min_exp.min(rhs.min_exp)
        };
        let lo = lo.min(trunc);
        let hi = self.end().max(rhs.end()).min(trunc).max(lo);
        let mut out = vec![C::zero(); (hi - lo) as usize];
        for (i, c) in self.coeffs.iter().enumerate() {
            let e = self.min_exp + i as i32;
            if e < hi {
                out[(e - lo) as usize].add_assign_ref(c);
            }
        }
        for (i, c) in rhs.coeffs.iter().enumerate() {
            let e = rhs.min_exp + i as i32;
            if e < hi {
                if subtract {
                    out[(e - lo) as usize].sub_assign_ref(c);
                } else {
                    out[(e - lo) as usize].add_assign_ref(c);
                }
            }
        }
        Self::new(lo, out, trunc)
    }

    /// In-place `self += rhs`.
    pub fn add_assign(&mut self, rhs: &Self) {
        *self = self.add(rhs);
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        let min_exp = self.min_exp + rhs.min_exp;
        let trunc = norm_trunc(
            (self.trunc as i64 + rhs.min_exp as i64).min(rhs.trunc as i64 + self.min_exp as i64),
        );
        if self.coeffs.is_empty() || rhs.coeffs.is_empty() {
            return Self::new(min_exp.min(trunc), Vec::new(), trunc);
        }
        let end = (self.end() as i64 + rhs.end() as i64 - 1 - min_exp as i64)
            .min(trunc as i64 - min_exp as i64)
            .max(0) as usize;
        let mut out = vec![C::zero(); end];
        for (i, a) in self.coeffs.iter().enumerate() {
            if i >= end {
                break;
            }
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate() {
                let k = i + j;
                if k >= end {
                    break;
                }
                out[k].mul_add(a, b);
            }
        }
        Self::new(min_exp, out, trunc)
    }

    /// Inverse of the unit part `b0 + b1 s + ...` to `len` coefficients.
    fn unit_inverse(coeffs: &[C], len: usize) -> Result<Vec<C>> {
        let b0 = coeffs.first().ok_or(Error::SingularDivision)?;
        let inv0 = b0.try_inverse().ok_or(Error::SingularDivision)?;
        let mut d: Vec<C> = Vec::with_capacity(len);
        for k in 0..len {
            if k == 0 {
                d.push(inv0.clone());
                continue;
            }
            let mut acc = C::zero();
            for j in 1..=k.min(coeffs.len() - 1) {
                acc.mul_add(&coeffs[j], &d[k - j]);
            }
            d.push(acc.mul_ref(&inv0).scale(Complex64::new(-1.0, 0.0)));
        }
        Ok(d)
    }

    /// `self / rhs`; the leading stored coefficient of `rhs` must be a unit.
    pub fn div(&self, rhs: &Self) -> Result<Self> {
        let len = self.rel_len().min(rhs.rel_len());
        if len == i64::MAX {
            return Err(Error::Truncation(
                "division of two exact series needs an explicit truncation".into(),
            ));
        }
        let len = len.max(0) as usize;
        let inv = Self::unit_inverse(&rhs.coeffs, len)?;
        let min_exp = self.min_exp - rhs.min_exp;
        let a = Laurent::new(0, self.coeffs.clone(), len as i32);
        let b = Laurent::new(0, inv, len as i32);
        let prod = a.mul(&b);
        Ok(Self::new(min_exp, prod.coeffs, min_exp + len as i32))
    }

    /// `1 / self` with the given relative length when `self` is exact.
    pub fn inverse(&self) -> Result<Self> {
        let len = self.rel_len();
        if len == i64::MAX {
            return Err(Error::Truncation(
                "inverse of an exact series needs an explicit truncation".into(),
            ));
        }
        let inv = Self::unit_inverse(&self.coeffs, len.max(0) as usize)?;
        Ok(Self::new(-self.min_exp, inv, -self.min_exp + len as i32))
    }

    /// `outer ∘ inner`, where `inner` vanishes at `s = 0`.
    pub fn compose(&self, inner: &Self) -> Result<Self> {
        let outer = self;
        if inner.min_exp < 1 {
            return Err(Error::CompositionDomain(format!(
                "inner series must vanish at 0 (min_exp {} < 1)",
                inner.min_exp
            )));
        }
        let lead = inner
            .coeffs
            .first()
            .ok_or_else(|| Error::CompositionDomain("inner series is zero".into()))?;
        let v = inner.min_exp as i64;
        let inner_rel = inner.rel_len();
        if outer.min_exp < 0 && (inner.min_exp != 1 || lead.try_inverse().is_none()) {
            return Err(Error::CompositionDomain(
                "negative powers need an inner series with invertible linear term".into(),
            ));
        }
        let t1 = if outer.is_exact() {
            i64::MAX
        } else {
            outer.trunc as i64 * v
        };
        let k_lo = if outer.min_exp >= 0 {
            (outer.min_exp as i64).max(1)
        } else {
            outer.min_exp as i64
        };
        let t2 = if inner_rel == i64::MAX {
            i64::MAX
        } else {
            k_lo * v + inner_rel
        };
        let trunc = t1.min(t2);
        if trunc == i64::MAX {
            return Err(Error::Truncation(
                "composition of exact series needs an explicit truncation".into(),
            ));
        }
        let trunc = trunc as i32;
        let mut acc = Self::zero(trunc);
        let inner_t = inner.truncated(trunc);
        // Non-negative powers.
        let mut pow = Self::one();
        for k in 0..outer.end().max(0) {
            if k as i64 * v >= trunc as i64 {
                break;
            }
            if k >= outer.min_exp {
                let c = &outer.coeffs[(k - outer.min_exp) as usize];
                if !c.is_zero() {
                    acc = acc.add(&pow.scale_by(c).truncated(trunc));
                }
            }
            pow = pow.mul(&inner_t).truncated(trunc);
        }
        // Negative powers.
        if outer.min_exp < 0 {
            let inner_n = inner.truncated(trunc - outer.min_exp + 1);
            let recip = Self::one().div(&inner_n)?;
            let mut pow = recip.clone();
            for k in 1..=(-outer.min_exp) {
                let e = -k;
                if e < outer.end() {
                    let c = &outer.coeffs[(e - outer.min_exp) as usize];
                    if !c.is_zero() {
                        acc = acc.add(&pow.scale_by(c).truncated(trunc));
                    }
                }
                pow = pow.mul(&recip);
            }
        }
        Ok(acc.truncated(trunc))
    }

    /// Compositional inverse `g` with `self ∘ g = s`.
    pub fn invert_composition(&self) -> Result<Self> {
        if self.min_exp != 1 {
            return Err(Error::CompositionDomain(format!(
                "reversion needs min_exp = 1, got {}",
                self.min_exp
            )));
        }
        if self.is_exact() {
            return Err(Error::Truncation(
                "reversion of an exact series needs an explicit truncation".into(),
            ));
        }
        let c1 = self
            .coeffs
            .first()
            .and_then(|c| c.try_inverse())
            .ok_or_else(|| Error::CompositionDomain("non-unit linear coefficient".into()))?;
        let trunc = self.trunc;
        let mut g = vec![C::zero(); (trunc - 1).max(0) as usize];
        if g.is_empty() {
            return Ok(Self::new(1, g, trunc));
        }
        g[0] = c1.clone();
        for k in 2..trunc {
            let partial = Self::new(1, g.clone(), k + 1);
            let h = self.truncated(k + 1).compose(&partial)?;
            let hk = h.coeff(k).unwrap_or_else(C::zero);
            g[(k - 1) as usize] = hk.mul_ref(&c1).scale(Complex64::new(-1.0, 0.0));
        }
        Ok(Self::new(1, g, trunc))
    }

    /// Coefficient of `s^-1`.
    pub fn residue(&self) -> Result<C> {
        self.coeff(-1).ok_or_else(|| {
            Error::Truncation(format!(
                "residue needs trunc > -1, series known only below s^{}",
                self.trunc
            ))
        })
    }

    pub fn derivative(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c.scale(Complex64::new((self.min_exp + i as i32) as f64, 0.0)))
            .collect();
        Laurent {
            min_exp: self.min_exp - 1,
            coeffs,
            trunc: if self.is_exact() {
                EXACT
            } else {
                self.trunc - 1
            },
        }
    }

    /// Term-wise antiderivative with integration constant 0.
    pub fn integrate(&self, log: LogTerm) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for (i, c) in self.coeffs.iter().enumerate() {
            let e = self.min_exp + i as i32;
            if e == -1 {
                if log == LogTerm::Reject && !c.is_zero() {
                    let r = c.magnitude();
                    return Err(Error::LogTerm {
                        residue: Complex64::new(r, 0.0),
                    });
                }
                coeffs.push(C::zero());
            } else {
                coeffs.push(c.scale(Complex64::new(1.0 / (e + 1) as f64, 0.0)));
            }
        }
        Ok(Laurent {
            min_exp: self.min_exp + 1,
            coeffs,
            trunc: if self.is_exact() {
                EXACT
            } else {
                self.trunc + 1
            },
        })
    }

    /// Largest coefficient magnitude.
    pub fn max_magnitude(&self) -> f64 {
        self.coeffs.iter().map(|c| c.magnitude()).fold(0.0, f64::max)
    }
}

impl Laurent<Complex64> {
    pub fn lift<D: Coeff>(&self) -> Laurent<D> {
        self.map(|c| D::from_complex(*c))
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * s.powi(self.min_exp + i as i32))
            .sum()
    }

    /// Drops the first `n` stored coefficients after checking they are
    /// negligible (`|c| <= tol`).
    pub fn strip_leading(&self, n: usize, tol: f64) -> Result<Self> {
        if let Some((i, c)) = self
            .coeffs
            .iter()
            .take(n)
            .enumerate()
            .find(|(_, c)| c.norm() > tol)
        {
            return Err(Error::Numeric(format!(
                "coefficient of s^{} is {:e}, expected to vanish",
                self.min_exp + i as i32,
                c.norm()
            )));
        }
        let n = n.min(self.coeffs.len());
        Ok(Laurent {
            min_exp: self.min_exp + n as i32,
            coeffs: self.coeffs[n..].to_vec(),
            trunc: self.trunc,
        })
    }

    /// Dense coefficients of exponents `0 .. trunc` of a power series.
    fn dense(&self) -> Result<Vec<Complex64>> {
        if self.min_exp < 0 && self.coeffs.iter().take((-self.min_exp) as usize).any(|c| !c.is_zero()) {
            return Err(Error::CompositionDomain("expected a power series".into()));
        }
        if self.is_exact() {
            return Err(Error::Truncation("expected a truncated series".into()));
        }
        Ok((0..self.trunc).map(|e| self.coeff(e).unwrap()).collect())
    }

    fn check_vanishing(w: &[Complex64]) -> Result<()> {
        match w.first() {
            Some(c) if !c.is_zero() => Err(Error::CompositionDomain(
                "series argument must vanish at 0".into(),
            )),
            _ => Ok(()),
        }
    }

    /// `(1 + self)^alpha` for a series vanishing at 0.
    pub fn pow1p(&self, alpha: f64) -> Result<Self> {
        let w = self.dense()?;
        Self::check_vanishing(&w)?;
        let n = w.len();
        let mut p = vec![Complex64::new(0.0, 0.0); n];
        if n > 0 {
            p[0] = Complex64::new(1.0, 0.0);
        }
        for m in 1..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 1..=m {
                acc += w[k] * p[m - k] * ((alpha + 1.0) * k as f64 - m as f64);
            }
            p[m] = acc / m as f64;
        }
        Ok(Self::new(0, p, self.trunc))
    }

    /// `exp(self)` for a series vanishing at 0.
    pub fn exp_series(&self) -> Result<Self> {
        let w = self.dense()?;
        Self::check_vanishing(&w)?;
        let n = w.len();
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        if n > 0 {
            e[0] = Complex64::new(1.0, 0.0);
        }
        for m in 1..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 1..=m {
                acc += w[k] * e[m - k] * k as f64;
            }
            e[m] = acc / m as f64;
        }
        Ok(Self::new(0, e, self.trunc))
    }

    /// `log(1 + self)` for a series vanishing at 0.
    pub fn ln1p(&self) -> Result<Self> {
        let w = self.dense()?;
        Self::check_vanishing(&w)?;
        let ws = Self::new(0, w, self.trunc);
        let denom = Self::one().add(&ws);
        ws.derivative().div(&denom)?.integrate(LogTerm::Reject)
    }

    /// `artanh(self)` for a series vanishing at 0.
    pub fn atanh(&self) -> Result<Self> {
        let w = self.dense()?;
        Self::check_vanishing(&w)?;
        let ws = Self::new(0, w, self.trunc);
        let denom = Self::one().sub(&ws.mul(&ws));
        ws.derivative().div(&denom)?.integrate(LogTerm::Reject)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn cs(min: i32, v: &[f64], trunc: i32) -> CSeries {
        Laurent::new(min, v.iter().map(|&x| c(x)).collect(), trunc)
    }

    fn assert_coeffs(s: &CSeries, min: i32, v: &[f64], tol: f64) {
        for (i, &x) in v.iter().enumerate() {
            let e = min + i as i32;
            let got = s.coeff(e).expect("coefficient known");
            assert!((got - c(x)).norm() < tol, "s^{e}: got {got}, want {x}");
        }
    }

    #[test]
    fn product_with_pole() {
        let a = Laurent::exact(-1, vec![c(1.0), c(1.0)]);
        let b = cs(1, &[1.0, -1.0, 0.0, 0.0], 5);
        let p = a.mul(&b);
        assert_eq!(p.min_exp(), 0);
        assert_eq!(p.trunc(), 4);
        assert_coeffs(&p, 0, &[1.0, 0.0, -1.0, 0.0], 1e-15);
    }

    #[test]
    fn hand_expansion_product() {
        // (s^-1 + 1)(s - s^2) = 1 - s^2
        let a = Laurent::exact(-1, vec![c(1.0), c(1.0)]);
        let b = Laurent::new(1, vec![c(1.0), c(-1.0)], 8);
        let p = a.mul(&b);
        assert_coeffs(&p, 0, &[1.0, 0.0, -1.0, 0.0, 0.0], 1e-15);
    }

    #[test]
    fn geometric_series_times_pole() {
        // (s^-1 + 1) * s/(1+s) truncated: s/(1+s) = s - s^2 + s^3 - ...
        let a = Laurent::exact(-1, vec![c(1.0), c(1.0)]);
        let b = cs(1, &[1.0], 8).div(&cs(0, &[1.0, 1.0], 8)).unwrap();
        let p = a.mul(&b);
        // (1+s)/s * s/(1+s) = 1
        assert_coeffs(&p, 0, &[1.0, 0.0, 0.0, 0.0], 1e-14);
    }

    #[test]
    fn residue_of_reciprocal() {
        let den = cs(2, &[2.0, 1.0], 12);
        let r = cs(0, &[1.0], 12).div(&den).unwrap();
        assert_eq!(r.min_exp(), -2);
        assert!((r.residue().unwrap() - c(-0.25)).norm() < 1e-15);
        assert!((r.coeff(-2).unwrap() - c(0.5)).norm() < 1e-15);
    }

    #[test]
    fn residue_cases() {
        let a = Laurent::exact(-1, vec![c(3.0), c(5.0), c(1.0)]);
        assert_eq!(a.residue().unwrap(), c(3.0));
        let b = Laurent::exact(-2, vec![c(1.0), c(0.0), c(0.0), c(0.0), c(1.0)]);
        assert_eq!(b.residue().unwrap(), c(0.0));
        let unknown = cs(-3, &[1.0], -1);
        assert!(matches!(unknown.residue(), Err(Error::Truncation(_))));
    }

    #[test]
    fn singular_division() {
        let a = cs(0, &[1.0, 2.0], 6);
        let z = cs(0, &[0.0, 1.0], 6);
        assert_eq!(a.div(&z), Err(Error::SingularDivision));
    }

    #[test]
    fn compose_basic() {
        let outer = Laurent::exact(2, vec![c(1.0)]);
        let inner = cs(1, &[-1.0, 0.0, 1.0], 8);
        let r = outer.compose(&inner).unwrap();
        assert_coeffs(&r, 2, &[1.0, 0.0, -2.0, 0.0, 1.0], 1e-15);
    }

    #[test]
    fn compose_identity() {
        let outer = cs(-2, &[1.0, 0.5, 0.25, 3.0, -1.0, 2.0], 4);
        let s = cs(1, &[1.0], 10);
        let r = outer.compose(&s).unwrap();
        assert_coeffs(&r, -2, &[1.0, 0.5, 0.25, 3.0, -1.0, 2.0], 1e-15);
    }

    #[test]
    fn compose_negative_power() {
        // (2s + s^2)^-2 = 1/4 s^-2 (1 + s/2)^-2 = 1/4 s^-2 (1 - s + 3/4 s^2 - 1/2 s^3 ...)
        // binomial oracle: (1+x)^-2 = sum (k+1)(-x)^k, x = s/2
        let outer = Laurent::exact(-2, vec![c(1.0)]);
        let inner = cs(1, &[2.0, 1.0], 10);
        let r = outer.compose(&inner).unwrap();
        let oracle: Vec<f64> = (0..6)
            .map(|k| 0.25 * (k as f64 + 1.0) * (-0.5f64).powi(k))
            .collect();
        assert_coeffs(&r, -2, &oracle, 1e-14);
        assert!((r.coeff(-1).unwrap() - c(-0.25)).norm() < 1e-15);
        assert!((r.coeff(0).unwrap() - c(3.0 / 16.0)).norm() < 1e-15);
    }

    #[test]
    fn compose_domain_error() {
        let outer = Laurent::exact(-1, vec![c(1.0)]);
        let inner = cs(2, &[1.0], 10);
        assert!(matches!(
            outer.compose(&inner),
            Err(Error::CompositionDomain(_))
        ));
        let constant_inner = cs(0, &[1.0, 1.0], 10);
        assert!(matches!(
            outer.compose(&constant_inner),
            Err(Error::CompositionDomain(_))
        ));
    }

    #[test]
    fn reversion_examples() {
        let f = cs(1, &[2.0], 8);
        let g = f.invert_composition().unwrap();
        assert_coeffs(&g, 1, &[0.5, 0.0, 0.0, 0.0], 1e-15);

        // Lagrange inversion: g_n = (1/n) [w^{n-1}] (1+w)^{-n} = (-1)^{n-1} C_{n-1}
        let f = cs(1, &[1.0, 1.0], 9);
        let g = f.invert_composition().unwrap();
        let lagrange: Vec<f64> = (1..8)
            .map(|n: i32| {
                let k = (n - 1) as u64;
                let binom = (0..k).fold(1.0, |acc, i| acc * (2 * k - i) as f64 / (i + 1) as f64);
                (-1f64).powi(n - 1) * binom / (k + 1) as f64
            })
            .collect();
        assert_coeffs(&g, 1, &lagrange, 1e-12);
        assert_coeffs(&g, 1, &[1.0, -1.0, 2.0, -5.0], 1e-12);
    }

    #[test]
    fn integrate_examples() {
        let a = Laurent::exact(1, vec![c(2.0)]);
        let i = a.integrate(LogTerm::Reject).unwrap();
        assert_eq!(i.min_exp(), 2);
        assert_eq!(i.coeff(2).unwrap(), c(1.0));

        let b = Laurent::exact(-2, vec![c(1.0)]);
        let i = b.integrate(LogTerm::Reject).unwrap();
        assert_eq!(i.coeff(-1).unwrap(), c(-1.0));

        let l = Laurent::exact(-1, vec![c(2.0), c(1.0)]);
        assert!(matches!(
            l.integrate(LogTerm::Reject),
            Err(Error::LogTerm { .. })
        ));
        let dropped = l.integrate(LogTerm::Drop).unwrap();
        assert_eq!(dropped.coeff(0).unwrap(), c(0.0));
        assert_eq!(dropped.coeff(1).unwrap(), c(1.0));
    }

    #[test]
    fn eps_poly_arithmetic() {
        let a = EpsPoly::eta_hat(c(2.0));
        let b = a.mul_ref(&a);
        assert_eq!(b.degree(), Some(2));
        assert_eq!(b.coeffs(), &[c(4.0), c(-4.0), c(1.0)]);
        assert_eq!(b.eval(c(2.0)), c(0.0));
        let mut z = a.clone();
        z.sub_assign_ref(&a);
        assert!(z.is_zero());
        assert_eq!(z.degree(), None);
        assert!(a.try_inverse().is_none());
        assert_eq!(EpsPoly::constant(c(4.0)).try_inverse(), Some(EpsPoly::constant(c(0.25))));
    }

    #[test]
    fn eps_series_division_by_constant_leading() {
        let num = Laurent::new(0, vec![EpsPoly::eta_hat(c(1.0)), EpsPoly::constant(c(1.0))], 6);
        let den = Laurent::new(1, vec![EpsPoly::constant(c(2.0)), EpsPoly::constant(c(1.0))], 7);
        let q = num.div(&den).unwrap();
        assert_eq!(q.min_exp(), -1);
        let back = q.mul(&den);
        for e in 0..5 {
            let d = {
                let mut x = back.coeff(e).unwrap();
                x.sub_assign_ref(&num.coeff(e).unwrap());
                x
            };
            assert!(d.magnitude() < 1e-14);
        }
    }

    #[test]
    fn transcendental_helpers() {
        let w = cs(1, &[1.0], 10);
        let e = w.exp_series().unwrap();
        let mut fact = 1.0;
        for k in 0..10 {
            if k > 0 {
                fact *= k as f64;
            }
            assert!((e.coeff(k).unwrap() - c(1.0 / fact)).norm() < 1e-15);
        }
        let l = e.sub(&Laurent::one()).ln1p().unwrap();
        assert_coeffs(&l, 1, &[1.0, 0.0, 0.0, 0.0, 0.0], 1e-14);
        let cube = w.pow1p(1.0 / 3.0).unwrap();
        let back = cube.mul(&cube).mul(&cube);
        assert_coeffs(&back, 0, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0], 1e-14);
        let a = w.atanh().unwrap();
        assert_coeffs(&a, 0, &[0.0, 1.0, 0.0, 1.0 / 3.0, 0.0, 0.2], 1e-15);
    }
}
