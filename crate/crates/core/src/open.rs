//! Open sector: the three open points over X = 0, local coordinates there,
//! disk and annulus potentials and extraction of open invariants.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{zeta3, ModuliPoint};
use crate::error::{Error, Result};
use crate::ramification::polynomial_roots;
use crate::recursion::{BasisKey, Engine, SymbolicForm};
use crate::series::{CSeries, LogTerm};

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Step sizes of the limit procedure for w_l.
const LIMIT_STEPS: [f64; 3] = [1e-3, 1e-4, 1e-5];

/// Y-values of the open points (0, Y_l): the cube roots of −1.
pub fn open_y_values() -> [Complex64; 3] {
    [
        c(-1.0),
        Complex64::from_polar(1.0, PI / 3.0),
        Complex64::from_polar(1.0, -PI / 3.0),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpenPoint {
    pub l: usize,
    pub y_l: Complex64,
    /// u-coordinate of (0, Y_l).
    pub w: Complex64,
    /// Richardson limit of the inverse map along the branch, before refinement.
    pub w_limit: Complex64,
    /// Y(X) on the branch through Y_l.
    pub y_of_x: CSeries,
    /// u(X) − w.
    pub u_of_x: CSeries,
}

impl OpenPoint {
    /// du/dX as a series in X.
    pub fn du_dx(&self) -> CSeries {
        self.u_of_x.derivative()
    }
}

/// ψ_l = (1/3) Σ_k ξ₃^{−kl} 1_{k/3}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbifoldWeight {
    pub l: usize,
    pub weights: [Complex64; 3],
}

pub fn orbifold_weights() -> [OrbifoldWeight; 3] {
    let z = zeta3();
    [0, 1, 2].map(|l| OrbifoldWeight {
        l,
        weights: [0, 1, 2].map(|k| z.powi(-((k * l) as i32)) / 3.0),
    })
}

/// Y(X) through (0, y_l) by Newton iteration on power series.
pub fn branch_series(m: &ModuliPoint, y_l: Complex64, order: usize) -> Result<CSeries> {
    let trunc = order as i32;
    let x = CSeries::variable().truncated(trunc);
    let one_qx = CSeries::one().add(&x.scale(m.q));
    let x3 = x.mul(&x).mul(&x);
    let mut y = CSeries::constant(y_l).truncated(trunc);
    let mut steps = 0;
    loop {
        let y2 = y.mul(&y);
        let y3 = y2.mul(&y);
        let h = y3.mul(&y3).add(&one_qx.mul(&y3)).add(&x3);
        let resid = h.max_magnitude();
        if resid < 1e-13 * (1.0 + y.max_magnitude()) {
            return Ok(y);
        }
        steps += 1;
        if steps > 2 * (order.max(2).ilog2() as usize) + 8 {
            return Err(Error::OpenBranch(format!(
                "Y(X) series through {y_l} did not converge (residual {resid:e})"
            )));
        }
        let hy = y3.mul(&y2).scale(c(6.0)).add(&one_qx.mul(&y2).scale(c(3.0)));
        let step = h.div(&hy).map_err(|_| {
            Error::OpenBranch(format!("∂H/∂Y vanishes at (0, {y_l})"))
        })?;
        y = y.sub(&step).truncated(trunc);
    }
}

/// Drops leading coefficients that are roundoff relative to `scale`.
fn chop_leading(s: &CSeries, scale: f64) -> Result<CSeries> {
    let tol = 1e-12 * scale.max(1.0);
    let n = s.coeffs().iter().take_while(|v| v.norm() <= tol).count();
    s.strip_leading(n.min(s.coeffs().len().saturating_sub(1)), tol)
}

/// u(X) − w through the inverse map: U, V as Laurent series in X (the
/// denominator vanishes at ν₀), then u = ∫ U′/V dX.
pub fn u_series_from_branch(m: &ModuliPoint, y_of_x: &CSeries) -> Result<CSeries> {
    let q = m.q;
    let k = m.kappa;
    let trunc = y_of_x.trunc();
    let xv = CSeries::variable().truncated(trunc + 4);
    let y = y_of_x.clone();
    let x = xv.div(&y)?;
    let den = y.scale(c(3.0)).add(&CSeries::constant(c(3.0))).sub(&x.scale(q));
    let den = chop_leading(&den, 3.0)?;
    let num_u = x
        .scale(108.0 + q.powi(3))
        .add(&y.scale(9.0 * q * q))
        .add(&CSeries::constant(9.0 * q * q));
    let num_u = chop_leading(&num_u, 9.0 * (q * q).norm())?;
    let uu = num_u.div(&den)?.scale(-k * k / (3.0 * crate::curve::cbrt4()));
    let num_v = y
        .mul(&y)
        .scale(c(3.0))
        .sub(&x.mul(&y).scale(q))
        .add(&x.scale(q))
        .sub(&CSeries::constant(c(3.0)));
    let num_v = chop_leading(&num_v, 3.0)?;
    let vv = num_v.div(&den.mul(&den))?.scale(-4.0 * (q.powi(3) + 27.0) * k.powi(3));
    let du = uu.derivative().div(&vv)?;
    // u − w has valuation 1, so anything below X⁰ in du is cancellation noise.
    let scale = du.coeff(0).map_or(1.0, |v| v.norm().max(1.0));
    let neg = (-du.min_exp()).max(0) as usize;
    let du = du.strip_leading(neg.min(du.coeffs().len().saturating_sub(1)), 1e-8 * scale)?;
    du.truncated(trunc - 1).integrate(LogTerm::Reject)
}

/// Curve point at u, falling back to the local series at lattice points.
fn point_at(m: &ModuliPoint, u: Complex64) -> Result<(Complex64, Complex64)> {
    match m.uniformize(u) {
        Ok(p) => Ok((p.x_big, p.y_big)),
        Err(Error::Pole { .. }) | Err(Error::ParametrizationSingularity { .. }) => {
            let s = m.curve_series(u, 2)?;
            Ok((s.x.coeff(0).unwrap_or_default(), s.y.coeff(0).unwrap_or_default()))
        }
        Err(e) => Err(e),
    }
}

/// Nearest lattice translate of `u` to `target`.
fn align(m: &ModuliPoint, u: Complex64, target: Complex64) -> Complex64 {
    let (red, _, _) = m.lattice.reduce(u - target);
    target + red
}

/// Polynomial extrapolation to h = 0 through (h_i, v_i).
fn extrapolate(hs: &[f64], vs: &[Complex64]) -> Complex64 {
    let mut p = vs.to_vec();
    let n = p.len();
    for level in 1..n {
        for i in 0..n - level {
            let (hi, hj) = (hs[i], hs[i + level]);
            p[i] = (p[i + 1] * hi - p[i] * hj) / (hi - hj);
        }
    }
    p[0]
}

/// Fractions of the branch radius at which the halving ladders start; used
/// where the inverse map is 0/0 at the open point and cancellation ruins the
/// fine steps.
const COARSE_STARTS: [f64; 3] = [0.25, 0.1, 0.04];

/// Distance from X = 0 to the nearest branch point of Y(X), i.e. the
/// nearest root of 4X³ − (1 + qX)².
pub fn branch_radius(m: &ModuliPoint) -> f64 {
    let q = m.q;
    polynomial_roots(&[c(-1.0), -2.0 * q, -q * q, c(4.0)])
        .into_iter()
        .map(|r| r.norm())
        .fold(f64::INFINITY, f64::min)
}

fn limit_with(m: &ModuliPoint, y_l: Complex64, steps: &[f64]) -> Result<Complex64> {
    let mut vals = Vec::with_capacity(steps.len());
    for &h in steps {
        let xb = c(h);
        let y = m
            .y_branches(xb, None)
            .into_iter()
            .min_by(|a, b| (a - y_l).norm().total_cmp(&(b - y_l).norm()))
            .expect("six roots");
        if (y - y_l).norm() > 1e3 * h * (1.0 + m.q.norm()) {
            return Err(Error::OpenBranch(format!("no branch approaches {y_l}")));
        }
        let u = m.inverse_uniformize(xb, y)?.u;
        let u = match vals.first() {
            Some(&first) => align(m, u, first),
            None => u,
        };
        vals.push(u);
    }
    Ok(extrapolate(steps, &vals))
}

/// The limit procedure: inverse images of curve points approaching ν_l,
/// extrapolated to X = 0.
pub fn limit_w(m: &ModuliPoint, y_l: Complex64) -> Result<Complex64> {
    match limit_with(m, y_l, &LIMIT_STEPS) {
        Ok(w) => Ok(w),
        Err(Error::Domain(_)) | Err(Error::Numeric(_)) | Err(Error::NearOpenPoint { .. }) => {
            coarse_limit(m, y_l)
        }
        Err(e) => Err(e),
    }
}

/// First halving ladder whose 3- and 4-point extrapolants agree.
fn coarse_limit(m: &ModuliPoint, y_l: Complex64) -> Result<Complex64> {
    let radius = branch_radius(m);
    for frac in COARSE_STARTS {
        let h0 = frac * radius;
        let steps: Vec<f64> = (0..4).map(|k| h0 / f64::from(1 << k)).collect();
        let Ok(w4) = limit_with(m, y_l, &steps) else { continue };
        let Ok(w3) = limit_with(m, y_l, &steps[1..]) else { continue };
        let (d, _, _) = m.lattice.reduce(w4 - w3);
        if d.norm() < 1e-4 {
            return Ok(w4);
        }
    }
    Err(Error::OpenBranch(format!("limit procedure did not settle at Y = {y_l}")))
}

/// Newton on X(u) = 0 from a nearby start.
fn refine_zero(m: &ModuliPoint, start: Complex64) -> Result<Complex64> {
    let mut w = start;
    for _ in 0..8 {
        let s = m.curve_series(w, 3)?;
        let x1 = s.x.coeff(1).unwrap_or_default();
        if x1.norm() == 0.0 {
            break;
        }
        let step = -s.x.coeff(0).unwrap_or_default() / x1;
        w += step;
        if step.norm() < 1e-15 * (1.0 + w.norm()) {
            break;
        }
    }
    Ok(w)
}

fn build_open_point(m: &ModuliPoint, l: usize, order: usize) -> Result<OpenPoint> {
    let y_l = open_y_values()[l];
    let w_limit = limit_w(m, y_l)?;
    // Next to a lattice point ℘ data is too ill-conditioned for Newton, so
    // the lattice point itself is tried first; the forward gate decides.
    let (red, _, _) = m.lattice.reduce(w_limit);
    let mut candidates = Vec::with_capacity(2);
    if red.norm() < 1e-2 {
        candidates.push(w_limit - red);
    }
    candidates.push(refine_zero(m, w_limit)?);
    let mut last = None;
    let mut found = None;
    for w in candidates {
        let (xg, yg) = point_at(m, w)?;
        if xg.norm() <= 1e-7 && (yg - y_l).norm() <= 1e-7 {
            found = Some(w);
            break;
        }
        last = Some((xg, yg));
    }
    let Some(w) = found else {
        let (xg, yg) = last.unwrap_or_default();
        return Err(Error::OpenBranch(format!(
            "forward gate failed for ν_{l}: ({xg}, {yg})"
        )));
    };
    // The 0/0 at ν₀ costs two orders in the division; build with headroom.
    let y_full = branch_series(m, y_l, order + 4)?;
    let want = order as i32 + 1;
    let u_of_x = u_series_from_branch(m, &y_full)?;
    if u_of_x.trunc() < want {
        return Err(Error::Truncation(format!(
            "u(X) at ν_{l} known only below X^{}",
            u_of_x.trunc()
        )));
    }
    let u_of_x = u_of_x.truncated(want);
    let y_of_x = y_full.truncated(want);
    if u_of_x.valuation().map_or(true, |v| v < 1) {
        return Err(Error::OpenBranch(format!("u(X) is not regular at ν_{l}")));
    }
    Ok(OpenPoint {
        l,
        y_l,
        w,
        w_limit,
        y_of_x,
        u_of_x,
    })
}

/// The three open points with local series to X^order.
pub fn open_points(m: &ModuliPoint, order: usize) -> Result<Vec<OpenPoint>> {
    (0..3)
        .into_par_iter()
        .map(|l| build_open_point(m, l, order))
        .collect()
}

/// (ln Y(X) − ln Y_l)/X on each branch.
pub fn disk_potential(m: &ModuliPoint, order: usize) -> Result<Vec<CSeries>> {
    open_y_values()
        .iter()
        .map(|&y_l| {
            let y = branch_series(m, y_l, order + 2)?;
            let rel = y.scale(y_l.inv()).sub(&CSeries::one());
            let rel = rel.strip_leading(1, 1e-13)?;
            Ok(rel.ln1p()?.shift(-1).truncated(order as i32))
        })
        .collect()
}

/// Coefficients a[i][j] of X₁^i X₂^j with i + j < order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bivariate {
    pub order: usize,
    pub coeffs: Vec<Vec<Complex64>>,
}

impl Bivariate {
    fn zero(order: usize) -> Self {
        Bivariate {
            order,
            coeffs: (0..order).map(|i| vec![Complex64::default(); order - i]).collect(),
        }
    }

    fn from_parts(order: usize, f1: &CSeries, f2: &CSeries) -> Self {
        let mut out = Self::zero(order);
        for i in 0..order {
            for j in 0..order - i {
                out.coeffs[i][j] = f1.coeff(i as i32).unwrap_or_default() * f2.coeff(j as i32).unwrap_or_default();
            }
        }
        out
    }

    fn mul(&self, rhs: &Self) -> Self {
        let n = self.order;
        let mut out = Self::zero(n);
        for i1 in 0..n {
            for j1 in 0..n - i1 {
                let a = self.coeffs[i1][j1];
                if a == Complex64::default() {
                    continue;
                }
                for i2 in 0..n - i1 - j1 {
                    for j2 in 0..n - i1 - j1 - i2 {
                        out.coeffs[i1 + i2][j1 + j2] += a * rhs.coeffs[i2][j2];
                    }
                }
            }
        }
        out
    }

    fn add_scaled(&mut self, rhs: &Self, k: Complex64) {
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }

    pub fn eval(&self, x1: Complex64, x2: Complex64) -> Complex64 {
        let mut total = Complex64::default();
        for (i, row) in self.coeffs.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                total += v * x1.powi(i as i32) * x2.powi(j as i32);
            }
        }
        total
    }

    pub fn swapped(&self) -> Self {
        let mut out = Self::zero(self.order);
        for (i, row) in self.coeffs.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out.coeffs[j][i] = *v;
            }
        }
        out
    }
}

/// Σ_k c_k (s₁(X₁) − s₂(X₂))^k.
fn compose_difference(cs: &[Complex64], s1: &CSeries, s2: &CSeries, order: usize) -> Bivariate {
    let mut t = Bivariate::from_parts(order, s1, &CSeries::one());
    t.add_scaled(&Bivariate::from_parts(order, &CSeries::one(), s2), c(-1.0));
    let mut out = Bivariate::zero(order);
    let mut pow = Bivariate::from_parts(order, &CSeries::one(), &CSeries::one());
    for ck in cs.iter().take(order) {
        out.add_scaled(&pow, *ck);
        pow = pow.mul(&t);
    }
    out
}

/// Ŝ(u₁,u₂)/(dX₁dX₂) at the branch pair (l₁, l₂), with the double pole
/// removed on the diagonal. `eta` is the constant in Ŝ.
pub fn annulus(
    m: &ModuliPoint,
    points: &[OpenPoint],
    order: usize,
    eta: Complex64,
) -> Result<Vec<Vec<Bivariate>>> {
    let lat = &m.lattice;
    let mut out = Vec::with_capacity(3);
    for p1 in points {
        let mut row = Vec::with_capacity(3);
        for p2 in points {
            let a = p1.w - p2.w;
            let (red, _, _) = lat.reduce(a);
            let mut cs: Vec<Complex64> = if red.norm() < 1e-8 {
                let laurent = lat.wp_laurent(order as i32 + 1);
                (0..order as i32).map(|e| laurent.coeff(e).unwrap_or_default()).collect()
            } else {
                lat.wp_taylor(a, order)?
            };
            cs[0] += eta;
            let base = compose_difference(&cs, &p1.u_of_x, &p2.u_of_x, order);
            let jac = Bivariate::from_parts(order, &p1.du_dx(), &p2.du_dx());
            row.push(base.mul(&jac));
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenInvariant {
    pub g: u32,
    pub n: u32,
    pub d: Vec<usize>,
    pub k: Vec<usize>,
    pub value: Complex64,
    /// The open mirror-map constant A used in the normalization.
    pub a: Complex64,
}

/// Σ over branch tuples of ξ₃^{Σ kᵢlᵢ}/3ⁿ · f(l).
pub fn twisted_sum(k: &[usize], f: impl Fn(&[usize]) -> Result<Complex64>) -> Result<Complex64> {
    let n = k.len();
    let z = zeta3();
    let mut total = Complex64::default();
    let mut ls = vec![0usize; n];
    for idx in 0..3usize.pow(n as u32) {
        let mut rest = idx;
        for l in ls.iter_mut() {
            *l = rest % 3;
            rest /= 3;
        }
        let phase: usize = k.iter().zip(&ls).map(|(a, b)| a * b).sum();
        total += z.powi((phase % 3) as i32) * f(&ls)?;
    }
    Ok(total / 3f64.powi(n as i32))
}

/// [X^e] of basis(w_l + u(X))·u′(X).
fn slot_coefficient(
    m: &ModuliPoint,
    p: &OpenPoint,
    key: BasisKey,
    anchors: &[Complex64],
    e: usize,
) -> Result<Complex64> {
    let du = p.du_dx();
    let f = match key {
        BasisKey::Const => CSeries::one(),
        BasisKey::P { r, m: mm } => {
            let a = p.w - anchors[r as usize];
            let (red, _, _) = m.lattice.reduce(a);
            if red.norm() < 1e-8 {
                return Err(Error::PoleCollision {
                    open: p.l,
                    ram: r as usize,
                });
            }
            let len = e + 2 + mm as usize;
            let mut t = CSeries::new(0, m.lattice.wp_taylor(a, len)?, len as i32);
            for _ in 0..mm {
                t = t.derivative();
            }
            t.compose(&p.u_of_x)?
        }
    };
    Ok(f.mul(&du).coeff(e as i32).unwrap_or_default())
}

/// [Π X_i^{d_i−1}] of ω/(dX₁⋯dX_n) at branches l, evaluated at ε.
pub fn branch_coefficient(
    m: &ModuliPoint,
    form: &SymbolicForm,
    points: &[OpenPoint],
    anchors: &[Complex64],
    ls: &[usize],
    d: &[usize],
    eps: Complex64,
) -> Result<Complex64> {
    let mut total = Complex64::default();
    let mut cache = std::collections::HashMap::new();
    for (keys, coeff) in &form.terms {
        let mut v = coeff.eval(eps);
        for (i, key) in keys.iter().enumerate() {
            let ck = (i, *key);
            let s = match cache.get(&ck) {
                Some(s) => *s,
                None => {
                    let s = slot_coefficient(m, &points[ls[i]], *key, anchors, d[i] - 1)?;
                    cache.insert(ck, s);
                    s
                }
            };
            v *= s;
        }
        total += v;
    }
    Ok(total)
}

/// N^{d}_{k} = A^{−Σd}/Πd_i! · ∂^{d−1}(ω/dX)|₀ summed over branch tuples
/// with weights ξ₃^{Σkl}/3ⁿ.
pub fn open_invariant(
    engine: &Engine,
    points: &[OpenPoint],
    g: u32,
    d: &[usize],
    k: &[usize],
    a: Complex64,
) -> Result<OpenInvariant> {
    let n = d.len() as u32;
    if d.len() != k.len() || d.iter().any(|&x| x == 0) || k.iter().any(|&x| x > 2) {
        return Err(Error::Config(
            "degrees must be positive and twists in 0..=2, one of each per argument".into(),
        ));
    }
    if points.iter().any(|p| (p.u_of_x.trunc() as usize) < d.iter().max().copied().unwrap_or(1) + 1) {
        return Err(Error::Truncation("open-point series shorter than the requested degree".into()));
    }
    let form = engine.omega(g, n)?;
    let anchors = engine.anchor_positions()?;
    let m = engine.moduli();
    let eps = c(m.eps());
    // (d−1)-th derivative over d! is the X^{d−1} coefficient over d.
    let norm: f64 = d.iter().map(|&x| 1.0 / x as f64).product();
    let total_d: usize = d.iter().sum();
    let raw = twisted_sum(k, |ls| branch_coefficient(m, &form, points, &anchors, ls, d, eps))?;
    Ok(OpenInvariant {
        g,
        n,
        d: d.to_vec(),
        k: k.to_vec(),
        value: raw * norm / a.powi(total_d as i32),
        a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recursion::{evaluate_form, RecursionConfig};
    use std::sync::OnceLock;

    fn tau() -> Complex64 {
        Complex64::new(0.11, 1.29)
    }

    fn engine() -> &'static Engine {
        static E: OnceLock<Engine> = OnceLock::new();
        E.get_or_init(|| {
            Engine::new(ModuliPoint::from_tau(tau()).unwrap(), RecursionConfig::default()).unwrap()
        })
    }

    fn points(order: usize) -> Vec<OpenPoint> {
        open_points(engine().moduli(), order).unwrap()
    }

    fn rel(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn open_points_sit_over_x_zero() {
        let m = engine().moduli();
        let ps = points(10);
        for p in &ps {
            assert!((p.y_l.powi(3) + 1.0).norm() < 1e-12);
            let (x, y) = point_at(m, p.w).unwrap();
            assert!(x.norm() < 1e-7 && (y - p.y_l).norm() < 1e-7, "l={}: ({x}, {y})", p.l);
            assert!(p.u_of_x.valuation().unwrap() >= 1);
            assert!((p.w - p.w_limit).norm() < 1e-5);
        }
        // ν₀ is the image of the lattice origin, ν₁ and ν₂ of ±1/3.
        assert!(m.lattice.reduce(ps[0].w).0.norm() < 1e-12);
        assert!(m.lattice.reduce(ps[1].w - 1.0 / 3.0).0.norm() < 1e-12);
        assert!(m.lattice.reduce(ps[2].w + 1.0 / 3.0).0.norm() < 1e-12);
    }

    #[test]
    fn open_points_at_other_moduli() {
        for t in [Complex64::new(-0.2, 0.9), Complex64::new(0.0, 2.0), Complex64::new(0.45, 0.95)] {
            let m = ModuliPoint::from_tau(t).unwrap();
            let ps = open_points(&m, 6).unwrap();
            let d0 = ps[0].u_of_x.coeff(1).unwrap();
            for p in &ps {
                let (x, y) = point_at(&m, p.w).unwrap();
                assert!(x.norm() < 1e-7 && (y - p.y_l).norm() < 1e-7, "τ={t} l={}", p.l);
                // Y → ζ₃Y permutes the branches and fixes X, so u′(0) agrees.
                assert!(rel(p.u_of_x.coeff(1).unwrap(), d0) < 1e-9);
            }
        }
    }

    #[test]
    fn derivative_matches_limit_procedure() {
        let m = engine().moduli();
        for p in points(8) {
            let central = |h: f64| {
                let at = |x: f64| {
                    let y = m.y_branches(c(x), None).into_iter()
                        .min_by(|a, b| (a - p.y_l).norm().total_cmp(&(b - p.y_l).norm()))
                        .unwrap();
                    align(m, m.inverse_uniformize(c(x), y).unwrap().u, p.w)
                };
                (at(h) - at(-h)) / (2.0 * h)
            };
            let hs = [4e-3, 2e-3, 1e-3];
            let vals: Vec<Complex64> = hs.iter().map(|&h| central(h)).collect();
            let h2: Vec<f64> = hs.iter().map(|h| h * h).collect();
            let fd = extrapolate(&h2, &vals);
            let series = p.u_of_x.coeff(1).unwrap();
            assert!(rel(fd, series) < 1e-6, "l={}: {fd} vs {series}", p.l);
        }
    }

    #[test]
    fn u_of_x_reverts_the_local_x_expansion() {
        let m = engine().moduli();
        for p in points(8) {
            let x_of_s = m.curve_series(p.w, 9).unwrap().x;
            let x_of_s = if x_of_s.min_exp() == 0 { x_of_s.strip_leading(1, 1e-12).unwrap() } else { x_of_s };
            let s_of_x = x_of_s.invert_composition().unwrap();
            for e in 1..8 {
                let a = s_of_x.coeff(e).unwrap();
                let b = p.u_of_x.coeff(e).unwrap();
                assert!((a - b).norm() < 1e-8 * a.norm().max(1.0), "l={} e={e}: {a} vs {b}", p.l);
            }
        }
    }

    #[test]
    fn disk_potential_properties() {
        let m = engine().moduli();
        for &y_l in &open_y_values() {
            let y = branch_series(m, y_l, 6).unwrap();
            let lg = y.scale(y_l.inv()).sub(&CSeries::one()).strip_leading(1, 1e-13).unwrap();
            assert!(lg.ln1p().unwrap().coeff(0).unwrap_or_default().norm() < 1e-14);
        }
        let order = 24;
        let disks = disk_potential(m, order).unwrap();
        for d in &disks[1..] {
            for e in 0..order as i32 {
                let (a, b) = (d.coeff(e).unwrap(), disks[0].coeff(e).unwrap());
                assert!((a - b).norm() < 1e-9 * b.norm().max(1.0), "e={e}");
            }
        }
        let x = c(1e-2);
        for (disk, &y_l) in disks.iter().zip(&open_y_values()) {
            let y = m.y_branches(x, None).into_iter()
                .min_by(|a, b| (a - y_l).norm().total_cmp(&(b - y_l).norm()))
                .unwrap();
            let via_series = (x * disk.eval(x)).exp();
            assert!((via_series - y / y_l).norm() < 1e-8);
        }
    }

    #[test]
    fn annulus_properties() {
        let e = engine();
        let m = e.moduli();
        let eta = e.eta().eval(c(m.eps()));
        let order = 24;
        let ps = points(order);
        let ann = annulus(m, &ps, order, eta).unwrap();
        let d0 = ps[0].u_of_x.coeff(1).unwrap();
        for (i, p1) in ps.iter().enumerate() {
            for (j, p2) in ps.iter().enumerate() {
                let a = &ann[i][j];
                assert!(a.coeffs.iter().flatten().all(|v| v.is_finite()));
                if i != j {
                    let want = (m.lattice.wp(p1.w - p2.w, 0).unwrap() + eta) * d0 * d0;
                    assert!(rel(a.coeffs[0][0], want) < 1e-10);
                }
                let sw = ann[j][i].swapped();
                for (ra, rb) in a.coeffs.iter().zip(&sw.coeffs) {
                    for (x, y) in ra.iter().zip(rb) {
                        assert!((x - y).norm() < 1e-9 * y.norm().max(1.0));
                    }
                }
            }
        }
        // Pointwise: the subtracted series against direct evaluation, which
        // also checks that the subtraction is exactly the double pole.
        let (x1, x2) = (c(1e-2), Complex64::new(0.0, 2e-2));
        for (l, p) in ps.iter().enumerate() {
            let u_at = |x: Complex64| {
                let y = m.y_branches(x, None).into_iter()
                    .min_by(|a, b| (a - p.y_l).norm().total_cmp(&(b - p.y_l).norm()))
                    .unwrap();
                align(m, m.inverse_uniformize(x, y).unwrap().u, p.w)
            };
            let (u1, u2) = (u_at(x1), u_at(x2));
            let du = p.du_dx();
            let jac = du.eval(x1) * du.eval(x2);
            let full = (m.lattice.wp(u1 - u2, 0).unwrap() + eta) * jac;
            let pole = jac / (u1 - u2).powi(2);
            let series = ann[l][l].eval(x1, x2);
            assert!(rel(series, full - pole) < 1e-7, "l={l}: {series} vs {}", full - pole);
            assert!(rel(series + pole, full) < 1e-7);
        }
    }

    #[test]
    fn orbifold_weights_are_orthogonal() {
        let ws = orbifold_weights();
        let z = zeta3();
        for k in 0..3 {
            let s: Complex64 = (0..3).map(|l| z.powi((k * l) as i32) / 3.0).sum();
            assert!((s - if k == 0 { c(1.0) } else { c(0.0) }).norm() < 1e-15);
        }
        for w in &ws {
            let s: Complex64 = w.weights.iter().sum();
            assert!((s - if w.l == 0 { c(1.0) } else { c(0.0) }).norm() < 1e-15);
        }
    }

    #[test]
    fn twist_orthogonality() {
        for k in [vec![1], vec![2], vec![1, 0], vec![0, 2], vec![1, 1, 1], vec![2, 0, 1]] {
            let v = twisted_sum(&k, |_| Ok(Complex64::new(2.7, -1.3))).unwrap();
            assert!(v.norm() < 1e-10, "k={k:?}: {v}");
        }
        let v = twisted_sum(&[0, 0, 0], |_| Ok(Complex64::new(2.7, -1.3))).unwrap();
        assert!((v - Complex64::new(2.7, -1.3)).norm() < 1e-12);
    }

    /// ω_{0,3}·Πu′ at w_l + u(Xᵢ) on a fourth-order stencil over
    /// Xᵢ ∈ {±h, ±2h}: value for dᵢ = 1, first derivative over 2! for dᵢ = 2.
    fn fd_extraction(d: &[usize], k: &[usize], h: f64) -> Complex64 {
        let e = engine();
        let m = e.moduli();
        let ps = points(8);
        let form = e.omega(0, 3).unwrap();
        let anchors = e.anchor_positions().unwrap();
        let eps = c(m.eps());
        let nodes = [-2.0, -1.0, 1.0, 2.0];
        let weight = |di: usize, t: f64| match di {
            1 => [-1.0, 4.0, 4.0, -1.0][nodes.iter().position(|&v| v == t).unwrap()] / 6.0,
            2 => [1.0, -8.0, 8.0, -1.0][nodes.iter().position(|&v| v == t).unwrap()] / (12.0 * h) / 2.0,
            _ => unreachable!(),
        };
        twisted_sum(k, |ls| {
            let mut total = Complex64::default();
            for idx in 0..64usize {
                let mut us = Vec::new();
                let mut w = c(1.0);
                for (i, &l) in ls.iter().enumerate() {
                    let t = nodes[idx >> (2 * i) & 3];
                    let x = c(t * h);
                    let p = &ps[l];
                    us.push(p.w + p.u_of_x.eval(x));
                    w *= p.du_dx().eval(x) * weight(d[i], t);
                }
                total += w * evaluate_form(&form, &us, &m.lattice, &anchors, eps)?;
            }
            Ok(total)
        })
        .unwrap()
    }

    #[test]
    fn extraction_matches_finite_differences() {
        let e = engine();
        let ps = points(8);
        let one = c(1.0);
        let n = open_invariant(e, &ps, 0, &[1, 1, 1], &[0, 0, 0], one).unwrap();
        let fd = fd_extraction(&[1, 1, 1], &[0, 0, 0], 1e-3);
        assert!(rel(n.value, fd) < 1e-5, "{} vs {fd}", n.value);
        let n = open_invariant(e, &ps, 0, &[2, 1, 1], &[1, 0, 2], one).unwrap();
        let fd = fd_extraction(&[2, 1, 1], &[1, 0, 2], 1e-3);
        assert!(rel(n.value, fd) < 1e-5, "{} vs {fd}", n.value);
    }

    #[test]
    fn a_scaling_and_permutation_symmetry() {
        let e = engine();
        let ps = points(8);
        let base = open_invariant(e, &ps, 0, &[2, 1, 3], &[1, 0, 2], c(1.0)).unwrap();
        let scaled = open_invariant(e, &ps, 0, &[2, 1, 3], &[1, 0, 2], c(2.0)).unwrap();
        assert!(rel(scaled.value, base.value / 64.0) < 1e-15);
        let perm = open_invariant(e, &ps, 0, &[3, 2, 1], &[2, 1, 0], c(1.0)).unwrap();
        assert!(rel(perm.value, base.value) < 1e-9);
        let n11 = open_invariant(e, &ps, 1, &[1], &[0], c(1.0)).unwrap();
        assert!(n11.value.is_finite());
    }

    #[test]
    fn invalid_requests() {
        let e = engine();
        let ps = points(4);
        assert!(matches!(open_invariant(e, &ps, 0, &[1, 1], &[0], c(1.0)), Err(Error::Config(_))));
        assert!(matches!(open_invariant(e, &ps, 0, &[0, 1, 1], &[0, 0, 0], c(1.0)), Err(Error::Config(_))));
        assert!(matches!(open_invariant(e, &ps, 0, &[9, 1, 1], &[0, 0, 0], c(1.0)), Err(Error::Truncation(_))));
        let mut bad = ps.clone();
        bad[0].w = e.anchor_positions().unwrap()[0];
        assert!(matches!(
            open_invariant(e, &bad, 0, &[1, 1, 1], &[0, 0, 0], c(1.0)),
            Err(Error::PoleCollision { .. })
        ));
    }
}
