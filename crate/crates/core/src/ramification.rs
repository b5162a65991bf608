//! Ramification points of X on the curve, the local deck involution and
//! the local expansion of λ − λ*.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{cbrt, zeta3, ModuliPoint, EXCLUSION_RADIUS};
use crate::error::{Error, Result};
use crate::series::CSeries;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// One of the nine ramification points.
#[derive(Clone, Debug, PartialEq)]
pub struct RamPoint {
    /// Rotation label: Y = e^{2πik/3} Y_j.
    pub k: usize,
    /// Root label 1..=3.
    pub j: usize,
    pub x_r: Complex64,
    pub y_r: Complex64,
    pub u_r: Complex64,
    /// X(u_r + s).
    pub x_of_u: CSeries,
    /// Y(u_r + s) − Y_r.
    pub y_of_u: CSeries,
    /// σ(s) = u(q*) − u_r, as used downstream: exactly −s when the point is a
    /// verified reflection centre of X, otherwise `sigma_computed`.
    pub sigma: CSeries,
    /// σ from series inversion of the sheet-swap relation.
    pub sigma_computed: CSeries,
    /// X(u_r + s) = X(u_r − s) held pointwise on a circle around u_r.
    pub reflection: bool,
    /// (λ − λ*)/ds; even in s at a reflection centre, where the odd part
    /// (pure roundoff) is discarded.
    pub lam_diff: CSeries,
    /// Radius at which the local coefficients are O(1); see [`local_scale`].
    pub rho: f64,
}

/// Summary row used for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RamSummary {
    pub k: usize,
    pub j: usize,
    #[serde(rename = "X")]
    pub x: Complex64,
    #[serde(rename = "Y")]
    pub y: Complex64,
    pub u: Complex64,
    pub sigma_prime: Complex64,
    pub lambda_zero_order: usize,
}

impl RamPoint {
    pub fn summary(&self) -> RamSummary {
        RamSummary {
            k: self.k,
            j: self.j,
            x: self.x_r,
            y: self.y_r,
            u: self.u_r,
            sigma_prime: self.sigma.coeff(1).unwrap_or_default(),
            lambda_zero_order: lambda_zero_order(&self.lam_diff, self.rho),
        }
    }
}

/// Number of leading coefficients of `lam` that are negligible. Coefficient
/// e is weighed as |c_e|·ρ^e so the geometric growth set by the local scale
/// `rho` does not swamp the low orders.
pub fn lambda_zero_order(lam: &CSeries, rho: f64) -> usize {
    let weighed = |e: i32| lam.coeff(e).map_or(0.0, |c| c.norm() * rho.powi(e));
    let scale = (0..lam.trunc()).map(weighed).fold(0.0, f64::max).max(1e-300);
    (0..lam.trunc()).take_while(|&e| weighed(e) < 1e-9 * scale).count()
}

/// The three values Y_j³ from the closed radical formulas.
pub fn y_cubes(q: Complex64) -> Result<[Complex64; 3]> {
    let q3 = q.powi(3);
    let q6 = q3 * q3;
    let q9 = q6 * q3;
    let inner = 27.0 * q6 + q9;
    if inner.norm() < EXCLUSION_RADIUS {
        return Err(Error::DegenerateRamification(format!(
            "27q^6 + q^9 vanishes at q = {q}"
        )));
    }
    let s3 = 3f64.sqrt();
    let t = cbrt(216.0 * q3 + 36.0 * q6 + q9 + 24.0 * s3 * inner.sqrt());
    if t.norm() < EXCLUSION_RADIUS {
        return Err(Error::DegenerateRamification("radical t vanishes".into()));
    }
    let i = Complex64::new(0.0, 1.0);
    let a = (-12.0 - q3) / 24.0;
    let b = -24.0 * q3 - q6;
    let y1 = a + b / (24.0 * t) - t / 24.0;
    let y2 = a - (1.0 + i * s3) * b / (48.0 * t) + (1.0 - i * s3) * t / 48.0;
    let y3 = a - (1.0 - i * s3) * b / (48.0 * t) + (1.0 + i * s3) * t / 48.0;
    let ys = [y1, y2, y3];
    for m in 0..3 {
        for n in m + 1..3 {
            if (ys[m] - ys[n]).norm() < 1e-8 * (1.0 + ys[m].norm()) {
                return Err(Error::DegenerateRamification(format!(
                    "Y^3 roots {m} and {n} coincide"
                )));
            }
        }
    }
    Ok(ys)
}

/// q¹²/864 + q⁹/12 + 2q⁶ + 17q³ + 27, whose roots make λ − λ* degenerate.
pub fn framing_polynomial(q: Complex64) -> Complex64 {
    let p = q.powi(3);
    p.powi(4) / 864.0 + p.powi(3) / 12.0 + 2.0 * p * p + 17.0 * p + 27.0
}

/// Roots of the framing polynomial in q.
pub fn framing_locus() -> Vec<Complex64> {
    let p_roots = polynomial_roots(&[c(27.0), c(17.0), c(2.0), c(1.0 / 12.0), c(1.0 / 864.0)]);
    let z = zeta3();
    p_roots
        .iter()
        .flat_map(|p| {
            let r = cbrt(*p);
            [r, r * z, r * z * z]
        })
        .collect()
}

/// All roots of Σ a_k z^k (coefficients in ascending order), via
/// Durand-Kerner followed by Newton polishing.
pub fn polynomial_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut a: Vec<Complex64> = coeffs.to_vec();
    while matches!(a.last(), Some(x) if x.norm() == 0.0) {
        a.pop();
    }
    let n = a.len().saturating_sub(1);
    if n == 0 {
        return Vec::new();
    }
    let lead = a[n];
    let monic: Vec<Complex64> = a.iter().map(|x| x / lead).collect();
    let bound = 1.0 + monic[..n].iter().map(|x| x.norm()).fold(0.0, f64::max);
    let eval = |z: Complex64| monic.iter().rev().fold(c(0.0), |acc, x| acc * z + x);
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..n).map(|k| seed.powi(k as i32) * bound.min(10.0)).collect();
    for _ in 0..2000 {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let mut den = c(1.0);
            for j in 0..n {
                if i != j {
                    den *= roots[i] - roots[j];
                }
            }
            if den.norm() == 0.0 {
                den = c(1e-12);
            }
            let step = eval(roots[i]) / den;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 * bound {
            break;
        }
    }
    let deriv: Vec<Complex64> = monic
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, x)| x * k as f64)
        .collect();
    let eval_d = |z: Complex64| deriv.iter().rev().fold(c(0.0), |acc, x| acc * z + x);
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let d = eval_d(*r);
            if d.norm() == 0.0 {
                break;
            }
            *r -= eval(*r) / d;
        }
    }
    roots
}

/// The nine ramification points with local series to exponent `order`.
pub fn ramification_points(m: &ModuliPoint, order: usize) -> Result<Vec<RamPoint>> {
    let q = m.q;
    if framing_locus().iter().any(|r| (q - r).norm() < EXCLUSION_RADIUS) {
        return Err(Error::DegenerateFramingLocus { q });
    }
    let cubes = y_cubes(q)?;
    let z3 = zeta3();
    let mut labels = Vec::with_capacity(9);
    for (jdx, w) in cubes.iter().enumerate() {
        let yj = cbrt(*w);
        for k in 0..3 {
            labels.push((k, jdx + 1, yj * z3.powi(k as i32)));
        }
    }
    labels
        .par_iter()
        .map(|&(k, j, y)| build_point(m, k, j, y, order))
        .collect()
}

fn build_point(m: &ModuliPoint, k: usize, j: usize, y_r: Complex64, order: usize) -> Result<RamPoint> {
    let q = m.q;
    let x_r = -(1.0 + 2.0 * y_r.powi(3)) / q;
    let index = 3 * (j - 1) + k;
    let cp = m.inverse_uniformize(x_r, y_r).map_err(|e| {
        Error::BranchResolution(format!("inverse map failed at point {index}: {e}"))
    })?;
    let fwd = m.uniformize(cp.u)?;
    let gate = (fwd.x_big - x_r).norm().max((fwd.y_big - y_r).norm());
    if gate > 1e-7 * (1.0 + x_r.norm() + y_r.norm()) {
        return Err(Error::BranchResolution(format!(
            "forward gate failed at point {index}: |Δ| = {gate:e}"
        )));
    }
    // Polish u_r as the critical point of X(u): Newton on X'(u) = 0.
    let mut u_r = cp.u;
    for _ in 0..6 {
        let local = m.curve_series(u_r, 4)?;
        let (x1, x2) = (local.x.coeff(1).unwrap_or_default(), local.x.coeff(2).unwrap_or_default());
        if x2.norm() == 0.0 {
            break;
        }
        let step = -x1 / (2.0 * x2);
        u_r += step;
        if step.norm() < 1e-16 {
            break;
        }
    }
    let ser = m.curve_series(u_r, order)?;
    let y_lin = ser.y.coeff(1).unwrap_or_default();
    if y_lin.norm() < 1e-8 {
        return Err(Error::InvolutionBranch { index });
    }
    let rho = local_scale(&ser.y).min(local_scale(
        &ser.x.sub(&CSeries::constant(x_r)).shift(-1),
    ));
    let sigma_computed = involution_series(m, &ser.x, &ser.y, y_r, index)?;
    let reflection = reflection_holds(m, u_r, x_r, 0.25 * rho)?;
    let sigma = if reflection && sigma_matches_reflection(&sigma_computed, rho) {
        CSeries::variable().neg().truncated(sigma_computed.trunc())
    } else {
        sigma_computed.clone()
    };
    let mut lam_diff = lambda_diff_series(m, &ser.x, &ser.y)?;
    if sigma != sigma_computed {
        lam_diff = even_part(&lam_diff);
    }
    Ok(RamPoint {
        k,
        j,
        x_r,
        y_r,
        u_r,
        x_of_u: ser.x,
        y_of_u: ser.y.sub(&CSeries::constant(y_r)),
        sigma,
        sigma_computed,
        reflection,
        lam_diff,
        rho,
    })
}

fn even_part(f: &CSeries) -> CSeries {
    let coeffs = f
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, v)| if (f.min_exp() + i as i32) % 2 == 0 { *v } else { Complex64::default() })
        .collect();
    CSeries::new(f.min_exp(), coeffs, f.trunc())
}

/// Pointwise test of X(u_r + s) = X(u_r − s) on |s| = radius.
fn reflection_holds(m: &ModuliPoint, u_r: Complex64, x_r: Complex64, radius: f64) -> Result<bool> {
    let mut worst: f64 = 0.0;
    for i in 0..8 {
        let s = Complex64::from_polar(radius, 0.3 + i as f64 * std::f64::consts::FRAC_PI_4);
        let plus = m.uniformize(u_r + s)?.x_big;
        let minus = m.uniformize(u_r - s)?.x_big;
        worst = worst.max((plus - minus).norm() / (plus - x_r).norm().max(1e-300));
    }
    Ok(worst < 1e-9)
}

/// Low-order agreement of the computed σ with −s. High orders are left to
/// the pointwise test: their roundoff grows faster than ρ^{−e} where the
/// nearest lattice point is much closer than the nearest branch point.
fn sigma_matches_reflection(sigma: &CSeries, rho: f64) -> bool {
    let minus_s = CSeries::variable().neg().truncated(sigma.trunc());
    let d = sigma.sub(&minus_s);
    (0..sigma.trunc().min(8)).all(|e| {
        d.coeff(e).map_or(true, |c| c.norm() * rho.powi(e - 1) < 1e-8)
    })
}

/// Coefficient scale ρ of a local expansion: min over e ≥ 2 of
/// |f₁/f_e|^{1/(e−1)}, capped at 1. Coefficient e of a derived series is
/// compared after multiplying by ρ^{e−1}, which removes the geometric growth
/// set by the nearest singularity.
pub fn local_scale(f: &CSeries) -> f64 {
    let f1 = f.coeff(1).unwrap_or_default().norm();
    if f1 == 0.0 {
        return 1.0;
    }
    (2..f.trunc())
        .filter_map(|e| f.coeff(e).map(|c| (e, c.norm())))
        .filter(|(_, n)| *n > 0.0)
        .map(|(e, n)| (f1 / n).powf(1.0 / (e - 1) as f64))
        .fold(1.0, f64::min)
}

/// σ(s) = u(Y*(s)) − u_r, with Y* the cube root of −Y³ − 1 − qX through Y_r.
pub fn involution_series(
    m: &ModuliPoint,
    xs: &CSeries,
    ys: &CSeries,
    y_r: Complex64,
    index: usize,
) -> Result<CSeries> {
    let y3 = ys.mul(ys).mul(ys);
    let w = y3.add(&CSeries::constant(c(1.0))).add(&xs.scale(m.q)).neg();
    let w0 = w.coeff(0).unwrap_or_default();
    let yr3 = y_r.powi(3);
    if (w0 - yr3).norm() > 1e-8 * (1.0 + yr3.norm()) {
        return Err(Error::InvolutionBranch { index });
    }
    // Y* = Y_r (W / Y_r³)^{1/3}, principal branch of the unit series.
    let unit = w.scale(yr3.inv()).sub(&CSeries::one());
    let unit = crate::curve::chop(&unit, 1e-13);
    let unit = if unit.min_exp() < 1 {
        unit.strip_leading((1 - unit.min_exp()) as usize, 1e-9)?
    } else {
        unit
    };
    let ystar = unit.pow1p(1.0 / 3.0)?.scale(y_r).sub(&CSeries::constant(y_r));
    let ystar = ystar.strip_leading((1 - ystar.min_exp()).max(0) as usize, 1e-9)?;
    let f = ys.sub(&CSeries::constant(y_r));
    let f = f.strip_leading((1 - f.min_exp()).max(0) as usize, 1e-9)?;
    let g = f.invert_composition()?;
    g.compose(&ystar)
}

/// (λ − λ*)/ds = (2/3)·artanh((2Y³+1+qX)/(−1−qX))·X′/X.
pub fn lambda_diff_series(m: &ModuliPoint, xs: &CSeries, ys: &CSeries) -> Result<CSeries> {
    let q = m.q;
    let one = CSeries::one();
    let y3 = ys.mul(ys).mul(ys);
    let qx = xs.scale(q);
    let num = y3.scale(c(2.0)).add(&one).add(&qx);
    let den = one.add(&qx).neg();
    let w = num.div(&den)?;
    let w = w.strip_leading((1 - w.min_exp()).max(0) as usize, 1e-9 * (1.0 + xs.max_magnitude()).min(1e3))?;
    let at = w.atanh()?;
    let dlog = xs.derivative().div(xs)?;
    let lam = at.mul(&dlog).scale(c(2.0 / 3.0));
    let lam = crate::curve::chop(&lam, 1e-12 * lam.max_magnitude().min(1e6));
    Ok(lam)
}
