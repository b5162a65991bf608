//! The mirror curve X³ + Y³ + Y⁶ + qXY³ = 0, its modular parametrization
//! and the ℘-uniformization.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::elliptic::{dedekind_eta, Lattice, QuasiPeriods, TauPoint};
use crate::error::{Error, Result};
use crate::series::CSeries;

/// Radius in q-space around singular fibers that is treated as degenerate.
pub const EXCLUSION_RADIUS: f64 = 1e-6;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// 4^{1/3}
pub fn cbrt4() -> f64 {
    4f64.cbrt()
}

/// Principal complex cube root.
pub fn cbrt(z: Complex64) -> Complex64 {
    if z.norm() == 0.0 {
        return z;
    }
    Complex64::from_polar(z.norm().cbrt(), z.arg() / 3.0)
}

/// Primitive cube root of unity e^{2πi/3}.
pub fn zeta3() -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI / 3.0)
}

/// Everything derived from τ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuliPoint {
    pub lattice: Lattice,
    pub q: Complex64,
    pub kappa: Complex64,
    /// j from the Weierstrass invariants.
    pub j: Complex64,
    /// j from the rational formula in q.
    pub j_rational: Complex64,
}

/// g₃ in its polynomial normalization, without the κ⁶ factor.
pub fn g3_polynomial(q: Complex64) -> Complex64 {
    -2.0 / 27.0 * q.powi(6) - 40.0 * q.powi(3) + 432.0
}

/// Hauptmodul value q(τ) = −(27 + η(τ)¹²/η(3τ)¹²)^{1/3}, principal root.
pub fn hauptmodul(t: &TauPoint) -> Result<Complex64> {
    let t3 = TauPoint::new(3.0 * t.tau())?;
    let ratio = (dedekind_eta(t) / dedekind_eta(&t3)).powi(12);
    Ok(-cbrt(c(27.0) + ratio))
}

/// j(q) = −q³(q³ − 216)³ / (27 + q³)³.
pub fn j_rational(q: Complex64) -> Complex64 {
    let q3 = q.powi(3);
    -q3 * (q3 - 216.0).powi(3) / (q3 + 27.0).powi(3)
}

fn near_any(q: Complex64, roots: &[Complex64]) -> bool {
    roots.iter().any(|r| (q - r).norm() < EXCLUSION_RADIUS)
}

impl ModuliPoint {
    pub fn from_tau(tau: Complex64) -> Result<Self> {
        Self::new(TauPoint::new(tau)?)
    }

    pub fn new(t: TauPoint) -> Result<Self> {
        let q = hauptmodul(&t)?;
        let z3 = zeta3();
        let fiber_roots = [c(-3.0), c(-3.0) * z3, c(-3.0) * z3 * z3];
        if near_any(q, &fiber_roots) || !q.is_finite() {
            return Err(Error::DegenerateFiber { q });
        }
        let kappa_roots = [c(0.0), c(6.0), c(6.0) * z3, c(6.0) * z3 * z3];
        if near_any(q, &kappa_roots) {
            return Err(Error::KappaSingularity { q });
        }
        let lattice = Lattice::new(t)?;
        let kappa4 = 4.0 * PI.powi(4) * lattice.e4 / (cbrt4() * q * (q.powi(3) - 216.0));
        // κ² is the square root of κ⁴ for which κ⁶·g₃(q) reproduces the
        // Eisenstein g₃; the other sign flips g₃ and breaks the uniformization.
        let g3p = g3_polynomial(q);
        let r = kappa4.sqrt();
        let kappa2 = if (r * kappa4 * g3p - lattice.g3).norm() <= (-r * kappa4 * g3p - lattice.g3).norm() {
            r
        } else {
            -r
        };
        let kappa = kappa2.sqrt();
        let g2 = lattice.g2;
        let g3 = lattice.g3;
        let j = 1728.0 * g2.powi(3) / (g2.powi(3) - 27.0 * g3 * g3);
        Ok(ModuliPoint {
            j,
            j_rational: j_rational(q),
            lattice,
            q,
            kappa,
        })
    }

    pub fn tau(&self) -> Complex64 {
        self.lattice.tau.tau()
    }

    pub fn g2(&self) -> Complex64 {
        self.lattice.g2
    }

    pub fn g3(&self) -> Complex64 {
        self.lattice.g3
    }

    pub fn quasi(&self) -> QuasiPeriods {
        self.lattice.quasi
    }

    /// ε = π / Im τ.
    pub fn eps(&self) -> f64 {
        self.lattice.tau.eps()
    }

    /// g₂ from the q-polynomial: (κ⁴·4^{1/3}/3)(q⁴ − 216q).
    pub fn g2_polynomial(&self) -> Complex64 {
        self.kappa.powi(4) * cbrt4() / 3.0 * (self.q.powi(4) - 216.0 * self.q)
    }

    /// g₃ from the q-polynomial with the κ⁶ factor.
    pub fn g3_scaled(&self) -> Complex64 {
        self.kappa.powi(6) * g3_polynomial(self.q)
    }

    /// Relative disagreement of the two j computations.
    pub fn j_mismatch(&self) -> f64 {
        (self.j - self.j_rational).norm() / self.j.norm().max(1.0)
    }

    /// H(X, Y).
    pub fn h(&self, x: Complex64, y: Complex64) -> Complex64 {
        x.powi(3) + y.powi(3) + y.powi(6) + self.q * x * y.powi(3)
    }

    /// |H(X,Y)| scaled by max(1, |X|³, |Y|⁶).
    pub fn curve_residual(&self, x: Complex64, y: Complex64) -> f64 {
        let scale = 1f64.max(x.norm().powi(3)).max(y.norm().powi(6));
        self.h(x, y).norm() / scale
    }

    /// Curve point for the Abel-Jacobi coordinate `u`.
    pub fn uniformize(&self, u: Complex64) -> Result<CurvePoint> {
        let (uu, vv) = self.lattice.wp_pair(u)?;
        let (x, y) = self.forward_map(uu, vv).map_err(|e| match e {
            Error::ParametrizationSingularity { .. } => Error::ParametrizationSingularity { u },
            other => other,
        })?;
        Ok(CurvePoint {
            x_big: x * y,
            y_big: y,
            x,
            y,
            u_w: uu,
            v_w: vv,
            u,
        })
    }

    /// (U, V) ↦ (x, y) on the Hesse form x³ + 1 + y³ + qxy = 0.
    pub fn forward_map(&self, uu: Complex64, vv: Complex64) -> Result<(Complex64, Complex64)> {
        let q = self.q;
        let c4 = cbrt4();
        let ki2 = self.kappa.powi(-2);
        let ki3 = self.kappa.powi(-3);
        let a = c4 * ki2 * uu;
        let den = a + q * q;
        if den.norm() < 1e-12 * (a.norm() + (q * q).norm()) {
            return Err(Error::ParametrizationSingularity { u: Complex64::default() });
        }
        let t = (-12.0 - q.powi(3) / 9.0 + c4 / 3.0 * q * ki2 * uu) / den;
        let t3 = c(1.0) + t.powi(3);
        if t3.norm() < 1e-12 {
            return Err(Error::ParametrizationSingularity { u: Complex64::default() });
        }
        let f = 27.0 + q.powi(3);
        let a = 3.0 * t - q;
        let x = a * (-4.0 * f * t + ki3 * vv * a) / (-8.0 * f * t3);
        Ok((x, t * x - 1.0))
    }

    /// Inverse map (X, Y) ↦ (U, V, u).
    pub fn inverse_uniformize(&self, x_big: Complex64, y_big: Complex64) -> Result<CurvePoint> {
        if self.curve_residual(x_big, y_big) > 1e-8 {
            return Err(Error::Domain(format!(
                "({x_big}, {y_big}) is not on the curve"
            )));
        }
        if y_big.norm() < 1e-300 {
            return Err(Error::Domain("Y = 0 has no affine Hesse image".into()));
        }
        let (uu, vv) = self.inverse_map(x_big, y_big)?;
        let u = self.lattice.elliptic_log(uu, vv)?;
        Ok(CurvePoint {
            x_big,
            y_big,
            x: x_big / y_big,
            y: y_big,
            u_w: uu,
            v_w: vv,
            u,
        })
    }

    /// Rational part of the inverse map: (X, Y) ↦ (U, V).
    pub fn inverse_map(&self, x_big: Complex64, y_big: Complex64) -> Result<(Complex64, Complex64)> {
        let q = self.q;
        let x = x_big / y_big;
        let y = y_big;
        let den = 3.0 * y + 3.0 - q * x;
        if den.norm() < 1e-10 {
            return Err(Error::NearOpenPoint { x: x_big, y: y_big });
        }
        let k = self.kappa;
        let uu = -k * k / 3.0 * (108.0 * x + q.powi(3) * x + 9.0 * q * q * y + 9.0 * q * q)
            / (cbrt4() * den);
        let vv = -4.0 * (q.powi(3) + 27.0) * k.powi(3) * (3.0 * y * y - q * x * y + q * x - 3.0)
            / (den * den);
        Ok((uu, vv))
    }

    /// The six roots Y of Y⁶ + (1+qX)Y³ + X³ = 0.
    ///
    /// With `base`, roots are matched greedily to the nearest base value;
    /// otherwise they are sorted by (Re, Im).
    pub fn y_branches(&self, x: Complex64, base: Option<&[Complex64]>) -> Vec<Complex64> {
        let b = c(1.0) + self.q * x;
        let disc = (b * b - 4.0 * x.powi(3)).sqrt();
        let z3 = zeta3();
        let mut roots = Vec::with_capacity(6);
        for w in [(-b + disc) / 2.0, (-b - disc) / 2.0] {
            let r = cbrt(w);
            roots.extend([r, r * z3, r * z3 * z3]);
        }
        match base {
            Some(base) if base.len() == 6 => {
                let mut out = vec![Complex64::default(); 6];
                let mut used = [false; 6];
                for (i, bv) in base.iter().enumerate() {
                    let (k, _) = roots
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| !used[*k])
                        .map(|(k, r)| (k, (r - bv).norm()))
                        .fold((usize::MAX, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
                    used[k] = true;
                    out[i] = roots[k];
                }
                out
            }
            _ => {
                roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
                roots
            }
        }
    }

    /// Local expansions X(u0 + s), Y(u0 + s) with exponents below `order`.
    ///
    /// `u0` may be a lattice point; there the Laurent expansion of ℘ is used.
    pub fn curve_series(&self, u0: Complex64, order: usize) -> Result<CurveSeries> {
        let work = order as i32 + 8;
        let (uu, vv) = self.wp_series(u0, work)?;
        let q = self.q;
        let c4 = cbrt4();
        let ki2 = self.kappa.powi(-2);
        let ki3 = self.kappa.powi(-3);
        let one = CSeries::one();
        let num_t = uu.scale(c4 / 3.0 * q * ki2).add(&CSeries::constant(-12.0 - q.powi(3) / 9.0));
        let den_t = uu.scale(c4 * ki2).add(&CSeries::constant(q * q));
        let den_t = chop(&den_t, 1e-13 * (q * q).norm().max(1.0));
        let t = num_t.div(&den_t).map_err(|_| Error::ParametrizationSingularity { u: u0 })?;
        let t_reg = t.truncated(work);
        let a = chop(&t_reg.scale(c(3.0)).sub(&CSeries::constant(q)), 1e-13 * (1.0 + q.norm()));
        let f = 27.0 + q.powi(3);
        let b = t_reg.scale(-4.0 * f).add(&vv.mul(&a).scale(ki3));
        let t3 = one.add(&t_reg.mul(&t_reg).mul(&t_reg)).scale(-8.0 * f);
        let x = a.mul(&b).div(&t3).map_err(|_| Error::ParametrizationSingularity { u: u0 })?;
        let y = t_reg.mul(&x).sub(&one);
        let xb = x.mul(&y);
        let trunc = order as i32;
        Ok(CurveSeries {
            x: clean_power_series(&xb, trunc)?,
            y: clean_power_series(&y, trunc)?,
        })
    }

    /// ℘(u0 + s) and ℘′(u0 + s) as series with exponents below `trunc`.
    pub fn wp_series(&self, u0: Complex64, trunc: i32) -> Result<(CSeries, CSeries)> {
        let (r, _, _) = self.lattice.reduce(u0);
        if r.norm() < 1e-9 {
            let p = self.lattice.wp_laurent(trunc + 1);
            let dp = p.derivative();
            return Ok((p.truncated(trunc), dp));
        }
        let coeffs = self.lattice.wp_taylor(u0, (trunc + 1).max(1) as usize)?;
        let p = CSeries::new(0, coeffs, trunc + 1);
        let dp = p.derivative();
        Ok((p.truncated(trunc), dp))
    }
}

/// Drops leading coefficients of magnitude at most `tol` (cancellation noise).
pub(crate) fn chop(s: &CSeries, tol: f64) -> CSeries {
    let n = s.coeffs().iter().take_while(|c| c.norm() <= tol).count();
    let n = n.min(s.coeffs().len().saturating_sub(1));
    s.strip_leading(n, tol).expect("chop only strips small coefficients")
}

fn clean_power_series(s: &CSeries, trunc: i32) -> Result<CSeries> {
    let scale = (0..=2)
        .filter_map(|e| s.coeff(e))
        .map(|c| c.norm())
        .fold(1.0, f64::max);
    let tol = 1e-10 * scale;
    let neg = s.coeffs().iter().take((-s.min_exp()).max(0) as usize).count();
    let s = s.strip_leading(neg, tol).map_err(|e| {
        Error::Numeric(format!("expected a regular curve expansion: {e}"))
    })?;
    Ok(s.truncated(trunc))
}

/// Local expansions of X and Y in s = u − u0.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSeries {
    pub x: CSeries,
    pub y: CSeries,
}

/// A point of the curve in all coordinate systems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(rename = "X")]
    pub x_big: Complex64,
    #[serde(rename = "Y")]
    pub y_big: Complex64,
    pub x: Complex64,
    pub y: Complex64,
    #[serde(rename = "U")]
    pub u_w: Complex64,
    #[serde(rename = "V")]
    pub v_w: Complex64,
    pub u: Complex64,
}
