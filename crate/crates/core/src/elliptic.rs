//! Modular and elliptic special functions for the lattice ℤ ⊕ τℤ.
//!
//! Everything is evaluated from q-expansions in the nome `e^{2πiτ}`.
//! Eisenstein series use the normalization `E_k(i∞) = 1`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::CSeries;

const I: Complex64 = Complex64::new(0.0, 1.0);
const REL_TOL: f64 = 1e-17;
const MAX_TERMS: usize = 20_000;

/// Distance to a lattice point below which ℘ and ζ report a pole.
pub const POLE_GUARD: f64 = 1e-12;

/// Highest derivative order served by [`Lattice::wp`].
pub const MAX_DERIVATIVE: usize = 48;

/// Additive constant in `E₂(γτ) = (cτ+d)² E₂(τ) + E2_ANOMALY · c(cτ+d)`.
///
/// Equals `6/(πi) = -6i/π`; fixed by fitting the defect at several τ
/// (see the `e2_anomaly_constant` test).
pub const E2_ANOMALY: Complex64 = Complex64::new(0.0, -6.0 / PI);

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// A point of the upper half plane together with its nome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauPoint {
    tau: Complex64,
    nome: Complex64,
}

impl TauPoint {
    pub fn new(tau: Complex64) -> Result<Self> {
        if !(tau.im > 0.0) || !tau.re.is_finite() || !tau.im.is_finite() {
            return Err(Error::Domain(format!("Im tau must be positive, got {tau}")));
        }
        let nome = (2.0 * PI * I * tau).exp();
        if nome.norm() >= 1.0 - 1e-12 {
            return Err(Error::Domain(format!(
                "nome |q| = {} too close to 1 for convergence",
                nome.norm()
            )));
        }
        Ok(TauPoint { tau, nome })
    }

    pub fn tau(&self) -> Complex64 {
        self.tau
    }

    pub fn nome(&self) -> Complex64 {
        self.nome
    }

    /// ε = π / Im τ, the anti-holomorphic correction.
    pub fn eps(&self) -> f64 {
        PI / self.tau.im
    }
}

/// Dedekind η(τ) = e^{πiτ/12} ∏ (1 − qⁿ).
pub fn dedekind_eta(t: &TauPoint) -> Complex64 {
    let q = t.nome;
    let mut prod = c(1.0);
    let mut qn = q;
    for _ in 0..MAX_TERMS {
        prod *= c(1.0) - qn;
        if qn.norm() < REL_TOL * prod.norm() {
            break;
        }
        qn *= q;
    }
    (PI * I * t.tau / 12.0).exp() * prod
}

/// Eisenstein series E₂, E₄ or E₆ from the Lambert series of σ_{k−1}.
pub fn eisenstein(k: u32, t: &TauPoint) -> Result<Complex64> {
    let pref = match k {
        2 => -24.0,
        4 => 240.0,
        6 => -504.0,
        _ => return Err(Error::Domain(format!("no Eisenstein series of weight {k}"))),
    };
    let q = t.nome;
    let mut sum = Complex64::default();
    let mut qn = c(1.0);
    for n in 1..MAX_TERMS {
        qn *= q;
        let term = (n as f64).powi(k as i32 - 1) * qn / (c(1.0) - qn);
        sum += term;
        if term.norm() < REL_TOL * sum.norm().max(1e-300) && qn.norm() < 1e-17 {
            break;
        }
    }
    Ok(c(1.0) + pref * sum)
}

/// Quasi-periods of ζ for ℤ ⊕ τℤ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiPeriods {
    /// η₁ = π² E₂ / 3 = ζ(z+1) − ζ(z).
    pub eta1: Complex64,
    /// η̂₁ = η₁ − π / Im τ.
    pub eta1_hat: Complex64,
}

/// Per-τ elliptic data: Eisenstein values, invariants and quasi-periods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub tau: TauPoint,
    pub e2: Complex64,
    pub e4: Complex64,
    pub e6: Complex64,
    pub g2: Complex64,
    pub g3: Complex64,
    pub quasi: QuasiPeriods,
}

impl Lattice {
    pub fn new(tau: TauPoint) -> Result<Self> {
        let e2 = eisenstein(2, &tau)?;
        let e4 = eisenstein(4, &tau)?;
        let e6 = eisenstein(6, &tau)?;
        let g2 = 4.0 * PI.powi(4) / 3.0 * e4;
        let g3 = 8.0 * PI.powi(6) / 27.0 * e6;
        let eta1 = PI * PI * e2 / 3.0;
        Ok(Lattice {
            tau,
            e2,
            e4,
            e6,
            g2,
            g3,
            quasi: QuasiPeriods {
                eta1,
                eta1_hat: eta1 - tau.eps(),
            },
        })
    }

    pub fn from_tau(tau: Complex64) -> Result<Self> {
        Self::new(TauPoint::new(tau)?)
    }

    /// η₂ = ζ(z+τ) − ζ(z), from the Legendre relation.
    pub fn eta2(&self) -> Complex64 {
        self.tau.tau * self.quasi.eta1 - 2.0 * PI * I
    }

    /// Writes `z = z0 + m + nτ` with `z0` in the centered cell.
    pub fn reduce(&self, z: Complex64) -> (Complex64, i64, i64) {
        let tau = self.tau.tau;
        let n = (z.im / tau.im).round();
        let z1 = z - n * tau;
        let m = z1.re.round();
        (z1 - m, m as i64, n as i64)
    }

    fn pole_check(&self, z: Complex64) -> Result<(Complex64, i64, i64)> {
        let (z0, m, n) = self.reduce(z);
        let tau = self.tau.tau;
        for dm in -1..=1 {
            for dn in -1..=1 {
                let p = c(dm as f64) + dn as f64 * tau;
                if (z0 - p).norm() < POLE_GUARD {
                    let nearest = c((m + dm) as f64) + (n + dn) as f64 * tau;
                    return Err(Error::Pole { nearest });
                }
            }
        }
        Ok((z0, m, n))
    }

    /// ℘ and ℘′ at `z`.
    pub fn wp_pair(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        let (z0, _, _) = self.pole_check(z)?;
        let ct = cot_pi(z0);
        let csc2 = c(1.0) + ct * ct;
        let mut p = PI * PI * csc2 - self.quasi.eta1;
        let mut dp = -2.0 * PI.powi(3) * ct * csc2;
        let q = self.tau.nome;
        let ep = (2.0 * PI * I * z0).exp();
        let em = ep.inv();
        let (mut qk, mut epk, mut emk) = (c(1.0), c(1.0), c(1.0));
        let (mut s0, mut s1) = (Complex64::default(), Complex64::default());
        for k in 1..MAX_TERMS {
            qk *= q;
            epk *= ep;
            emk *= em;
            let lam = qk / (c(1.0) - qk);
            let kf = k as f64;
            let t0 = kf * (epk + emk) * lam;
            let t1 = kf * kf * (epk - emk) * lam;
            s0 += t0;
            s1 += t1;
            let bound = (epk.norm() + emk.norm()) * qk.norm() * kf * kf;
            if bound < REL_TOL * (1.0 + s0.norm() + s1.norm()) && k > 2 {
                break;
            }
        }
        p -= 4.0 * PI * PI * s0;
        dp -= 4.0 * PI * PI * (2.0 * PI * I) * s1;
        Ok((p, dp))
    }

    /// ℘^{(m)}(z).
    pub fn wp(&self, z: Complex64, m: usize) -> Result<Complex64> {
        if m > MAX_DERIVATIVE {
            return Err(Error::Domain(format!(
                "derivative order {m} exceeds maximum {MAX_DERIVATIVE}"
            )));
        }
        let (p, dp) = self.wp_pair(z)?;
        match m {
            0 => Ok(p),
            1 => Ok(dp),
            _ => {
                let t = self.taylor_from(p, dp, m + 1);
                Ok(t[m] * factorial(m))
            }
        }
    }

    /// Values ℘^{(0)}(z) … ℘^{(mmax)}(z).
    pub fn wp_derivatives(&self, z: Complex64, mmax: usize) -> Result<Vec<Complex64>> {
        let (p, dp) = self.wp_pair(z)?;
        let t = self.taylor_from(p, dp, mmax + 1);
        Ok(t.iter()
            .enumerate()
            .map(|(k, ck)| ck * factorial(k))
            .collect())
    }

    /// Taylor coefficients `c_k` of ℘(a + s) = Σ c_k s^k for `k < len`.
    pub fn wp_taylor(&self, a: Complex64, len: usize) -> Result<Vec<Complex64>> {
        let (p, dp) = self.wp_pair(a)?;
        Ok(self.taylor_from(p, dp, len))
    }

    /// Taylor coefficients from ℘, ℘′ via ℘″ = 6℘² − g₂/2.
    fn taylor_from(&self, p: Complex64, dp: Complex64, len: usize) -> Vec<Complex64> {
        let mut cs = vec![Complex64::default(); len.max(2)];
        cs[0] = p;
        cs[1] = dp;
        for k in 0..len.saturating_sub(2) {
            let mut conv = Complex64::default();
            for i in 0..=k {
                conv += cs[i] * cs[k - i];
            }
            let mut rhs = 6.0 * conv;
            if k == 0 {
                rhs -= self.g2 / 2.0;
            }
            cs[k + 2] = rhs / ((k + 2) * (k + 1)) as f64;
        }
        cs.truncate(len);
        cs
    }

    /// Laurent expansion ℘(s) = s⁻² + Σ b_k s^{2k} at the origin, exponents below `trunc`.
    pub fn wp_laurent(&self, trunc: i32) -> CSeries {
        let kmax = ((trunc.max(0) as usize) / 2) + 1;
        let mut b = vec![Complex64::default(); kmax + 1];
        if kmax >= 1 {
            b[1] = self.g2 / 20.0;
        }
        if kmax >= 2 {
            b[2] = self.g3 / 28.0;
        }
        for k in 3..=kmax {
            let mut acc = Complex64::default();
            for m in 1..=k - 2 {
                acc += b[m] * b[k - 1 - m];
            }
            b[k] = 3.0 / ((2 * k + 3) as f64 * (k - 2) as f64) * acc;
        }
        let len = (trunc + 2).max(0) as usize;
        let mut coeffs = vec![Complex64::default(); len];
        if len > 0 {
            coeffs[0] = c(1.0);
        }
        for (k, bk) in b.iter().enumerate().skip(1) {
            let idx = 2 * k + 2;
            if idx < len {
                coeffs[idx] = *bk;
            }
        }
        CSeries::new(-2, coeffs, trunc)
    }

    /// Weierstrass ζ(z), with ζ′ = −℘.
    pub fn wzeta(&self, z: Complex64) -> Result<Complex64> {
        let (z0, m, n) = self.pole_check(z)?;
        let q = self.tau.nome;
        let ep = (2.0 * PI * I * z0).exp();
        let em = ep.inv();
        let (mut qk, mut epk, mut emk) = (c(1.0), c(1.0), c(1.0));
        let mut s = Complex64::default();
        for k in 1..MAX_TERMS {
            qk *= q;
            epk *= ep;
            emk *= em;
            let sin = (epk - emk) / (2.0 * I);
            let t = sin * qk / (c(1.0) - qk);
            s += t;
            if (epk.norm() + emk.norm()) * qk.norm() < REL_TOL * (1.0 + s.norm()) && k > 2 {
                break;
            }
        }
        let z0v = self.quasi.eta1 * z0 + PI * cot_pi(z0) + 4.0 * PI * s;
        Ok(z0v + m as f64 * self.quasi.eta1 + n as f64 * self.eta2())
    }

    /// Inverse of u ↦ (℘(u), ℘′(u)); the result lies in the centered cell.
    pub fn elliptic_log(&self, u_val: Complex64, v_val: Complex64) -> Result<Complex64> {
        let rhs = 4.0 * u_val.powi(3) - self.g2 * u_val - self.g3;
        let scale = 1f64.max(u_val.norm().powi(3)).max(v_val.norm_sqr());
        if (v_val * v_val - rhs).norm() > 1e-8 * scale {
            return Err(Error::Domain(format!(
                "({u_val}, {v_val}) is not on the Weierstrass cubic"
            )));
        }
        let tau = self.tau.tau;
        let mut u = if u_val.norm() > 1e3 {
            let r = u_val.sqrt().inv();
            let lead = |x: Complex64| -2.0 / x.powi(3);
            if (lead(r) - v_val).norm() <= (lead(-r) - v_val).norm() {
                r
            } else {
                -r
            }
        } else {
            const GRID: usize = 24;
            let mut best = (f64::INFINITY, Complex64::default());
            for i in 0..GRID {
                for j in 0..GRID {
                    let a = (i as f64 + 0.5) / GRID as f64 - 0.5;
                    let b = (j as f64 + 0.5) / GRID as f64 - 0.5;
                    let z = c(a) + b * tau;
                    if let Ok((p, _)) = self.wp_pair(z) {
                        let d = (p - u_val).norm();
                        if d < best.0 {
                            best = (d, z);
                        }
                    }
                }
            }
            best.1
        };

        // Newton on ℘(u) = U.
        for _ in 0..100 {
            let (p, dp) = self.wp_pair(u)?;
            if dp.norm() == 0.0 {
                break;
            }
            let step = (p - u_val) / dp;
            u -= step;
            if step.norm() < 1e-15 * (1.0 + u.norm()) || (p - u_val).norm() < 1e-15 * (1.0 + u_val.norm()) {
                break;
            }
        }
        // ℘ is even; pick the preimage with the right ℘′.
        let (_, dp_plus) = self.wp_pair(u)?;
        if (dp_plus - v_val).norm() > (-dp_plus - v_val).norm() {
            u = -u;
        }
        // Gauss-Newton on (℘ − U, ℘′ − V): well conditioned at half-periods too.
        let mut converged = false;
        for _ in 0..100 {
            let (p, dp) = self.wp_pair(u)?;
            let ddp = 6.0 * p * p - self.g2 / 2.0;
            let (r1, r2) = (p - u_val, dp - v_val);
            let den = dp.norm_sqr() + ddp.norm_sqr();
            if den == 0.0 {
                break;
            }
            let step = (dp.conj() * r1 + ddp.conj() * r2) / den;
            u -= step;
            if step.norm() < 1e-15 * (1.0 + u.norm()) {
                converged = true;
                break;
            }
        }
        let (u0, _, _) = self.reduce(u);
        let (p, dp) = self.wp_pair(u0)?;
        let ok = (p - u_val).norm() <= 1e-7 * (1.0 + u_val.norm())
            && (dp - v_val).norm() <= 1e-7 * (1.0 + v_val.norm());
        if !ok {
            return Err(Error::Numeric(format!(
                "elliptic log did not converge (converged step: {converged}, residuals {:e}, {:e})",
                (p - u_val).norm(),
                (dp - v_val).norm()
            )));
        }
        Ok(u0)
    }
}

fn cot_pi(z: Complex64) -> Complex64 {
    if z.im >= 0.0 {
        let w = (2.0 * PI * I * z).exp();
        I * (w + 1.0) / (w - 1.0)
    } else {
        let w = (-2.0 * PI * I * z).exp();
        -I * (w + 1.0) / (w - 1.0)
    }
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}
