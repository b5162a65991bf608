//! Topological recursion on the mirror curve.
//!
//! Every ω_{g,n} with 2g−2+n > 0 is stored as a polynomial in the anchor
//! basis ℘^{(m)}(u_i − u_r) (plus the constant function) with coefficients
//! polynomial in ε = π/Im τ. The recursion expands each ingredient in the
//! local coordinate s = u_q − u_r at every ramification point and takes
//! residues coefficient-wise, so no multivariate series are ever formed.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curve::ModuliPoint;
use crate::elliptic::{factorial, Lattice};
use crate::error::{Error, Result};
use crate::ramification::{ramification_points, RamPoint};
use crate::series::{CSeries, Coeff, EpsPoly, EpsSeries, LogTerm};

/// Sign convention for the integration path of the kernel numerator. With
/// d⁻¹S = ζ(u₁−u_q) − ζ(u₁−u_{q*}) + η̂₁(u_q−u_{q*}) the worked ω_{0,3}
/// example is reproduced only with the opposite orientation.
const ORIENTATION: f64 = -1.0;

/// Largest supported 2g−2+n by default.
pub const DEFAULT_BUDGET: i32 = 6;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// A basis function: ℘^{(m)}(u − u_r) or the constant 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BasisKey {
    Const,
    P { r: u8, m: u16 },
}

impl BasisKey {
    pub fn p(r: usize, m: usize) -> Self {
        BasisKey::P {
            r: r as u8,
            m: m as u16,
        }
    }

    /// Pole order m + 2 at the anchor, 0 for the constant.
    pub fn pole_order(&self) -> usize {
        match self {
            BasisKey::Const => 0,
            BasisKey::P { m, .. } => *m as usize + 2,
        }
    }
}

impl std::fmt::Display for BasisKey {
    /// `1` or `P<r>.<m>`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisKey::Const => write!(f, "1"),
            BasisKey::P { r, m } => write!(f, "P{r}.{m}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
enum ConstTag {
    #[serde(rename = "CONST")]
    Const,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AnchorJson {
    Index(u8),
    Const(ConstTag),
}

#[derive(Serialize, Deserialize)]
struct SlotJson {
    r: AnchorJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<u16>,
}

impl Serialize for BasisKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let j = match *self {
            BasisKey::Const => SlotJson {
                r: AnchorJson::Const(ConstTag::Const),
                m: None,
            },
            BasisKey::P { r, m } => SlotJson {
                r: AnchorJson::Index(r),
                m: Some(m),
            },
        };
        j.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BasisKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = SlotJson::deserialize(d)?;
        match j.r {
            AnchorJson::Const(_) => Ok(BasisKey::Const),
            AnchorJson::Index(r) if r < 9 => Ok(BasisKey::P {
                r,
                m: j.m.ok_or_else(|| serde::de::Error::missing_field("m"))?,
            }),
            AnchorJson::Index(r) => Err(serde::de::Error::custom(format!(
                "anchor index {r} out of range"
            ))),
        }
    }
}

/// Which quasi-period enters S(p,q) = ℘(u_p − u_q) + c.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// c = η̂₁ = η₁ − ε; coefficients are polynomials in ε.
    Schiffer,
    /// c = η₁; the holomorphic limit.
    Bergman,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormMeta {
    pub trunc: i32,
    pub fingerprint: String,
    pub kernel: KernelKind,
    /// Largest coefficient mismatch under slot transpositions, measured
    /// before symmetrization.
    pub symmetry_defect: f64,
    pub eps_degree: usize,
}

/// ω_{g,n} in the anchor basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "FormJson", try_from = "FormJson")]
pub struct SymbolicForm {
    pub g: u32,
    pub n: u32,
    pub terms: BTreeMap<Vec<BasisKey>, EpsPoly>,
    pub meta: FormMeta,
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    slots: Vec<BasisKey>,
    coeff: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct FormJson {
    g: u32,
    n: u32,
    terms: Vec<TermJson>,
    meta: FormMeta,
}

impl From<SymbolicForm> for FormJson {
    fn from(f: SymbolicForm) -> Self {
        FormJson {
            g: f.g,
            n: f.n,
            terms: f
                .terms
                .into_iter()
                .map(|(slots, p)| TermJson {
                    slots,
                    coeff: p.coeffs().to_vec(),
                })
                .collect(),
            meta: f.meta,
        }
    }
}

impl TryFrom<FormJson> for SymbolicForm {
    type Error = String;
    fn try_from(j: FormJson) -> std::result::Result<Self, String> {
        let mut terms = BTreeMap::new();
        for t in j.terms {
            if t.slots.len() != j.n as usize {
                return Err(format!("term has {} slots, expected {}", t.slots.len(), j.n));
            }
            terms.insert(t.slots, EpsPoly::new(t.coeff));
        }
        Ok(SymbolicForm {
            g: j.g,
            n: j.n,
            terms,
            meta: j.meta,
        })
    }
}

impl SymbolicForm {
    /// Largest per-slot pole order and largest per-term total pole order.
    pub fn pole_orders(&self) -> (usize, usize) {
        self.terms.keys().fold((0, 0), |(slot, total), keys| {
            let s = keys.iter().map(BasisKey::pole_order).max().unwrap_or(0);
            let t = keys.iter().map(BasisKey::pole_order).sum();
            (slot.max(s), total.max(t))
        })
    }

    pub fn eps_degree(&self) -> usize {
        self.terms
            .values()
            .filter_map(EpsPoly::degree)
            .max()
            .unwrap_or(0)
    }

    /// Coefficients evaluated at a fixed ε.
    pub fn at_eps(&self, eps: Complex64) -> BTreeMap<Vec<BasisKey>, Complex64> {
        self.terms
            .iter()
            .map(|(k, p)| (k.clone(), p.eval(eps)))
            .collect()
    }

    pub fn max_coeff(&self) -> f64 {
        self.terms.values().map(|p| p.magnitude()).fold(0.0, f64::max)
    }

    /// Largest coefficient difference to `other`, relative to the largest
    /// coefficient of either form.
    pub fn distance(&self, other: &SymbolicForm) -> f64 {
        let scale = self.max_coeff().max(other.max_coeff()).max(1e-300);
        let mut worst: f64 = 0.0;
        for key in self.terms.keys().chain(other.terms.keys()) {
            let mut d = self.terms.get(key).cloned().unwrap_or_default();
            d.sub_assign_ref(other.terms.get(key).unwrap_or(&EpsPoly::default()));
            worst = worst.max(d.magnitude());
        }
        worst / scale
    }
}

/// Short stable hash of τ, used to key memo and cache entries.
pub fn moduli_fingerprint(m: &ModuliPoint) -> String {
    let tau = m.tau();
    let text = format!("{:.14e},{:.14e}", tau.re, tau.im);
    Sha256::digest(text.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecursionConfig {
    /// Added to the default series order 6g+2n+8.
    pub trunc_extra: i32,
    /// Maximal ε-degree of any stored coefficient; `None` uses 6g+3n.
    pub eps_cap: Option<usize>,
    pub kernel: KernelKind,
    /// Order in which anchor contributions are summed; defaults to 0..9.
    pub anchor_order: Option<Vec<usize>>,
    /// Largest allowed 2g−2+n.
    pub budget: i32,
}

impl Default for RecursionConfig {
    fn default() -> Self {
        RecursionConfig {
            trunc_extra: 0,
            eps_cap: None,
            kernel: KernelKind::Schiffer,
            anchor_order: None,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl RecursionConfig {
    pub fn trunc_order(&self, g: u32, n: u32) -> i32 {
        6 * g as i32 + 2 * n as i32 + 8 + self.trunc_extra
    }

    pub fn cap(&self, g: u32, n: u32) -> usize {
        self.eps_cap.unwrap_or(6 * g as usize + 3 * n as usize)
    }
}

/// Per-anchor series data shared by all recursion steps at one truncation.
struct Anchors {
    trunc: i32,
    points: Vec<RamPoint>,
    sigma: Vec<CSeries>,
    dsigma: Vec<CSeries>,
    /// basis[r][r'][m] = ℘^{(m)}(u_r − u_{r'} + s).
    basis: Vec<Vec<Vec<CSeries>>>,
    /// basis composed with σ_r, filled on demand.
    starred: RwLock<HashMap<(usize, BasisKey), Arc<CSeries>>>,
    kernels: Vec<Kernel>,
    /// ℘(s − σ(s)) at each anchor.
    wp_swap: Vec<CSeries>,
}

/// K(p₁, u_r + s) = Σ_m ℘^{(m)}(u₁ − u_r)·k_m(s) + konst(s)·c.
struct Kernel {
    keys: Vec<(usize, CSeries)>,
    konst: CSeries,
}

/// Free slots → coefficient series in s.
type Partial = BTreeMap<Vec<BasisKey>, EpsSeries>;

fn accumulate(map: &mut Partial, key: Vec<BasisKey>, s: EpsSeries) {
    match map.get_mut(&key) {
        Some(acc) => acc.add_assign(&s),
        None => {
            map.insert(key, s);
        }
    }
}

fn scaled(s: &CSeries, p: &EpsPoly) -> EpsSeries {
    s.map(|x| p.scale(*x))
}

fn lift(s: &CSeries) -> EpsSeries {
    s.map(|x| EpsPoly::constant(*x))
}

fn valuation<C: Coeff>(s: &crate::series::Laurent<C>) -> i32 {
    s.valuation().unwrap_or(s.trunc())
}

/// Coefficient of s⁻¹ in a·b without forming the product.
fn residue_pair(a: &CSeries, b: &EpsSeries) -> Result<EpsPoly> {
    let (va, vb) = (valuation(a), valuation(b));
    if va + vb > -1 {
        return Ok(EpsPoly::default());
    }
    if a.trunc() <= -1 - vb || b.trunc() <= -1 - va {
        return Err(Error::Truncation(format!(
            "residue needs kernel terms to s^{} and bracket terms to s^{}; have {} and {}",
            -1 - vb,
            -1 - va,
            a.trunc(),
            b.trunc()
        )));
    }
    let mut acc = EpsPoly::default();
    for i in va..=(-1 - vb) {
        if let (Some(x), Some(y)) = (a.coeff(i), b.coeff(-1 - i)) {
            if !x.is_zero() && !y.is_zero() {
                acc.add_assign_ref(&y.scale(x));
            }
        }
    }
    Ok(acc)
}

/// f(−s).
fn reflect(f: &CSeries) -> CSeries {
    let coeffs = f
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, x)| if (f.min_exp() + i as i32) % 2 == 0 { *x } else { -x })
        .collect();
    CSeries::new(f.min_exp(), coeffs, f.trunc())
}

impl Anchors {
    fn build(m: &ModuliPoint, trunc: i32) -> Result<Self> {
        let points = ramification_points(m, (trunc + 6) as usize)?;
        let lat = &m.lattice;
        let base_len = 2 * trunc;
        let basis = points
            .par_iter()
            .map(|p| {
                points
                    .iter()
                    .map(|p2| {
                        let a = p.u_r - p2.u_r;
                        let (red, _, _) = lat.reduce(a);
                        let mut f = if red.norm() < 1e-9 {
                            lat.wp_laurent(base_len)
                        } else {
                            CSeries::new(0, lat.wp_taylor(a, base_len as usize)?, base_len)
                        };
                        let mut out = Vec::with_capacity(trunc as usize);
                        for _ in 0..trunc {
                            out.push(f.truncated(trunc));
                            f = f.derivative();
                        }
                        Ok(out)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let sigma: Vec<CSeries> = points.iter().map(|p| p.sigma.truncated(trunc + 2)).collect();
        let dsigma: Vec<CSeries> = sigma.iter().map(|s| s.derivative().truncated(trunc)).collect();
        let kernels = points
            .iter()
            .zip(&sigma)
            .map(|(p, s)| Kernel::build(p, s, trunc))
            .collect::<Result<Vec<_>>>()?;
        let wp_swap = sigma
            .iter()
            .map(|s| {
                let arg = CSeries::variable().truncated(s.trunc()).sub(s);
                Ok(lat.wp_laurent(trunc + 4).compose(&arg)?.truncated(trunc))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Anchors {
            trunc,
            points,
            sigma,
            dsigma,
            basis,
            starred: RwLock::new(HashMap::new()),
            kernels,
            wp_swap,
        })
    }

    fn basis_series(&self, r: usize, key: BasisKey) -> Result<CSeries> {
        match key {
            BasisKey::Const => Ok(CSeries::one().truncated(self.trunc)),
            BasisKey::P { r: r2, m } => self.basis[r][r2 as usize]
                .get(m as usize)
                .cloned()
                .ok_or_else(|| {
                    Error::Truncation(format!(
                        "derivative order {m} exceeds series order {}",
                        self.trunc
                    ))
                }),
        }
    }

    /// basis(u_r + σ(s)), without the Jacobian σ′.
    fn starred(&self, r: usize, key: BasisKey) -> Result<Arc<CSeries>> {
        if let Some(s) = self.starred.read().expect("cache lock").get(&(r, key)) {
            return Ok(s.clone());
        }
        let f = self.basis_series(r, key)?;
        let out = if self.points[r].reflection {
            reflect(&f)
        } else {
            f.compose(&self.sigma[r])?.truncated(self.trunc)
        };
        let out = Arc::new(out);
        self.starred
            .write()
            .expect("cache lock")
            .insert((r, key), out.clone());
        Ok(out)
    }
}

impl Kernel {
    fn build(p: &RamPoint, sigma: &CSeries, trunc: i32) -> Result<Self> {
        let inv = p.lam_diff.inverse()?;
        let neg_sigma = sigma.neg();
        let half = 0.5 * ORIENTATION;
        let mut keys = Vec::new();
        let mut pow = neg_sigma.clone();
        for m in 0..trunc as usize {
            let e = m as i32 + 1;
            let sign = if e % 2 == 0 { 1.0 } else { -1.0 };
            let numer = CSeries::monomial(c(sign), e).sub(&pow);
            pow = pow.mul(&neg_sigma);
            if numer.valuation().is_none() {
                continue;
            }
            let k = numer.mul(&inv).scale(c(-half / factorial(m + 1)));
            keys.push((m, k.truncated(trunc)));
        }
        let diff = CSeries::variable().sub(sigma);
        let konst = diff.mul(&inv).scale(c(half)).truncated(trunc);
        Ok(Kernel { keys, konst })
    }
}

/// Recursion driver for one τ; memoizes every ω_{g,n} it computes.
pub struct Engine {
    moduli: ModuliPoint,
    cfg: RecursionConfig,
    eta: EpsPoly,
    fingerprint: String,
    order: Vec<usize>,
    anchors: RwLock<Option<Arc<Anchors>>>,
    memo: RwLock<HashMap<(u32, u32), Arc<SymbolicForm>>>,
}

impl Engine {
    pub fn new(moduli: ModuliPoint, cfg: RecursionConfig) -> Result<Self> {
        let order = match &cfg.anchor_order {
            Some(o) => {
                let mut sorted = o.clone();
                sorted.sort_unstable();
                if sorted != (0..9).collect::<Vec<_>>() {
                    return Err(Error::Config(format!(
                        "anchor order must be a permutation of 0..9, got {o:?}"
                    )));
                }
                o.clone()
            }
            None => (0..9).collect(),
        };
        let eta1 = moduli.quasi().eta1;
        let eta = match cfg.kernel {
            KernelKind::Schiffer => EpsPoly::eta_hat(eta1),
            KernelKind::Bergman => EpsPoly::constant(eta1),
        };
        let fingerprint = moduli_fingerprint(&moduli);
        Ok(Engine {
            moduli,
            cfg,
            eta,
            fingerprint,
            order,
            anchors: RwLock::new(None),
            memo: RwLock::new(HashMap::new()),
        })
    }

    pub fn moduli(&self) -> &ModuliPoint {
        &self.moduli
    }

    pub fn config(&self) -> &RecursionConfig {
        &self.cfg
    }

    /// The constant in S(p,q) as a polynomial in ε.
    pub fn eta(&self) -> &EpsPoly {
        &self.eta
    }

    fn anchors(&self, trunc: i32) -> Result<Arc<Anchors>> {
        if let Some(a) = self.anchors.read().expect("anchor lock").as_ref() {
            if a.trunc >= trunc {
                return Ok(a.clone());
            }
        }
        let built = Arc::new(Anchors::build(&self.moduli, trunc)?);
        let mut slot = self.anchors.write().expect("anchor lock");
        match slot.as_ref() {
            Some(a) if a.trunc >= trunc => Ok(a.clone()),
            _ => {
                *slot = Some(built.clone());
                Ok(built)
            }
        }
    }

    /// The nine ramification points at the current working order.
    pub fn ramification(&self) -> Result<Vec<RamPoint>> {
        Ok(self.anchors(self.cfg.trunc_order(0, 3))?.points.clone())
    }

    pub fn anchor_positions(&self) -> Result<Vec<Complex64>> {
        Ok(self.ramification()?.iter().map(|p| p.u_r).collect())
    }

    fn check_range(&self, g: u32, n: u32) -> Result<()> {
        let chi = 2 * g as i32 - 2 + n as i32;
        if n == 0 || chi <= 0 {
            return Err(Error::Config(format!(
                "ω_{{{g},{n}}} needs n ≥ 1 and 2g−2+n > 0"
            )));
        }
        if chi > self.cfg.budget {
            return Err(Error::Config(format!(
                "2g−2+n = {chi} exceeds the budget {}",
                self.cfg.budget
            )));
        }
        Ok(())
    }

    fn memo_get(&self, g: u32, n: u32) -> Option<Arc<SymbolicForm>> {
        self.memo.read().expect("memo lock").get(&(g, n)).cloned()
    }

    /// ω_{g,n}, computed recursively and memoized.
    pub fn omega(&self, g: u32, n: u32) -> Result<Arc<SymbolicForm>> {
        self.check_range(g, n)?;
        if let Some(f) = self.memo_get(g, n) {
            return Ok(f);
        }
        let trunc = self.cfg.trunc_order(g, n);
        let anchors = self.anchors(trunc)?;
        for (dg, dn) in dependencies(g, n) {
            self.omega(dg, dn)?;
        }
        let parts = self
            .order
            .par_iter()
            .map(|&r| self.anchor_contribution(&anchors, r, g, n))
            .collect::<Result<Vec<_>>>()?;
        let mut terms: BTreeMap<Vec<BasisKey>, EpsPoly> = BTreeMap::new();
        for part in parts {
            for (k, v) in part {
                terms.entry(k).or_default().add_assign_ref(&v);
            }
        }
        terms.retain(|_, v| !v.is_zero());
        let defect = symmetry_defect(&terms, n as usize);
        let terms = symmetrize(terms, n as usize);
        let mut form = SymbolicForm {
            g,
            n,
            terms,
            meta: FormMeta {
                trunc,
                fingerprint: self.fingerprint.clone(),
                kernel: self.cfg.kernel,
                symmetry_defect: defect,
                eps_degree: 0,
            },
        };
        form.meta.eps_degree = form.eps_degree();
        let cap = self.cfg.cap(g, n);
        if form.meta.eps_degree > cap {
            return Err(Error::EpsDegree {
                degree: form.meta.eps_degree,
                cap,
            });
        }
        let form = Arc::new(form);
        self.memo
            .write()
            .expect("memo lock")
            .entry((g, n))
            .or_insert_with(|| form.clone());
        Ok(self.memo_get(g, n).expect("just inserted"))
    }

    /// q-slot (or q*-slot) expansion of ω_{g,n} at anchor r; the first slot
    /// becomes the series variable and the rest stay symbolic.
    fn partial(&self, a: &Anchors, r: usize, g: u32, n: u32, star: bool) -> Result<Partial> {
        let mut out = Partial::new();
        if (g, n) == (0, 2) {
            let t = a.trunc;
            let var = if star {
                a.sigma[r].neg()
            } else {
                CSeries::variable().neg().truncated(t)
            };
            let mut pow = CSeries::one().truncated(t);
            for k in 0..t as usize {
                if pow.valuation().is_none() {
                    break;
                }
                accumulate(&mut out, vec![BasisKey::p(r, k)], lift(&pow.scale(c(1.0 / factorial(k)))));
                pow = pow.mul(&var).truncated(t);
            }
            accumulate(&mut out, vec![BasisKey::Const], CSeries::one().truncated(t).map(|x| self.eta.scale(*x)));
        } else {
            let form = self.memo_get(g, n).ok_or_else(|| {
                Error::Numeric(format!("ω_{{{g},{n}}} requested before it was computed"))
            })?;
            for (keys, coeff) in &form.terms {
                let head = if star {
                    (*a.starred(r, keys[0])?).clone()
                } else {
                    a.basis_series(r, keys[0])?
                };
                accumulate(&mut out, keys[1..].to_vec(), scaled(&head, coeff));
            }
        }
        if star {
            let ds = lift(&a.dsigma[r]);
            for v in out.values_mut() {
                *v = v.mul(&ds);
            }
        }
        Ok(out)
    }

    /// The bracket ω_{g−1,n+1}(q,q*,p_K) + Σ′ ω_{g₁}(q,p_I) ω_{g₂}(q*,p_J) at anchor r.
    fn bracket(&self, a: &Anchors, r: usize, g: u32, n: u32) -> Result<Partial> {
        let mut out = Partial::new();
        let ds = lift(&a.dsigma[r]);
        if g >= 1 {
            if (g, n) == (1, 1) {
                let s = a.wp_swap[r].map(|x| EpsPoly::constant(*x));
                let s = s.add(&CSeries::one().truncated(a.trunc).map(|x| self.eta.scale(*x)));
                accumulate(&mut out, Vec::new(), s.mul(&ds));
            } else {
                let form = self.memo_get(g - 1, n + 1).ok_or_else(|| {
                    Error::Numeric("missing ω_{g−1,n+1}".into())
                })?;
                let mut acc = Partial::new();
                for (keys, coeff) in &form.terms {
                    let s = a.basis_series(r, keys[0])?.mul(&*a.starred(r, keys[1])?);
                    accumulate(&mut acc, keys[2..].to_vec(), scaled(&s, coeff));
                }
                for (k, v) in acc {
                    accumulate(&mut out, k, v.mul(&ds));
                }
            }
        }
        let free = n as usize - 1;
        let mut cache: HashMap<(u32, u32, bool), Partial> = HashMap::new();
        for g1 in 0..=g {
            let g2 = g - g1;
            for mask in 0u32..(1 << free) {
                let n1 = mask.count_ones();
                let n2 = free as u32 - n1;
                if (g1 == 0 && n1 == 0) || (g2 == 0 && n2 == 0) {
                    continue;
                }
                for (gg, nn, star) in [(g1, n1 + 1, false), (g2, n2 + 1, true)] {
                    if !cache.contains_key(&(gg, nn, star)) {
                        let p = self.partial(a, r, gg, nn, star)?;
                        cache.insert((gg, nn, star), p);
                    }
                }
                let p1 = &cache[&(g1, n1 + 1, false)];
                let p2 = &cache[&(g2, n2 + 1, true)];
                for (f1, s1) in p1 {
                    for (f2, s2) in p2 {
                        let key = merge_slots(mask, free, f1, f2);
                        accumulate(&mut out, key, s1.mul(s2));
                    }
                }
            }
        }
        Ok(out)
    }

    fn anchor_contribution(
        &self,
        a: &Anchors,
        r: usize,
        g: u32,
        n: u32,
    ) -> Result<BTreeMap<Vec<BasisKey>, EpsPoly>> {
        let bracket = self.bracket(a, r, g, n)?;
        let kernel = &a.kernels[r];
        let mut out: BTreeMap<Vec<BasisKey>, EpsPoly> = BTreeMap::new();
        for (free, b) in &bracket {
            for (m, k) in &kernel.keys {
                let res = residue_pair(k, b)?;
                if !res.is_zero() {
                    let mut key = vec![BasisKey::p(r, *m)];
                    key.extend_from_slice(free);
                    out.entry(key).or_default().add_assign_ref(&res);
                }
            }
            let res = residue_pair(&kernel.konst, b)?.mul_ref(&self.eta);
            if !res.is_zero() {
                let mut key = vec![BasisKey::Const];
                key.extend_from_slice(free);
                out.entry(key).or_default().add_assign_ref(&res);
            }
        }
        Ok(out)
    }

    /// F_g = (1/(2g−2)) Σ_r Res d⁻¹λ·ω_{g,1}.
    pub fn free_energy(&self, g: u32) -> Result<EpsPoly> {
        if g < 2 {
            return Err(Error::Config("free energies are defined for g ≥ 2".into()));
        }
        let form = self.omega(g, 1)?;
        let a = self.anchors(self.cfg.trunc_order(g, 1))?;
        let parts = self
            .order
            .par_iter()
            .map(|&r| -> Result<EpsPoly> {
                let p = &a.points[r];
                let mut w = EpsSeries::zero(a.trunc);
                for (keys, coeff) in &form.terms {
                    let b = a.basis_series(r, keys[0])?;
                    let res = b.coeff(-1).unwrap_or_default();
                    if res.norm() > 1e-10 * b.max_magnitude().max(1.0) {
                        return Err(Error::Numeric(format!(
                            "basis expansion of {:?} at anchor {r} has residue {res}",
                            keys[0]
                        )));
                    }
                    w.add_assign(&scaled(&b, coeff));
                }
                let phi = lambda_primitive(p)?;
                residue_pair(&phi, &w)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = EpsPoly::default();
        for p in parts {
            total.add_assign_ref(&p);
        }
        // Cancelled top ε-powers survive only as roundoff.
        Ok(total.scale(c(1.0 / (2.0 * g as f64 - 2.0))).chopped(1e-12))
    }

    /// The closed form 2·S₁S₂S₃/Λ₂ summed over anchors, with
    /// Λ₂ = −(2/3)·(3Y_r²/∂_X H)·((−12X_r² + 2q²X_r + 2q)/(X_r(−1−qX_r)))·x₂·Y′,
    /// x₂ the s² Taylor coefficient of X and (1 − ∂Y*/∂Y) = 1 − σ′(0).
    pub fn omega03_closed_form(&self) -> Result<SymbolicForm> {
        let a = self.anchors(self.cfg.trunc_order(0, 3))?;
        let q = self.moduli.q;
        let mut terms: BTreeMap<Vec<BasisKey>, EpsPoly> = BTreeMap::new();
        for &r in &self.order {
            let p = &a.points[r];
            let (x, y) = (p.x_r, p.y_r);
            let x2 = p.x_of_u.coeff(2).unwrap_or_default();
            let y1 = p.y_of_u.coeff(1).unwrap_or_default();
            let hx = 3.0 * x * x + q * y.powi(3);
            let den = -(2.0 / 3.0) * (3.0 * y * y / hx)
                * ((-12.0 * x * x + 2.0 * q * q * x + 2.0 * q) / (x * (-1.0 - q * x)))
                * x2
                * y1;
            let numer = 1.0 - p.sigma_computed.coeff(1).unwrap_or_default();
            let coeff = numer / den;
            let choices = [(BasisKey::p(r, 0), EpsPoly::constant(c(1.0))), (BasisKey::Const, self.eta.clone())];
            for a1 in &choices {
                for a2 in &choices {
                    for a3 in &choices {
                        let w = a1.1.mul_ref(&a2.1).mul_ref(&a3.1).scale(coeff);
                        terms
                            .entry(vec![a1.0, a2.0, a3.0])
                            .or_default()
                            .add_assign_ref(&w);
                    }
                }
            }
        }
        terms.retain(|_, v| !v.is_zero());
        let mut form = SymbolicForm {
            g: 0,
            n: 3,
            terms,
            meta: FormMeta {
                trunc: a.trunc,
                fingerprint: self.fingerprint.clone(),
                kernel: self.cfg.kernel,
                symmetry_defect: 0.0,
                eps_degree: 0,
            },
        };
        form.meta.eps_degree = form.eps_degree();
        Ok(form)
    }

    /// ω_{0,3} or ω_{1,1} at concrete arguments, through scalar series only:
    /// the free arguments never enter a basis, and σ is the series-inverted one.
    pub fn omega_numeric(&self, g: u32, n: u32, us: &[Complex64], eps: Complex64) -> Result<Complex64> {
        if !matches!((g, n), (0, 3) | (1, 1)) || us.len() != n as usize {
            return Err(Error::Config(
                "the scalar path covers ω_{0,3} and ω_{1,1} only".into(),
            ));
        }
        let trunc = self.cfg.trunc_order(g, n);
        let a = self.anchors(trunc)?;
        let lat = &self.moduli.lattice;
        let eta = self.eta.eval(eps);
        let mut total = Complex64::default();
        for &r in &self.order {
            let p = &a.points[r];
            let sigma = p.sigma_computed.truncated(trunc + 2);
            let ds = sigma.derivative().truncated(trunc);
            let neg_s = CSeries::variable().neg().truncated(trunc + 2);
            let neg_sigma = sigma.neg();
            let taylor = |u: Complex64| -> Result<CSeries> {
                let cs = lat.wp_taylor(u - p.u_r, (trunc + 2) as usize)?;
                Ok(CSeries::new(0, cs, trunc + 2))
            };
            // ζ(a+t) − ζ(a) = −∫℘(a+t) dt.
            let z1 = taylor(us[0])?.integrate(LogTerm::Reject)?.neg();
            let numer = z1
                .compose(&neg_s)?
                .sub(&z1.compose(&neg_sigma)?)
                .add(&CSeries::variable().sub(&sigma).scale(eta));
            let kern = numer
                .mul(&p.lam_diff.inverse()?)
                .scale(c(0.5 * ORIENTATION));
            let bracket = if (g, n) == (1, 1) {
                let arg = CSeries::variable().sub(&sigma);
                lat.wp_laurent(trunc + 4)
                    .compose(&arg)?
                    .add(&CSeries::constant(eta))
                    .mul(&ds)
            } else {
                let eta_s = CSeries::constant(eta);
                let side = |u: Complex64| -> Result<(CSeries, CSeries)> {
                    let f = taylor(u)?;
                    Ok((
                        f.compose(&neg_s)?.add(&eta_s),
                        f.compose(&neg_sigma)?.add(&eta_s).mul(&ds),
                    ))
                };
                let (a2, a2s) = side(us[1])?;
                let (a3, a3s) = side(us[2])?;
                a2.mul(&a3s).add(&a2s.mul(&a3))
            };
            total += kern.truncated(trunc).mul(&bracket.truncated(trunc)).residue()?;
        }
        Ok(total)
    }

    /// Evaluates a form at concrete arguments and ε.
    pub fn evaluate(&self, f: &SymbolicForm, us: &[Complex64], eps: Complex64) -> Result<Complex64> {
        evaluate_form(f, us, &self.moduli.lattice, &self.anchor_positions()?, eps)
    }
}

/// Forms needed before ω_{g,n} can be computed.
fn dependencies(g: u32, n: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    if g >= 1 && (g, n) != (1, 1) {
        out.push((g - 1, n + 1));
    }
    for g1 in 0..=g {
        for k in 1..=n {
            if (g1, k) != (g, n) && 2 * g1 as i32 - 2 + k as i32 > 0 && (g1, k) != (0, 2) {
                if 2 * g1 + k < 2 * g + n {
                    out.push((g1, k));
                }
            }
        }
    }
    out.sort_by_key(|&(g, n)| 2 * g + n);
    out.dedup();
    out
}

/// Interleaves the free slots of two factors back into argument order.
fn merge_slots(mask: u32, free: usize, first: &[BasisKey], second: &[BasisKey]) -> Vec<BasisKey> {
    let (mut i, mut j) = (0, 0);
    (0..free)
        .map(|bit| {
            if mask & (1 << bit) != 0 {
                i += 1;
                first[i - 1]
            } else {
                j += 1;
                second[j - 1]
            }
        })
        .collect()
}

/// d⁻¹λ at an anchor: ∫ ln Y · X′/X ds with zero integration constant.
fn lambda_primitive(p: &RamPoint) -> Result<CSeries> {
    let ys = p.y_of_u.add(&CSeries::constant(p.y_r));
    let y0 = ys.coeff(0).unwrap_or_default();
    let rel = ys.scale(y0.inv()).sub(&CSeries::one());
    let rel = rel.strip_leading(1, 1e-12)?;
    let log_y = rel.ln1p()?.add(&CSeries::constant(y0.ln()));
    let dlog_x = p.x_of_u.derivative().div(&p.x_of_u)?;
    log_y.mul(&dlog_x).integrate(LogTerm::Reject)
}

fn permute(keys: &[BasisKey], perm: &[usize]) -> Vec<BasisKey> {
    perm.iter().map(|&i| keys[i]).collect()
}

/// Largest coefficient change under adjacent slot swaps, relative to the
/// larger of the two coefficients involved (with a floor of 1e−6 of the
/// largest coefficient, below which entries are pure roundoff).
pub fn symmetry_defect(terms: &BTreeMap<Vec<BasisKey>, EpsPoly>, n: usize) -> f64 {
    let scale = terms.values().map(|p| p.magnitude()).fold(0.0, f64::max);
    let floor = 1e-6 * scale;
    let zero = EpsPoly::default();
    let mut worst: f64 = 0.0;
    for swap in 0..n.saturating_sub(1) {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(swap, swap + 1);
        for (keys, v) in terms {
            let other = terms.get(&permute(keys, &perm)).unwrap_or(&zero);
            let mut d = v.clone();
            d.sub_assign_ref(other);
            let denom = v.magnitude().max(other.magnitude()).max(floor).max(1e-300);
            worst = worst.max(d.magnitude() / denom);
        }
    }
    worst
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Averages over all slot permutations (up to six slots).
pub fn symmetrize(terms: BTreeMap<Vec<BasisKey>, EpsPoly>, n: usize) -> BTreeMap<Vec<BasisKey>, EpsPoly> {
    if n <= 1 || n > 6 {
        return terms;
    }
    let perms = permutations(n);
    let w = c(1.0 / perms.len() as f64);
    let mut out: BTreeMap<Vec<BasisKey>, EpsPoly> = BTreeMap::new();
    for (keys, v) in &terms {
        let part = v.scale(w);
        for perm in &perms {
            out.entry(permute(keys, perm)).or_default().add_assign_ref(&part);
        }
    }
    out.retain(|_, v| !v.is_zero());
    out
}

/// Value of one basis function at u.
pub fn schiffer_basis_eval(key: BasisKey, u: Complex64, lattice: &Lattice, anchors: &[Complex64]) -> Result<Complex64> {
    match key {
        BasisKey::Const => Ok(c(1.0)),
        BasisKey::P { r, m } => {
            let ur = anchors.get(r as usize).ok_or_else(|| {
                Error::Config(format!("anchor index {r} out of range"))
            })?;
            lattice.wp(u - ur, m as usize)
        }
    }
}

/// Σ_terms coeff(ε)·Π basis(uᵢ).
pub fn evaluate_form(
    f: &SymbolicForm,
    us: &[Complex64],
    lattice: &Lattice,
    anchors: &[Complex64],
    eps: Complex64,
) -> Result<Complex64> {
    if us.len() != f.n as usize {
        return Err(Error::Config(format!(
            "form has {} arguments, got {}",
            f.n,
            us.len()
        )));
    }
    let mut cache: HashMap<(usize, BasisKey), Complex64> = HashMap::new();
    let mut total = Complex64::default();
    for (keys, coeff) in &f.terms {
        let mut v = coeff.eval(eps);
        for (i, key) in keys.iter().enumerate() {
            let b = match cache.get(&(i, *key)) {
                Some(b) => *b,
                None => {
                    let b = schiffer_basis_eval(*key, us[i], lattice, anchors)?;
                    cache.insert((i, *key), b);
                    b
                }
            };
            v *= b;
        }
        total += v;
    }
    Ok(total)
}

/// ω_{0,2}(u₁,u₂) = ℘(u₁ − u₂) + c, with c the kernel constant at ε.
pub fn omega02(lattice: &Lattice, eta: &EpsPoly, u1: Complex64, u2: Complex64, eps: Complex64) -> Result<Complex64> {
    Ok(lattice.wp(u1 - u2, 0)? + eta.eval(eps))
}
