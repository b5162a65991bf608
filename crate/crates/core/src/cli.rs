//! Command-line driver: argument parsing, the on-disk result cache and
//! JSON/CSV/pretty emission. The binary is a thin wrapper around [`execute`].

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curve::ModuliPoint;
use crate::error::{Error, Result};
use crate::modularity::{
    check_fg, check_open_wp, check_wp_jacobi, gamma0_3_generators, weight_batch, Expectation, GammaElement,
    ModularReport, Quantity, FG_TOL, FG_T_TOL, WEIGHT_TOL,
};
use crate::open::{open_points, open_invariant, OpenInvariant};
use crate::ramification::RamSummary;
use crate::recursion::{Engine, KernelKind, RecursionConfig, SymbolicForm, DEFAULT_BUDGET};
use crate::series::EpsPoly;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CACHE_ENV: &str = "REMODEL_CACHE_DIR";

/// Fixed argument of the ℘ Jacobi check.
const WP_TEST_POINT: Complex64 = Complex64::new(0.21, 0.37);

#[derive(Parser, Debug)]
#[command(name = "remodel", version, about = "Topological recursion on the mirror curve X³+Y³+Y⁶+qXY³=0")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Modular parameter as RE,IM.
    #[arg(long, global = true, default_value = "0.11,1.29", allow_hyphen_values = true)]
    pub tau: String,
    /// Series truncation order override (recursion order for omega/fg,
    /// X-order of the open-point expansions for open).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub order: Option<i32>,
    /// Largest allowed ε-degree of a stored coefficient.
    #[arg(long, global = true)]
    pub eps_cap: Option<usize>,
    /// Largest allowed 2g−2+n.
    #[arg(long, global = true, default_value_t = DEFAULT_BUDGET)]
    pub budget: i32,
    #[arg(long, global = true, value_enum, default_value_t = Kernel::Schiffer)]
    pub kernel: Kernel,
    /// Open mirror-map constant A as RE,IM.
    #[arg(long, global = true, default_value = "1,0", allow_hyphen_values = true)]
    pub a_const: String,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Json)]
    pub out: OutFormat,
    /// Directory of the result cache; no caching when absent.
    #[arg(long, global = true, env = CACHE_ENV)]
    pub cache_dir: Option<PathBuf>,
    /// Tolerance override NAME=VALUE (weight, fg, fg_t); repeatable.
    #[arg(long = "tol", global = true)]
    pub tolerances: Vec<String>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Moduli data: q, κ, g₂, g₃ and both j-invariants.
    Curve,
    /// The nine ramification points.
    Ram,
    /// ω_{g,n} in the anchor basis.
    Omega {
        #[arg(long)]
        g: u32,
        #[arg(long)]
        n: u32,
    },
    /// Free energy F_g at ε = π/Im τ and ε = 0.
    Fg {
        #[arg(long)]
        g: u32,
    },
    /// Open invariants; all twist vectors when --twists is absent.
    Open {
        #[arg(long)]
        g: u32,
        #[arg(long, value_delimiter = ',', required = true)]
        degrees: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        twists: Option<Vec<usize>>,
    },
    /// Modular transformation checks.
    Modcheck {
        /// γ as a,b,c,d; repeatable. Defaults to the Γ₀(3) generators.
        #[arg(long = "gamma", allow_hyphen_values = true)]
        gammas: Vec<String>,
        /// Comma-separated: q3,g2,g3,e2,e4,e6,kappa,j,wp,wp_open,f<g>.
        #[arg(long, value_delimiter = ',')]
        quantities: Option<Vec<String>>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutFormat {
    Json,
    Csv,
    Pretty,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Schiffer,
    Bergman,
}

/// Tolerances in force, echoed into every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub weight: f64,
    pub fg: f64,
    pub fg_t: f64,
    pub open_forward_gate: f64,
    pub ramification_gate: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            weight: WEIGHT_TOL,
            fg: FG_TOL,
            fg_t: FG_T_TOL,
            open_forward_gate: 1e-7,
            ramification_gate: 1e-7,
        }
    }
}

/// The resolved configuration of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub tau: Complex64,
    pub order: Option<i32>,
    pub eps_cap: Option<usize>,
    pub budget: i32,
    pub kernel: KernelKind,
    pub a_const: Complex64,
    pub tolerances: Tolerances,
    #[serde(skip)]
    pub format: Option<OutFormat>,
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
}

pub fn parse_complex(s: &str) -> Result<Complex64> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |p: &str| {
        p.parse::<f64>()
            .map_err(|e| Error::Config(format!("bad number '{p}' in '{s}': {e}")))
    };
    match parts[..] {
        [re] => Ok(Complex64::new(num(re)?, 0.0)),
        [re, im] => Ok(Complex64::new(num(re)?, num(im)?)),
        _ => Err(Error::Config(format!("expected RE,IM, got '{s}'"))),
    }
}

impl RunConfig {
    pub fn from_args(a: &CommonArgs) -> Result<Self> {
        let tau = parse_complex(&a.tau)?;
        if !(tau.im > 0.0) {
            return Err(Error::Config(format!("Im tau must be positive, got {tau}")));
        }
        if a.budget < 1 {
            return Err(Error::Config(format!("budget must be positive, got {}", a.budget)));
        }
        let mut tolerances = Tolerances::default();
        for t in &a.tolerances {
            let (name, value) = t
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("tolerance '{t}' is not NAME=VALUE")))?;
            let v: f64 = value
                .parse()
                .map_err(|e| Error::Config(format!("bad tolerance value '{value}': {e}")))?;
            if !(v > 0.0) {
                return Err(Error::Config(format!("tolerance {name} must be positive")));
            }
            match name {
                "weight" => tolerances.weight = v,
                "fg" => tolerances.fg = v,
                "fg_t" => tolerances.fg_t = v,
                _ => return Err(Error::Config(format!("unknown tolerance '{name}'"))),
            }
        }
        Ok(RunConfig {
            tau,
            order: a.order,
            eps_cap: a.eps_cap,
            budget: a.budget,
            kernel: match a.kernel {
                Kernel::Schiffer => KernelKind::Schiffer,
                Kernel::Bergman => KernelKind::Bergman,
            },
            a_const: parse_complex(&a.a_const)?,
            tolerances,
            format: Some(a.out),
            cache_dir: a.cache_dir.clone(),
        })
    }

    /// Recursion settings for ω_{g,n}; `order` is absolute.
    pub fn recursion(&self, g: u32, n: u32) -> RecursionConfig {
        let mut cfg = RecursionConfig {
            eps_cap: self.eps_cap,
            kernel: self.kernel,
            budget: self.budget,
            ..RecursionConfig::default()
        };
        if let Some(order) = self.order {
            cfg.trunc_extra = order - cfg.trunc_order(g, n);
        }
        cfg
    }

    fn check_budget(&self, g: u32, n: u32) -> Result<()> {
        let chi = 2 * g as i32 - 2 + n as i32;
        if chi <= 0 {
            return Err(Error::Config(format!("need 2g−2+n > 0, got (g,n) = ({g},{n})")));
        }
        if chi > self.budget {
            return Err(Error::Config(format!(
                "2g−2+n = {chi} exceeds the budget {}",
                self.budget
            )));
        }
        Ok(())
    }
}

/// What a cache lookup did.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CacheStatus {
    Disabled,
    Hit(PathBuf),
    Miss(PathBuf),
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    version: String,
    created_at: u64,
    /// Serialized payload, stored verbatim.
    payload: String,
}

fn cache_key(kind: &str, cfg: &RunConfig, g: u32, n: u32, rc: &RecursionConfig) -> String {
    let text = format!(
        "{VERSION}|{kind}|{:.14e},{:.14e}|{g}|{n}|{}|{}|{:?}",
        cfg.tau.re,
        cfg.tau.im,
        rc.trunc_order(g, n),
        rc.cap(g, n),
        rc.kernel
    );
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads `key` from the cache or computes and stores it. Writes go to a
/// temporary file that is renamed into place.
fn cached<T, F>(dir: Option<&Path>, key: &str, compute: F) -> Result<(T, CacheStatus)>
where
    T: Serialize + for<'de> Deserialize<'de>,
    F: FnOnce() -> Result<T>,
{
    let Some(dir) = dir else {
        return Ok((compute()?, CacheStatus::Disabled));
    };
    let path = dir.join(format!("{key}.json"));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(entry) = serde_json::from_str::<CacheEntry>(&text) {
            if entry.key == key && entry.version == VERSION {
                if let Ok(v) = serde_json::from_str(&entry.payload) {
                    return Ok((v, CacheStatus::Hit(path)));
                }
            }
        }
    }
    let value = compute()?;
    fs::create_dir_all(dir)?;
    let entry = CacheEntry {
        key: key.to_string(),
        version: VERSION.to_string(),
        created_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        payload: serde_json::to_string(&value).map_err(|e| Error::Io(e.to_string()))?,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    serde_json::to_writer(&mut tmp, &entry).map_err(|e| Error::Io(e.to_string()))?;
    tmp.flush()?;
    tmp.persist(&path).map_err(|e| Error::Io(e.to_string()))?;
    Ok((value, CacheStatus::Miss(path)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveReport {
    pub q: Complex64,
    pub q3: Complex64,
    pub kappa: Complex64,
    pub g2: Complex64,
    pub g3: Complex64,
    pub j_weierstrass: Complex64,
    pub j_rational: Complex64,
    pub j_relative_mismatch: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FgReport {
    pub g: u32,
    pub coeffs: EpsPoly,
    pub eps: f64,
    pub f_hat: Complex64,
    pub f_holomorphic: Complex64,
}

/// The payload of a command.
#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Curve(CurveReport),
    Ram(Vec<RamSummary>),
    Omega(SymbolicForm),
    Fg(FgReport),
    Open(Vec<OpenInvariant>),
    Modcheck(Vec<ModularReport>),
}

#[derive(Serialize)]
struct Envelope<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    /// Series order actually used, when the command has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    truncation: Option<i32>,
    result: &'a Payload,
}

/// Result of one command before formatting.
pub struct Outcome {
    pub command: &'static str,
    pub config: RunConfig,
    pub truncation: Option<i32>,
    pub payload: Payload,
    pub cache: CacheStatus,
    /// Exit status once the output is written (hard gates of modcheck).
    pub status: i32,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = RunConfig::from_args(&cli.common)?;
    let moduli = || ModuliPoint::from_tau(cfg.tau);
    let mut truncation = None;
    let mut cache = CacheStatus::Disabled;
    let mut status = 0;
    let (command, payload) = match &cli.command {
        Command::Curve => {
            let m = moduli()?;
            let report = CurveReport {
                q: m.q,
                q3: m.q.powi(3),
                kappa: m.kappa,
                g2: m.g2(),
                g3: m.g3(),
                j_weierstrass: m.j,
                j_rational: m.j_rational,
                j_relative_mismatch: m.j_mismatch(),
                eps: m.eps(),
            };
            ("curve", Payload::Curve(report))
        }
        Command::Ram => {
            let rc = cfg.recursion(0, 3);
            truncation = Some(rc.trunc_order(0, 3));
            let e = Engine::new(moduli()?, rc)?;
            ("ram", Payload::Ram(e.ramification()?.iter().map(|p| p.summary()).collect()))
        }
        Command::Omega { g, n } => {
            cfg.check_budget(*g, *n)?;
            let rc = cfg.recursion(*g, *n);
            truncation = Some(rc.trunc_order(*g, *n));
            let key = cache_key("omega", &cfg, *g, *n, &rc);
            let (form, st) = cached(cfg.cache_dir.as_deref(), &key, || {
                let e = Engine::new(moduli()?, rc.clone())?;
                Ok(e.omega(*g, *n)?.as_ref().clone())
            })?;
            cache = st;
            ("omega", Payload::Omega(form))
        }
        Command::Fg { g } => {
            if *g < 2 {
                return Err(Error::Config(format!("free energies need g ≥ 2, got {g}")));
            }
            cfg.check_budget(*g, 1)?;
            let rc = cfg.recursion(*g, 1);
            truncation = Some(rc.trunc_order(*g, 1));
            let key = cache_key("fg", &cfg, *g, 0, &rc);
            let (coeffs, st) = cached(cfg.cache_dir.as_deref(), &key, || {
                Engine::new(moduli()?, rc.clone())?.free_energy(*g)
            })?;
            cache = st;
            let eps = moduli()?.eps();
            let report = FgReport {
                g: *g,
                f_hat: coeffs.eval(Complex64::new(eps, 0.0)),
                f_holomorphic: coeffs.eval(Complex64::new(0.0, 0.0)),
                coeffs,
                eps,
            };
            ("fg", Payload::Fg(report))
        }
        Command::Open { g, degrees, twists } => {
            let n = degrees.len() as u32;
            cfg.check_budget(*g, n)?;
            if degrees.iter().any(|&d| d == 0) {
                return Err(Error::Config("degrees must be positive".into()));
            }
            let dmax = degrees.iter().copied().max().unwrap_or(1);
            let order = match cfg.order {
                Some(o) if o < dmax as i32 => {
                    return Err(Error::Config(format!(
                        "--order {o} is below the largest degree {dmax}"
                    )))
                }
                Some(o) => o as usize,
                None => dmax + 2,
            };
            truncation = Some(order as i32);
            let m = moduli()?;
            let engine = Engine::new(m.clone(), cfg.recursion(*g, n))?;
            let points = open_points(&m, order)?;
            let ks: Vec<Vec<usize>> = match twists {
                Some(k) if k.len() != degrees.len() => {
                    return Err(Error::Config(format!(
                        "{} twists for {} degrees",
                        k.len(),
                        degrees.len()
                    )))
                }
                Some(k) => vec![k.clone()],
                None => (0..3usize.pow(n))
                    .map(|idx| (0..n).map(|i| idx / 3usize.pow(i) % 3).collect())
                    .collect(),
            };
            let rows = ks
                .iter()
                .map(|k| open_invariant(&engine, &points, *g, degrees, k, cfg.a_const))
                .collect::<Result<Vec<_>>>()?;
            ("open", Payload::Open(rows))
        }
        Command::Modcheck { gammas, quantities } => {
            let reports = modcheck(&cfg, gammas, quantities.as_deref())?;
            if reports.iter().any(ModularReport::gate_failed) {
                status = 4;
            }
            ("modcheck", Payload::Modcheck(reports))
        }
    };
    Ok(Outcome {
        command,
        config: cfg,
        truncation,
        payload,
        cache,
        status,
    })
}

fn modcheck(cfg: &RunConfig, gammas: &[String], quantities: Option<&[String]>) -> Result<Vec<ModularReport>> {
    let gammas: Vec<GammaElement> = if gammas.is_empty() {
        gamma0_3_generators()
    } else {
        gammas.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };
    let default = ["q3", "g2", "g3", "e2", "e4", "e6", "kappa", "j", "wp", "wp_open", "f2"];
    let names: Vec<String> = match quantities {
        Some(q) if !q.is_empty() => q.iter().map(|s| s.trim().to_ascii_lowercase()).collect(),
        _ => default.iter().map(|s| s.to_string()).collect(),
    };
    let tau = cfg.tau;
    let tol = &cfg.tolerances;
    let mut basic = Vec::new();
    let mut reports = Vec::new();
    let mut with_control: Vec<GammaElement> = gammas.clone();
    if gammas.iter().all(GammaElement::in_gamma0_3) {
        with_control.push(GammaElement::S);
    }
    for name in &names {
        match name.as_str() {
            "wp" => {
                for g in &gammas {
                    reports.push(
                        check_wp_jacobi(WP_TEST_POINT, *g, tau)
                            .unwrap_or_else(|e| ModularReport::errored("wp", *g, tau, 2, &e))
                            .with_tolerance(tol.weight),
                    );
                }
            }
            "wp_open" => {
                for g in &with_control {
                    let r = check_open_wp(*g, tau, 4)
                        .unwrap_or_else(|e| ModularReport::errored("wp_open", *g, tau, 2, &e).gated(false));
                    let r = r.with_tolerance(tol.fg);
                    reports.push(if g.in_gamma0_3() { r } else { r.expecting(Expectation::Fail) });
                }
            }
            f if f.starts_with('f') && f[1..].parse::<u32>().is_ok() => {
                let genus: u32 = f[1..].parse().expect("checked");
                if genus < 2 {
                    return Err(Error::Config(format!("free energies need g ≥ 2, got {genus}")));
                }
                let rc = cfg.recursion(genus, 1);
                for g in &with_control {
                    let is_t = g.c == 0 && g.a == 1 && g.d == 1;
                    let r = match check_fg(genus, *g, tau, &rc) {
                        Ok(r) => r.with_tolerance(if is_t { tol.fg_t } else { tol.fg }),
                        Err(e) => {
                            let expect = if g.in_gamma0_3() { Expectation::Pass } else { Expectation::Fail };
                            ModularReport::errored(format!("F{genus}_hat"), *g, tau, 0, &e)
                                .expecting(expect)
                                .gated(is_t || !g.in_gamma0_3())
                        }
                    };
                    reports.push(r);
                }
            }
            other => basic.push(other.parse::<Quantity>()?),
        }
    }
    if !basic.is_empty() {
        reports.extend(
            weight_batch(&basic, &gammas, tau)?
                .into_iter()
                .map(|r| r.with_tolerance(tol.weight)),
        );
    }
    reports.sort_by(|a, b| {
        (&a.quantity, a.gamma, a.weight, a.expect == Expectation::Fail)
            .cmp(&(&b.quantity, b.gamma, b.weight, b.expect == Expectation::Fail))
    });
    Ok(reports)
}

fn cx(z: Complex64) -> [String; 2] {
    [format!("{:e}", z.re), format!("{:e}", z.im)]
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn write_csv(o: &Outcome, meta: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    match &o.payload {
        Payload::Curve(r) => {
            w.write_record(["quantity", "re", "im"]).map_err(io)?;
            let real = |x: f64| Complex64::new(x, 0.0);
            for (name, v) in [
                ("q", r.q),
                ("q3", r.q3),
                ("kappa", r.kappa),
                ("g2", r.g2),
                ("g3", r.g3),
                ("j_weierstrass", r.j_weierstrass),
                ("j_rational", r.j_rational),
                ("j_relative_mismatch", real(r.j_relative_mismatch)),
                ("eps", real(r.eps)),
            ] {
                let [re, im] = cx(v);
                w.write_record([name, &re, &im]).map_err(io)?;
            }
        }
        Payload::Ram(rows) => {
            w.write_record([
                "k", "j", "X_re", "X_im", "Y_re", "Y_im", "u_re", "u_im", "sigma1_re", "sigma1_im",
                "lambda_zero_order",
            ])
            .map_err(io)?;
            for r in rows {
                let mut rec = vec![r.k.to_string(), r.j.to_string()];
                for v in [r.x, r.y, r.u, r.sigma_prime] {
                    rec.extend(cx(v));
                }
                rec.push(r.lambda_zero_order.to_string());
                w.write_record(&rec).map_err(io)?;
            }
        }
        Payload::Omega(f) => {
            w.write_record(["slots", "eps_power", "re", "im"]).map_err(io)?;
            for (keys, p) in &f.terms {
                let slots = keys.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ");
                for (e, v) in p.coeffs().iter().enumerate() {
                    let [re, im] = cx(*v);
                    w.write_record([slots.as_str(), &e.to_string(), &re, &im]).map_err(io)?;
                }
            }
        }
        Payload::Fg(r) => {
            w.write_record(["quantity", "re", "im"]).map_err(io)?;
            for (name, v) in [("F_hat", r.f_hat), ("F_holomorphic", r.f_holomorphic)] {
                let [re, im] = cx(v);
                w.write_record([name, &re, &im]).map_err(io)?;
            }
            for (e, v) in r.coeffs.coeffs().iter().enumerate() {
                let [re, im] = cx(*v);
                w.write_record([format!("eps^{e}").as_str(), &re, &im]).map_err(io)?;
            }
        }
        Payload::Open(rows) => {
            w.write_record(["g", "n", "d", "k", "re", "im", "A_re", "A_im"]).map_err(io)?;
            for r in rows {
                let [re, im] = cx(r.value);
                let [are, aim] = cx(r.a);
                w.write_record([r.g.to_string(), r.n.to_string(), join(&r.d), join(&r.k), re, im, are, aim])
                    .map_err(io)?;
            }
        }
        Payload::Modcheck(rows) => {
            w.write_record([
                "quantity", "gamma", "weight", "ratio_re", "ratio_im", "phase", "tolerance", "pass", "expect",
                "gated",
            ])
            .map_err(io)?;
            for r in rows {
                let [re, im] = cx(r.ratio);
                w.write_record([
                    r.quantity.clone(),
                    r.gamma.to_string(),
                    r.weight.to_string(),
                    re,
                    im,
                    format!("{:e}", r.phase),
                    format!("{:e}", r.tolerance),
                    r.pass.to_string(),
                    format!("{:?}", r.expect).to_lowercase(),
                    r.gated.to_string(),
                ])
                .map_err(io)?;
            }
        }
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?)
        .map_err(|e| Error::Io(e.to_string()))?;
    Ok(format!("# {meta}\n{body}"))
}

fn write_pretty(o: &Outcome) -> String {
    let z = |v: Complex64| format!("{:+.12e} {:+.12e}i", v.re, v.im);
    let mut s = format!("remodel {} {}  τ = {}\n", VERSION, o.command, z(o.config.tau));
    match &o.payload {
        Payload::Curve(r) => {
            for (name, v) in [
                ("q", r.q),
                ("q³", r.q3),
                ("κ", r.kappa),
                ("g₂", r.g2),
                ("g₃", r.g3),
                ("j (Weierstrass)", r.j_weierstrass),
                ("j (rational)", r.j_rational),
            ] {
                s += &format!("  {name:<16} {}\n", z(v));
            }
            s += &format!("  {:<16} {:.3e}\n  {:<16} {}\n", "j mismatch", r.j_relative_mismatch, "ε", r.eps);
        }
        Payload::Ram(rows) => {
            for r in rows {
                s += &format!(
                    "  ({},{})  X {}  Y {}  u {}  σ′(0) {}  λ-zero order {}\n",
                    r.k,
                    r.j,
                    z(r.x),
                    z(r.y),
                    z(r.u),
                    z(r.sigma_prime),
                    r.lambda_zero_order
                );
            }
        }
        Payload::Omega(f) => {
            let (slot, total) = f.pole_orders();
            s += &format!(
                "  ω_{{{},{}}}: {} terms, ε-degree {}, pole orders {slot}/{total}, symmetry defect {:.2e}\n",
                f.g,
                f.n,
                f.terms.len(),
                f.eps_degree(),
                f.meta.symmetry_defect
            );
            for (keys, p) in &f.terms {
                let slots = keys.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ");
                s += &format!("  [{slots}] {}\n", z(p.coeff(0)));
            }
        }
        Payload::Fg(r) => {
            s += &format!("  F̂_{} (ε = {}) {}\n  F_{} (ε = 0)  {}\n", r.g, r.eps, z(r.f_hat), r.g, z(r.f_holomorphic));
        }
        Payload::Open(rows) => {
            for r in rows {
                s += &format!("  g={} d=({}) k=({})  N = {}\n", r.g, join(&r.d), join(&r.k), z(r.value));
            }
        }
        Payload::Modcheck(rows) => {
            for r in rows {
                let verdict = if r.as_expected() { "ok" } else { "UNEXPECTED" };
                s += &format!(
                    "  {:<10} {:<16} k={} |ratio−1| = {:.2e} pass={} expect={:?} gated={} {verdict}\n",
                    r.quantity,
                    r.gamma.to_string(),
                    r.weight,
                    (r.ratio - 1.0).norm(),
                    r.pass,
                    r.expect,
                    r.gated
                );
            }
        }
    }
    s
}

/// Formats an outcome in the requested format.
pub fn render(o: &Outcome) -> Result<String> {
    let env = Envelope {
        command: o.command,
        version: VERSION,
        config: &o.config,
        truncation: o.truncation,
        result: &o.payload,
    };
    let ser = |e: serde_json::Error| Error::Io(e.to_string());
    match o.config.format.unwrap_or(OutFormat::Json) {
        OutFormat::Json => Ok(serde_json::to_string_pretty(&env).map_err(ser)? + "\n"),
        OutFormat::Csv => {
            let meta = serde_json::json!({
                "command": o.command,
                "version": VERSION,
                "config": &o.config,
                "truncation": o.truncation,
            });
            write_csv(o, &serde_json::to_string(&meta).map_err(ser)?)
        }
        OutFormat::Pretty => Ok(write_pretty(o)),
    }
}

/// Machine-readable diagnostic for a failed run.
pub fn diagnostic(e: &Error) -> String {
    serde_json::json!({
        "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() }
    })
    .to_string()
}

/// Parses `args`, runs the command and writes to `out` / `err`. Returns the
/// exit status: 0 ok, 2 configuration, 3 degenerate input, 4 numeric failure.
pub fn execute<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> (i32, CacheStatus)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return (0, CacheStatus::Disabled);
            }
            let diag = diagnostic(&Error::Config(e.to_string().trim().to_string()));
            let _ = writeln!(err, "{diag}");
            return (2, CacheStatus::Disabled);
        }
    };
    let result = run(&cli).and_then(|o| render(&o).map(|text| (o, text)));
    match result {
        Ok((o, text)) => {
            if let Err(e) = out.write_all(text.as_bytes()) {
                let _ = writeln!(err, "{}", diagnostic(&Error::from(e)));
                return (2, o.cache);
            }
            (o.status, o.cache)
        }
        Err(e) => {
            let _ = writeln!(err, "{}", diagnostic(&e));
            (e.exit_code(), CacheStatus::Disabled)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String, CacheStatus) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let (code, cache) = execute(
            std::iter::once("remodel").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap(), cache)
    }

    #[test]
    fn complex_and_tolerance_parsing() {
        assert_eq!(parse_complex("0.1,-2").unwrap(), Complex64::new(0.1, -2.0));
        assert_eq!(parse_complex("3").unwrap(), Complex64::new(3.0, 0.0));
        assert!(parse_complex("a,b").is_err());
        assert!(parse_complex("1,2,3").is_err());
        let (code, _, err, _) = run_args(&["curve", "--tol", "weight=abc"]);
        assert_eq!(code, 2, "{err}");
        let (code, _, _, _) = run_args(&["curve", "--tol", "nonsense=1e-3"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn curve_command_and_exit_codes() {
        let (code, out, _, _) = run_args(&["curve"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["command"], "curve");
        assert!(v["result"]["j_relative_mismatch"].as_f64().unwrap() < 1e-8);
        // q³ → −27 at the cusp τ → 0.
        let (code, _, err, _) = run_args(&["curve", "--tau", "0,0.05"]);
        assert_eq!(code, 3, "{err}");
        assert!(err.contains("degenerate_fiber"));
        let (code, _, err, _) = run_args(&["curve", "--tau", "0,-1"]);
        assert_eq!(code, 2);
        assert!(err.contains("\"kind\":\"config\""));
        let (code, _, _, _) = run_args(&["bogus"]);
        assert_eq!(code, 2);
        let (code, _, _, _) = run_args(&["omega", "--g", "0", "--n", "2"]);
        assert_eq!(code, 2);
        let (code, _, _, _) = run_args(&["omega", "--g", "3", "--n", "3"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn formats() {
        let (code, out, _, _) = run_args(&["ram", "--out", "csv"]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert!(lines[0].starts_with("# {"));
        assert_eq!(lines.len(), 11);
        let (code, out, _, _) = run_args(&["ram", "--out", "pretty"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 10);
        let (code, out, _, _) = run_args(&["open", "--g", "0", "--degrees", "1,1,1", "--out", "csv"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), 2 + 27);
    }

    #[test]
    fn omega_cache_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let (c1, first, _, s1) = run_args(&["omega", "--g", "0", "--n", "3", "--cache-dir", d]);
        let (c2, second, _, s2) = run_args(&["omega", "--g", "0", "--n", "3", "--cache-dir", d]);
        assert_eq!((c1, c2), (0, 0));
        assert!(matches!(s1, CacheStatus::Miss(_)));
        assert!(matches!(s2, CacheStatus::Hit(_)));
        assert_eq!(first, second);
        let (_, uncached, _, s3) = run_args(&["omega", "--g", "0", "--n", "3"]);
        assert_eq!(s3, CacheStatus::Disabled);
        assert_eq!(first, uncached);
        // A different order is a different key.
        let (_, _, _, s4) = run_args(&["omega", "--g", "0", "--n", "3", "--order", "20", "--cache-dir", d]);
        assert!(matches!(s4, CacheStatus::Miss(_)));
    }

    #[test]
    fn modcheck_negative_controls_keep_exit_zero() {
        let (code, out, err, _) = run_args(&["modcheck", "--quantities", "q3,g2,kappa,wp"]);
        assert_eq!(code, 0, "{err}");
        let rows: serde_json::Value = serde_json::from_str(&out).unwrap();
        let rows = rows["result"].as_array().unwrap();
        assert!(rows.iter().any(|r| r["expect"] == "fail" && r["pass"] == false));
        let (code, _, _, _) = run_args(&["modcheck", "--gamma", "1,1,1,1"]);
        assert_eq!(code, 2);
        // An impossible tolerance turns a gated check into an exit-4 failure.
        let (code, _, _, _) = run_args(&["modcheck", "--quantities", "g2", "--tol", "weight=1e-30"]);
        assert_eq!(code, 4);
    }
}
