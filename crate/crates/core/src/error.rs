use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("pole: argument within guard radius of lattice point {nearest}")]
    Pole { nearest: Complex64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("singular division: leading coefficient of divisor is not invertible")]
    SingularDivision,

    #[error("composition domain: {0}")]
    CompositionDomain(String),

    #[error("integration would produce a log term (residue {residue})")]
    LogTerm { residue: Complex64 },

    #[error("degenerate fiber: 27+q^3 vanishes (q = {q})")]
    DegenerateFiber { q: Complex64 },

    #[error("kappa singularity: q(q^3-216) vanishes (q = {q})")]
    KappaSingularity { q: Complex64 },

    #[error("parametrization singularity at u = {u}")]
    ParametrizationSingularity { u: Complex64 },

    #[error("near an open point: inverse map denominator vanishes at (X, Y) = ({x}, {y})")]
    NearOpenPoint { x: Complex64, y: Complex64 },

    #[error("degenerate ramification: {0}")]
    DegenerateRamification(String),

    #[error("branch resolution failed: {0}")]
    BranchResolution(String),

    #[error("involution branch ambiguity at ramification point {index}")]
    InvolutionBranch { index: usize },

    #[error("q = {q} lies on the degenerate framing locus")]
    DegenerateFramingLocus { q: Complex64 },

    #[error("truncation insufficient: {0}")]
    Truncation(String),

    #[error("epsilon degree {degree} exceeds cap {cap}")]
    EpsDegree { degree: usize, cap: usize },

    #[error("open branch tracking failed: {0}")]
    OpenBranch(String),

    #[error("open point {open} collides with ramification point {ram}")]
    PoleCollision { open: usize, ram: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit status used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) => 2,
            Error::DegenerateFiber { .. }
            | Error::KappaSingularity { .. }
            | Error::DegenerateRamification(_)
            | Error::DegenerateFramingLocus { .. }
            | Error::NearOpenPoint { .. }
            | Error::ParametrizationSingularity { .. }
            | Error::PoleCollision { .. }
            | Error::Pole { .. }
            | Error::Domain(_) => 3,
            _ => 4,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Pole { .. } => "pole",
            Error::Numeric(_) => "numeric",
            Error::SingularDivision => "singular_division",
            Error::CompositionDomain(_) => "composition_domain",
            Error::LogTerm { .. } => "log_term",
            Error::DegenerateFiber { .. } => "degenerate_fiber",
            Error::KappaSingularity { .. } => "kappa_singularity",
            Error::ParametrizationSingularity { .. } => "parametrization_singularity",
            Error::NearOpenPoint { .. } => "near_open_point",
            Error::DegenerateRamification(_) => "degenerate_ramification",
            Error::BranchResolution(_) => "branch_resolution",
            Error::InvolutionBranch { .. } => "involution_branch",
            Error::DegenerateFramingLocus { .. } => "degenerate_framing_locus",
            Error::Truncation(_) => "truncation",
            Error::EpsDegree { .. } => "eps_degree",
            Error::OpenBranch(_) => "open_branch",
            Error::PoleCollision { .. } => "pole_collision",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
