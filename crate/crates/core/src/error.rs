use thiserror::Error;

/// Errors raised by the pipeline stages.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("map is not a self-map of [0,1]: orbit left the interval at {value} (step {step})")]
    NotSelfMap { step: usize, value: f64 },

    #[error("potential is singular at x = {x}: within critical clearance of c = {critical}")]
    SingularPotential { x: f64, critical: f64 },

    #[error("singular potential on branch {branch}: orbit point {x} is critical")]
    SingularBranch { branch: usize, x: f64 },

    #[error("partition incomplete at level {level}: cannot bracket critical preimage in cylinder [{left}, {right}]")]
    PartitionIncomplete { level: usize, left: f64, right: f64 },

    #[error("partition depth {requested} exceeds configured maximum {max}")]
    DepthTooLarge { requested: usize, max: usize },

    #[error("point {x} is within tolerance of a partition endpoint")]
    AmbiguousPoint { x: f64 },

    #[error("point {x} lies outside the domain [{left}, {right}]")]
    OutsideDomain { x: f64, left: f64, right: f64 },

    #[error("tower exceeded {cap} domains")]
    TowerTooLarge { cap: usize },

    #[error("no cyclic strongly connected component found below height {height}")]
    ComponentUndetected { height: usize },

    #[error("transitive component has not been computed for this tower")]
    ComponentMissing,

    #[error("no tower edge out of domain {domain} (height cap reached)")]
    NoEdge { domain: usize },

    #[error("base cylinder [{left}, {right}] is not in the transitive part of the tower")]
    BaseNotInTransitivePart { left: f64, right: f64 },

    #[error("no admissible base cylinder at depth {depth}")]
    NoAdmissibleBase { depth: usize },

    #[error("branch enumeration exceeded {cap} live pieces")]
    SchemeTooLarge { cap: usize },

    #[error("inducing scheme has no branches")]
    EmptyScheme,

    #[error("inverse branch composition for word {word:?} is not contracting")]
    BranchNotContracting { word: Vec<usize> },

    #[error("pressure root not bracketed in [{lo}, {hi}]: g(lo) = {g_lo}, g(hi) = {g_hi}")]
    PressureUnbracketed { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    #[error("transfer operator iteration diverged after {iterations} iterations")]
    TransferOperatorDiverged { iterations: usize },

    #[error("Ulam power iteration did not converge in {iterations} iterations (last change {change:e})")]
    UlamNotConverged { iterations: usize, change: f64 },

    #[error("grid resolution mismatch: {left} vs {right} bins")]
    Resolution { left: usize, right: usize },

    #[error("tail under-resolved: only {points} usable tail points")]
    TailUnderresolved { points: usize },

    #[error("schemes are not comparable: base itineraries {left:?} and {right:?} differ")]
    IncomparableSchemes { left: Vec<u8>, right: Vec<u8> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown family `{id}`; registered families: {known}")]
    UnknownFamily { id: String, known: String },

    #[error("output failed: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
