use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("arc length {s} outside [0, {length}]")]
    OutOfRange { s: f64, length: f64 },
    #[error("lateral offset {l} crosses the center of curvature (kappa = {kappa})")]
    OffsetSingularity { l: f64, kappa: f64 },
    #[error("point ({x}, {y}) cannot be projected onto the path")]
    ProjectionFailure { x: f64, y: f64 },
    #[error("boundary value problem failed: {0}")]
    BvpFailure(String),
    #[error("degenerate velocity profile: {0}")]
    DegenerateProfile(String),
    #[error("no feasible edge leaves the lattice root")]
    EmptyLattice,
    #[error("invalid road: {0}")]
    InvalidRoad(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
