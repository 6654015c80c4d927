use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {point:?} lies outside the domain bounding box")]
    DomainQuery { point: Vec<f64> },

    #[error("point {point:?} is outside the tube (|d_s| = {distance}, tube radius {tube_radius})")]
    TubeViolation {
        point: Vec<f64>,
        distance: f64,
        tube_radius: f64,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("time {t} outside the force horizon [{start}, {end}]")]
    Horizon { t: f64, start: f64, end: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("no sign change on [{t0}, {t1}]")]
    Bracket { t0: f64, t1: f64 },

    #[error("mode error: {0}")]
    Mode(String),

    #[error("step size underflow at t = {t} (h = {h})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("penalty run left the tube: penetration {penetration} >= tube radius {tube_radius} (k = {k})")]
    InvalidRun {
        k: f64,
        penetration: f64,
        tube_radius: f64,
    },

    #[error("counterexample construction failed: {0}")]
    Construction(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("i/o error: {0}")]
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

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
