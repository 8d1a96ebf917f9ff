use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("invalid array geometry: {0}")]
    Geometry(String),
    #[error("invalid pointing direction: {0}")]
    Direction(String),
    #[error("no half-power crossing found for beam at (az {az:.3}, el {el:.3}) along the {axis} cut")]
    NoHalfPowerCrossing { az: f64, el: f64, axis: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
