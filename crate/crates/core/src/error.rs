use core::fmt;

use crate::tensorgrad::GradError;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    Grad(GradError),
    TimeOutOfRange(f64),
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    GroupTooSmall(usize),
    InvalidConfig(&'static str),
    EmptyDataset,
    /// A loss or update went non-finite.
    Diverged {
        stage: &'static str,
        step: u64,
        value: f64,
    },
    WindowTooLarge {
        window: usize,
        total: usize,
    },
    Degenerate(&'static str),
    InvalidInstance(&'static str),
}

impl From<GradError> for Error {
    fn from(e: GradError) -> Self {
        Error::Grad(e)
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Grad(e) => write!(f, "{e}"),
            Error::TimeOutOfRange(t) => write!(f, "timestep {t} outside [0, 1]"),
            Error::Shape { what, expected, got } => {
                write!(f, "{what}: expected length {expected}, got {got}")
            }
            Error::GroupTooSmall(g) => write!(f, "group size {g} < 2; advantages undefined"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::EmptyDataset => write!(f, "dataset is empty"),
            Error::Diverged { stage, step, value } => {
                write!(f, "{stage} diverged at step {step} (value {value})")
            }
            Error::WindowTooLarge { window, total } => {
                write!(f, "window of {window} clips exceeds total of {total}")
            }
            Error::Degenerate(msg) => write!(f, "degenerate input: {msg}"),
            Error::InvalidInstance(msg) => write!(f, "invalid instance: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T, E = Error> = core::result::Result<T, E>;
