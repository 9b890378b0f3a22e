use alloc::string::String;
use core::fmt;

use crate::flows::Direction;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform for `op`.
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// Input outside the domain where the operation (or its gradient) is defined.
    Domain { op: &'static str, detail: String },
    /// `backward` was called on a node that is not 1×1.
    NotScalar { rows: usize, cols: usize },
    /// A layer was asked for a direction it does not implement.
    Capability {
        layer: &'static str,
        direction: Direction,
    },
    /// Invalid construction or run parameters.
    Config(String),
    /// A loss or gradient became NaN or infinite.
    NonFinite { what: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => write!(
                f,
                "shape mismatch in {op}: {}x{} vs {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            Error::Domain { op, detail } => write!(f, "domain error in {op}: {detail}"),
            Error::NotScalar { rows, cols } => {
                write!(f, "backward requires a 1x1 root, got {rows}x{cols}")
            }
            Error::Capability { layer, direction } => {
                write!(f, "layer {layer} does not support the {direction} direction")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NonFinite { what } => write!(f, "non-finite value: {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
