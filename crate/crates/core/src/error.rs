use std::fmt;

use thiserror::Error;

/// Which inhibitory scaling synapse of a three-compartment neuron is meant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaSlot {
    Gamma1,
    Gamma2,
}

impl fmt::Display for GammaSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaSlot::Gamma1 => f.write_str("gamma1"),
            GammaSlot::Gamma2 => f.write_str("gamma2"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("unknown gesture label `{0}`")]
    UnknownLabel(String),
    #[error("window of {length} samples does not fit a recording of {available}")]
    WindowTooLong { length: usize, available: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class {0} has too few windows or recordings to split")]
    EmptyClass(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("{which} = {value} is outside the hardware range [1, 255]")]
    OutOfHardwareRange { which: GammaSlot, value: i64 },
    #[error("decay code {code} for {which} is outside [0, 4096]")]
    InvalidDecay { which: &'static str, code: i64 },
    #[error("missing energy coefficient for `{0}`")]
    MissingCoefficient(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
