use alloc::string::String;
use core::fmt;

/// Everything that can go wrong inside the core library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    EmptyModel,
    InputShape { expected: [usize; 4], found: [usize; 4] },
    UnknownLayer(u32),
    ClassRange { class: usize, num_classes: usize },
    Shape(String),
    Cache(&'static str),
    Precondition(String),
    TrainingDiverged { epoch: usize },
    Range(String),
    Dimension(String),
    EmptySequence,
    EmptyAnimation,
    Solver { iterations: usize, residual: f64 },
    Config(String),
    Format(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyModel => write!(f, "model has no layers"),
            Error::InputShape { expected, found } => {
                write!(f, "input shape {found:?} does not match model input {expected:?}")
            }
            Error::UnknownLayer(id) => write!(f, "unknown layer id {id}"),
            Error::ClassRange { class, num_classes } => {
                write!(f, "target class {class} out of range (model has {num_classes} classes)")
            }
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Cache(msg) => write!(f, "missing forward cache: {msg}"),
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
            Error::TrainingDiverged { epoch } => write!(f, "training diverged (NaN loss) in epoch {epoch}"),
            Error::Range(msg) => write!(f, "value out of range: {msg}"),
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::EmptySequence => write!(f, "every layer was skipped; nothing to animate"),
            Error::EmptyAnimation => write!(f, "animation needs at least one frame"),
            Error::Solver { iterations, residual } => {
                write!(f, "imputation solver did not converge after {iterations} iterations (residual {residual:e})")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Format(msg) => write!(f, "malformed data: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
