use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants map onto the failure classes the pipeline distinguishes: bad
/// geometry, bad parameters, short inputs, degenerate signals and so on.
/// [`Error::kind`] gives a stable machine-readable tag for each.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error on {axis}: {message}")]
    Dimension { axis: &'static str, message: String },
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("identity error: {0}")]
    Identity(String),
    #[error("degenerate signal: {0}")]
    Degenerate(String),
    #[error("rank error: {0}")]
    Rank(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("batch-size error: {0}")]
    BatchSize(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("input error at frame {index}: {message}")]
    Input { index: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Bounds(_) => "bounds",
            Error::Parameter(_) => "parameter",
            Error::Length(_) => "length",
            Error::Identity(_) => "identity",
            Error::Degenerate(_) => "degenerate",
            Error::Rank(_) => "rank",
            Error::Shape(_) => "shape",
            Error::BatchSize(_) => "batch_size",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Ordering(_) => "ordering",
            Error::Range(_) => "range",
            Error::Format(_) => "format",
            Error::Input { .. } => "input",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
pub(crate) use shape_err;
