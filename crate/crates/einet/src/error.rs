use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the detection pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operands with incompatible shapes.
    Shape { op: &'static str, detail: String },
    /// A value that must be finite was NaN or infinite.
    InvalidValue { op: &'static str, detail: String },
    /// A named tensor is missing from the weights registry.
    MissingWeight { name: String },
    /// A registered parameter never appeared on the gradient tape.
    MissingGradient { name: String },
    /// Invalid configuration.
    Config(String),
    /// Temporal window violation (bad offsets, missing frames).
    Window(String),
    /// Annotation or config text could not be parsed.
    Parse { line: usize, detail: String },
    /// Class name outside the fixed taxonomy.
    Taxonomy { class: String },
    /// A frame id did not resolve to both modalities plus an annotation.
    Pairing { id: String, detail: String },
    /// Dataset directory layout violation.
    Layout(String),
    /// Weights container violation (magic, version, or length).
    Format(String),
    /// Invalid runtime input (empty video, zero-sized image, ...).
    Input(String),
    /// Wrapper around I/O failures.
    Io(String),
}

impl Error {
    /// Short category tag used by the CLI's error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidValue { .. } => "invalid-value",
            Error::MissingWeight { .. } => "weights",
            Error::MissingGradient { .. } => "gradient",
            Error::Config(_) => "config",
            Error::Window(_) => "window",
            Error::Parse { .. } => "parse",
            Error::Taxonomy { .. } => "taxonomy",
            Error::Pairing { .. } => "pairing",
            Error::Layout(_) => "layout",
            Error::Format(_) => "format",
            Error::Input(_) => "input",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidValue { op, detail: detail.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape error in {op}: {detail}"),
            Error::InvalidValue { op, detail } => write!(f, "invalid value in {op}: {detail}"),
            Error::MissingWeight { name } => write!(f, "missing weight tensor: {name}"),
            Error::MissingGradient { name } => write!(f, "parameter not on tape: {name}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Window(msg) => write!(f, "window error: {msg}"),
            Error::Parse { line, detail } => write!(f, "parse error at line {line}: {detail}"),
            Error::Taxonomy { class } => write!(f, "unknown class name: {class}"),
            Error::Pairing { id, detail } => write!(f, "pairing error for id {id}: {detail}"),
            Error::Layout(msg) => write!(f, "dataset layout error: {msg}"),
            Error::Format(msg) => write!(f, "weights format error: {msg}"),
            Error::Input(msg) => write!(f, "input error: {msg}"),
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
