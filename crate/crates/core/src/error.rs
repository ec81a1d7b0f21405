use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("rank-deficient data: {0}")]
    RankDeficient(String),

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("models are not nested: {0}")]
    Nesting(String),

    #[error("formula error: {0}")]
    Formula(String),

    #[error("unknown level `{level}` for factor `{factor}`")]
    UnknownLevel { factor: String, level: String },

    #[error("missing level: {0}")]
    MissingLevel(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("estimate out of calibrated range: {0}")]
    OutOfRange(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("undefined share: {0}")]
    UndefinedShare(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("missing Real baseline: {0}")]
    MissingBaseline(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateInput(_) => "degenerate_input",
            Error::Domain(_) => "domain",
            Error::RankDeficient(_) => "rank_deficient",
            Error::SingularDesign(_) => "singular_design",
            Error::Nesting(_) => "nesting",
            Error::Formula(_) => "formula",
            Error::UnknownLevel { .. } => "unknown_level",
            Error::MissingLevel(_) => "missing_level",
            Error::Lookup(_) => "lookup",
            Error::OutOfRange(_) => "out_of_range",
            Error::InvalidModel(_) => "invalid_model",
            Error::UndefinedShare(_) => "undefined_share",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::MissingBaseline(_) => "missing_baseline",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
