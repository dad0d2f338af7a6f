use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector is not tangent at the base point (inner product {0:e})")]
    NonTangent(f64),
    #[error("tangent vector norm {0} is outside the injectivity radius π")]
    OutOfInjectivity(f64),
    #[error("log map undefined at the antipode of the base point")]
    AntipodalPoint,
    #[error("rotation between antipodal points needs an explicit rotation plane")]
    AntipodalAmbiguity,
    #[error("point coincides with a pole of the subsphere axis")]
    PoleDegenerate,
    #[error("vector norm {0} deviates too far from 1")]
    NotUnit(f64),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("score out of range at level {level}: offset angle {angle} leaves (0, π)")]
    ScoreOutOfRange { level: usize, angle: f64 },
    #[error("requested rank {rank} exceeds the maximum {max}")]
    RankTooLarge { rank: usize, max: usize },
    #[error("row {row} is not centered (mean {mean:e})")]
    NotCentered { row: usize, mean: f64 },
    #[error("case mismatch: {0}")]
    CaseMismatch(String),
    #[error("group {0} is empty")]
    EmptyGroup(u8),
    #[error("permutation statistics have zero spread")]
    DegeneratePermutationSpread,
    #[error("test set contains a single class")]
    SingleClassTest,
    #[error("insufficient class size: {0}")]
    InsufficientClassSize(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Variant name, used by the command line front end for diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonTangent(_) => "NonTangent",
            Error::OutOfInjectivity(_) => "OutOfInjectivity",
            Error::AntipodalPoint => "AntipodalPoint",
            Error::AntipodalAmbiguity => "AntipodalAmbiguity",
            Error::PoleDegenerate => "PoleDegenerate",
            Error::NotUnit(_) => "NotUnit",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::DegenerateShape(_) => "DegenerateShape",
            Error::DegenerateData(_) => "DegenerateData",
            Error::ScoreOutOfRange { .. } => "ScoreOutOfRange",
            Error::RankTooLarge { .. } => "RankTooLarge",
            Error::NotCentered { .. } => "NotCentered",
            Error::CaseMismatch(_) => "CaseMismatch",
            Error::EmptyGroup(_) => "EmptyGroup",
            Error::DegeneratePermutationSpread => "DegeneratePermutationSpread",
            Error::SingleClassTest => "SingleClassTest",
            Error::InsufficientClassSize(_) => "InsufficientClassSize",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }

    /// True for failures caused by the input data rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NotUnit(_)
                | Error::DimensionMismatch { .. }
                | Error::DegenerateShape(_)
                | Error::RankTooLarge { .. }
                | Error::NotCentered { .. }
                | Error::CaseMismatch(_)
                | Error::EmptyGroup(_)
                | Error::SingleClassTest
                | Error::InsufficientClassSize(_)
                | Error::IndexOutOfRange { .. }
                | Error::InvalidConfig(_)
                | Error::Parse(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
