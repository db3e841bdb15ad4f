use thiserror::Error;

/// Errors raised by parsing, validation and the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("line {line}: header mismatch, expected `{expected}`, found `{found}`")]
    Header {
        line: usize,
        expected: String,
        found: String,
    },

    #[error("duplicate trial id `{0}`")]
    DuplicateTrialId(String),

    #[error("trial `{0}`: label is inconsistent with speaker identity")]
    LabelSpeakerMismatch(String),

    #[error("trial `{0}`: condition does not match stimulus styles")]
    ConditionStyleMismatch(String),

    #[error("trial `{0}`: stimulus paired with itself")]
    SelfPairedStimulus(String),

    #[error("stimulus `{0}` appears with conflicting speaker or style")]
    InconsistentStimulus(String),

    #[error("invalid identifier `{0}`: must be non-empty and free of whitespace")]
    InvalidId(String),

    #[error("trial `{0}`: score is not finite")]
    NonFiniteScore(String),

    #[error("coverage mismatch: {0}")]
    CoverageMismatch(String),

    #[error("degenerate key: at least one target and one non-target trial are required")]
    DegenerateKey,

    #[error("unknown trial id `{0}`")]
    UnknownTrialId(String),

    #[error("unknown listener `{0}`")]
    UnknownListener(String),

    #[error("duplicate response for listener `{listener}`, trial `{trial}`, order {order}")]
    DuplicateResponse {
        listener: String,
        trial: String,
        order: String,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("subset sizes {n_easy} + {n_hard} exceed population {population}")]
    SubsetSizesExceedPopulation {
        n_easy: usize,
        n_hard: usize,
        population: usize,
    },

    #[error("partitions cover different speaker populations")]
    PopulationMismatch,

    #[error("infeasible inventory: {0}")]
    InfeasibleInventory(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
