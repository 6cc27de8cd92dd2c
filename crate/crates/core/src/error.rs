use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate path: fewer than two distinct points")]
    DegeneratePath,

    #[error("parse error at line {line}, column `{column}`: {message}")]
    Parse { line: u64, column: String, message: String },

    #[error("track {track_id}: timestamps not uniform at 100 ms (between {prev_ms} and {next_ms})")]
    Gap { track_id: i64, prev_ms: i64, next_ms: i64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no eligible ego track in dataset")]
    NoEligibleTrack,

    #[error("unknown track id {0}")]
    UnknownTrack(i64),

    #[error("step called on a terminal simulator state")]
    SteppedAfterDone,

    #[error("option stepped after it finished")]
    StepAfterFinish,

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("safety mask has no admissible option")]
    InvalidMask,

    #[error("state {0} has no initiable option")]
    NoInitiableOption(usize),

    #[error("singular linear system")]
    SingularSystem,

    #[error("expert replay ran past the end of track {0}")]
    EndOfTrack(i64),

    #[error("no episode survived to 10 s")]
    NoSurvivors,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code used by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegeneratePath => "DEGENERATE_PATH",
            Error::Parse { .. } => "PARSE",
            Error::Gap { .. } => "GAP",
            Error::Config(_) => "CONFIG",
            Error::NoEligibleTrack => "NO_ELIGIBLE_TRACK",
            Error::UnknownTrack(_) => "UNKNOWN_TRACK",
            Error::SteppedAfterDone => "STEPPED_AFTER_DONE",
            Error::StepAfterFinish => "STEP_AFTER_FINISH",
            Error::Shape { .. } => "SHAPE",
            Error::InvalidMask => "INVALID_MASK",
            Error::NoInitiableOption(_) => "NO_INITIABLE_OPTION",
            Error::SingularSystem => "SINGULAR_SYSTEM",
            Error::EndOfTrack(_) => "END_OF_TRACK",
            Error::NoSurvivors => "NO_SURVIVORS",
            Error::Checkpoint(_) => "CHECKPOINT",
            Error::Io(_) => "IO",
            Error::Json(_) => "JSON",
        }
    }
}
