use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event scheduled at t={fire_at} but clock is already at t={now}")]
    EventInPast { fire_at: f64, now: f64 },

    #[error("cannot run simulation backwards: t_end={t_end} < now={now}")]
    TimeReversal { t_end: f64, now: f64 },

    #[error("time {t} outside pattern duration [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("unknown pattern `{0}` (expected ramp, periodic, random or spike)")]
    UnknownPattern(String),

    #[error("invalid traffic pattern: {0}")]
    InvalidPattern(String),

    #[error("episode already finished; call reset first")]
    EpisodeFinished,

    #[error("non-finite {what}: training diverged")]
    NonFinite { what: &'static str },

    #[error("rollout buffer is empty")]
    EmptyBuffer,

    #[error("checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("checkpoint {path}: format version {found} not supported (expected {expected})")]
    CheckpointVersion {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("unknown config key `{0}`")]
    UnknownConfigKey(String),

    #[error("config key `{key}`: cannot parse `{value}`: {reason}")]
    BadConfigValue {
        key: String,
        value: String,
        reason: String,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("config line {line}: {reason}")]
    ConfigSyntax { line: usize, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
