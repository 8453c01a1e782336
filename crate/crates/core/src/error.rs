use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("path count {paths} outside 1..={max}")]
    InvalidPathCount { paths: usize, max: usize },
    #[error("tap index {tap} out of range (channel has {n_taps} taps)")]
    TapOutOfRange { tap: usize, n_taps: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("frame length {frame_len} is not a multiple of the tap count {n_taps}")]
    NonIntegerSubframes { frame_len: usize, n_taps: usize },
    #[error("probe schedule covers {covered} instants, frame needs {needed}")]
    ScheduleTooShort { covered: usize, needed: usize },
    #[error("no traces supplied")]
    EmptyTraces,
    #[error("every recovered support is empty")]
    EmptySupport,
    #[error("reference channel has zero energy")]
    ZeroChannel,
}
