use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("referenced image file is missing: {}", .0.display())]
    MissingImage(PathBuf),

    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),

    #[error("box {box_index} of image {image_id} exceeds image bounds")]
    OutOfBoundsBox { image_id: String, box_index: usize },

    #[error("invalid record: {0}")]
    Validation(String),

    #[error("io failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("generation failed (request {request_id}): {message}")]
    GenerationFailed { request_id: String, message: String },

    #[error("generation timed out after {0:.1}s")]
    Timeout(f64),

    #[error("model artifact missing: {}", .0.display())]
    ModelMissing(PathBuf),

    #[error("unreadable image {path}: {message}")]
    UnreadableImage { path: String, message: String },

    #[error("class {0} has no training examples")]
    EmptyClass(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergedTraining { epoch: usize, loss: f64 },

    #[error("image dims {actual:?} do not match source dims {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("no valid placement for a {w}x{h} crop")]
    NoValidPlacement { w: u32, h: u32 },

    #[error("crop is empty")]
    EmptyCrop,

    #[error("synthetic-feature checker needs the pristine source crop")]
    MissingReference,

    #[error("no images were generated")]
    EmptyManifest,

    #[error("detection references unknown image id {0}")]
    UnknownImageId(String),

    #[error("malformed detection on line {line}: {message}")]
    MalformedDetection { line: usize, message: String },

    #[error("unknown review session {0}")]
    UnknownSession(String),

    #[error("item {edited_id} is not part of session {session_id}")]
    UnknownItem {
        session_id: String,
        edited_id: String,
    },

    #[error("item {edited_id} already has a verdict in session {session_id}")]
    DuplicateVerdict {
        session_id: String,
        edited_id: String,
    },

    #[error("session {0} already exists")]
    DuplicateSession(String),

    #[error("no reviewed sessions to aggregate")]
    NoSessions,

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingImage(_) => "missing_image",
            Error::MalformedAnnotation(_) => "malformed_annotation",
            Error::OutOfBoundsBox { .. } => "out_of_bounds_box",
            Error::Validation(_) => "validation",
            Error::Io { .. } => "io",
            Error::BackendUnavailable(_) => "backend_unavailable",
            Error::GenerationFailed { .. } => "generation_failed",
            Error::Timeout(_) => "timeout",
            Error::ModelMissing(_) => "model_missing",
            Error::UnreadableImage { .. } => "unreadable_image",
            Error::EmptyClass(_) => "empty_class",
            Error::DivergedTraining { .. } => "diverged_training",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NoValidPlacement { .. } => "no_valid_placement",
            Error::EmptyCrop => "empty_crop",
            Error::MissingReference => "missing_reference",
            Error::EmptyManifest => "empty_manifest",
            Error::UnknownImageId(_) => "unknown_image_id",
            Error::MalformedDetection { .. } => "malformed_detection",
            Error::UnknownSession(_) => "unknown_session",
            Error::UnknownItem { .. } => "unknown_item",
            Error::DuplicateVerdict { .. } => "duplicate_verdict",
            Error::DuplicateSession(_) => "duplicate_session",
            Error::NoSessions => "no_sessions",
            Error::Config(_) => "config",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn unreadable(path: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        Error::UnreadableImage {
            path: path.to_string(),
            message: err.to_string(),
        }
    }
}
