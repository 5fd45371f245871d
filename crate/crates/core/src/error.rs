use thiserror::Error;

/// Failure classes reported by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum QnqError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value {0} is outside the unit range [0, 1]")]
    Range(f64),

    #[error("dimension mismatch: {left_width}x{left_height} vs {right_width}x{right_height}")]
    DimensionMismatch {
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
    },
}

impl QnqError {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        QnqError::Format(msg.into())
    }

    pub(crate) fn capacity(msg: impl Into<String>) -> Self {
        QnqError::Capacity(msg.into())
    }

    pub(crate) fn integrity(msg: impl Into<String>) -> Self {
        QnqError::Integrity(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        QnqError::InvalidArgument(msg.into())
    }

    pub(crate) fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
        if a != b {
            return Err(QnqError::DimensionMismatch {
                left_width: a.0,
                left_height: a.1,
                right_width: b.0,
                right_height: b.1,
            });
        }
        Ok(())
    }

    /// Short machine-readable class name, stable across releases.
    pub fn class(&self) -> &'static str {
        match self {
            QnqError::Io(_) => "io",
            QnqError::Format(_) => "format",
            QnqError::Capacity(_) => "capacity",
            QnqError::Integrity(_) | QnqError::DimensionMismatch { .. } => "integrity",
            QnqError::InvalidArgument(_) | QnqError::Range(_) => "usage",
        }
    }
}

impl From<image::ImageError> for QnqError {
    fn from(err: image::ImageError) -> Self {
        match err {
            image::ImageError::IoError(e) => QnqError::Io(e),
            other => QnqError::Format(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, QnqError>;
