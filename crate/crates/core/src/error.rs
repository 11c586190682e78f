use std::path::PathBuf;

/// Errors surfaced by the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("Picard iteration failed to contract after {iterations} iterations (last gap {last_gap:e})")]
    IterationDiverged {
        iterations: usize,
        last_gap: f64,
        gaps: Vec<f64>,
    },
    #[error("merge conflict: inputs carry different config hashes {offenders:?}")]
    MergeConflict { offenders: Vec<String> },
    #[error("I/O failure on {path:?}{}: {source}", seed.map(|s| format!(" (seed {s})")).unwrap_or_default())]
    Io {
        path: PathBuf,
        seed: Option<u64>,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed data in {path:?}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn io(path: impl Into<PathBuf>, seed: Option<u64>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            seed,
            source,
        }
    }
}

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(LabError::Domain(format!("{name} must be finite, got {v}")))
    }
}
