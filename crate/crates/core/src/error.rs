use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}{}: {message}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Ingestion {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn ingestion(path: impl Into<PathBuf>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            line,
            message: msg.into(),
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numeric(_) => 3,
            Error::InvalidArgument(_)
            | Error::Ingestion { .. }
            | Error::Parse { .. }
            | Error::SchemaVersion { .. }
            | Error::Io(_) => 2,
        }
    }

    /// Converts a `serde_json` error into a [`Error::Parse`] carrying the
    /// byte offset into `text`.
    pub(crate) fn from_json(err: serde_json::Error, text: &str) -> Self {
        let offset = byte_offset(text, err.line(), err.column());
        Error::Parse {
            offset,
            message: err.to_string(),
        }
    }
}

/// serde_json reports 1-based line and column; column counts bytes.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_offset_counts_previous_lines() {
        let text = "{\n  \"a\": 1,\n  oops\n}";
        let err = serde_json::from_str::<serde_json::Value>(text).unwrap_err();
        let Error::Parse { offset, .. } = Error::from_json(err, text) else {
            panic!("expected parse error");
        };
        assert_eq!(&text[offset..offset + 1], "o");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Error::Config("x".into()).exit_code(), 1);
        assert_eq!(Error::invalid("x").exit_code(), 2);
        assert_eq!(Error::Numeric("x".into()).exit_code(), 3);
    }
}
