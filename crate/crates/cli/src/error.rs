use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid value for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] msgnet::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Re-homes a core configuration error under `prefix`.
    pub fn in_section(err: msgnet::Error, prefix: &str) -> Self {
        match err {
            msgnet::Error::Config { field, reason } => CliError::Config {
                field: if field.starts_with(&format!("{prefix}.")) {
                    field
                } else {
                    format!("{prefix}.{field}")
                },
                message: reason,
            },
            other => other.into(),
        }
    }

    fn kind_and_field(&self) -> (&'static str, Option<&str>) {
        use msgnet::Error as E;
        match self {
            CliError::Config { field, .. } => ("config", Some(field)),
            CliError::Io { .. } => ("io", None),
            CliError::Json(_) => ("json", None),
            CliError::Core(e) => match e {
                E::Config { field, .. } => ("config", Some(field)),
                E::Parse { .. } => ("parse", None),
                E::Shape(_) => ("shape", None),
                E::NonFinite(_) => ("non_finite", None),
                E::DegenerateLimit(_) => ("degenerate_limit", None),
                E::Invalid(_) => ("invalid", None),
                E::Checkpoint(_) => ("checkpoint", None),
                E::Image { .. } => ("image", None),
                E::Io(_) => ("io", None),
                E::Json(_) => ("json", None),
                E::Csv(_) => ("csv", None),
            },
        }
    }

    /// Single-line JSON: `{"error": kind, "field": name or null, "message": text}`.
    pub fn to_json_line(&self) -> String {
        let (kind, field) = self.kind_and_field();
        json!({ "error": kind, "field": field, "message": self.to_string() }).to_string()
    }
}
