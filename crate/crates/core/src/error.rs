use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest error in {table}.{column}{}: {message}", row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    Ingest {
        table: String,
        column: String,
        row: Option<usize>,
        message: String,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("dangling foreign key {table}.{column} -> {target}: rows {rows:?}")]
    Referential {
        table: String,
        column: String,
        target: String,
        rows: Vec<usize>,
    },

    #[error("primary key violation in {table}.{column}: {message}")]
    PrimaryKey {
        table: String,
        column: String,
        message: String,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("document for {table}#{row_id} has no terms")]
    EmptyDocument { table: String, row_id: usize },

    #[error("cannot build an index from zero documents")]
    EmptyIndex,

    #[error("documents from different tables in one index: {0} and {1}")]
    MixedTables(String, String),

    #[error("self-retrieval score of {table}#{row_id} is zero")]
    Normalization { table: String, row_id: usize },

    #[error("no data: {0}")]
    NoData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` has not been run: {missing} is missing")]
    MissingStage { stage: String, missing: PathBuf },

    #[error("malformed {what}: {message}")]
    Format { what: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// Process exit status: 2 for a missing prior stage, 3 for invalid
    /// configuration or input data, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingStage { .. } => 2,
            Error::Config(_)
            | Error::Manifest(_)
            | Error::Ingest { .. }
            | Error::Referential { .. }
            | Error::PrimaryKey { .. } => 3,
            _ => 1,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Ingest { .. } => "ingest",
            Error::Manifest(_) => "manifest",
            Error::Referential { .. } => "referential",
            Error::PrimaryKey { .. } => "primary_key",
            Error::NotFound(_) => "not_found",
            Error::Constraint(_) => "constraint",
            Error::EmptyDocument { .. } => "empty_document",
            Error::EmptyIndex => "empty_index",
            Error::MixedTables(..) => "mixed_tables",
            Error::Normalization { .. } => "normalization",
            Error::NoData(_) => "no_data",
            Error::Config(_) => "config",
            Error::MissingStage { .. } => "missing_stage",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Csv { .. } => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            message: message.into(),
        }
    }
}
