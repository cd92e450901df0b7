use thiserror::Error;

use crate::model::{Scalar, ScalarKind, Symbol, ValidationReport};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unresolved domain target: {0}")]
    UnresolvedDomainTarget(String),
    #[error("cyclic map type: {0}")]
    CyclicMapType(Symbol),
    #[error("key computation failed: {0}")]
    KeyComputationFailed(String),
    #[error("duplicate key {0}")]
    DuplicateKey(Scalar),
    #[error("map-valued keys are not supported")]
    MapValuedKey,
    #[error("cannot compare {left} with {right}")]
    IncomparableScalars { left: ScalarKind, right: ScalarKind },
    #[error("referential violation: {0}")]
    ReferentialViolation(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("identity not externalizable: {0}")]
    IdentityNotExternalizable(String),
    #[error("unknown database {0}")]
    UnknownDatabase(Symbol),
    #[error("database {0} already exists")]
    DatabaseExists(Symbol),
    #[error("rejected rewrite: {0}")]
    RejectedRewrite(ValidationReport),
    #[error("writer busy: a commit on {0} is in flight")]
    WriterBusy(Symbol),
    #[error("in-place only: view contains a mutation node")]
    InPlaceOnly,
    #[error("unknown key: {0}")]
    UnknownKey(String),
    #[error("hidden key: {0} is an engine-managed identity")]
    HiddenKey(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("cyclic schema unsupported: {0}")]
    CyclicSchemaUnsupported(String),
    #[error("factorization conflict on {key}: {}", witnesses.join(" vs "))]
    FactorizationConflict { key: String, witnesses: Vec<String> },
    #[error("key conflict: {0}")]
    KeyConflict(String),
    #[error("unknown function {0}")]
    UnknownFunction(Symbol),
    #[error("function {name} failed: {message}")]
    FunctionFailed { name: Symbol, message: String },
    #[error("not a surrogate-keyed map: {0}")]
    NotSurrogate(String),
    #[error("invalid view: {0}")]
    InvalidView(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("non-conforming map: {0}")]
    NonConforming(ValidationReport),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// A stable snake_case name for diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnresolvedDomainTarget(_) => "unresolved_domain_target",
            Error::CyclicMapType(_) => "cyclic_map_type",
            Error::KeyComputationFailed(_) => "key_computation_failed",
            Error::DuplicateKey(_) => "duplicate_key",
            Error::MapValuedKey => "map_valued_key",
            Error::IncomparableScalars { .. } => "incomparable_scalars",
            Error::ReferentialViolation(_) => "referential_violation",
            Error::DanglingReference(_) => "dangling_reference",
            Error::IdentityNotExternalizable(_) => "identity_not_externalizable",
            Error::UnknownDatabase(_) => "unknown_database",
            Error::DatabaseExists(_) => "database_exists",
            Error::RejectedRewrite(_) => "rejected_rewrite",
            Error::WriterBusy(_) => "writer_busy",
            Error::InPlaceOnly => "in_place_only",
            Error::UnknownKey(_) => "unknown_key",
            Error::HiddenKey(_) => "hidden_key",
            Error::TypeMismatch(_) => "type_mismatch",
            Error::CyclicSchemaUnsupported(_) => "cyclic_schema_unsupported",
            Error::FactorizationConflict { .. } => "factorization_conflict",
            Error::KeyConflict(_) => "key_conflict",
            Error::UnknownFunction(_) => "unknown_function",
            Error::FunctionFailed { .. } => "function_failed",
            Error::NotSurrogate(_) => "not_surrogate",
            Error::InvalidView(_) => "invalid_view",
            Error::InvalidSchema(_) => "invalid_schema",
            Error::NonConforming(_) => "non_conforming",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn mismatch(left: ScalarKind, right: ScalarKind) -> Error {
        Error::IncomparableScalars { left, right }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
