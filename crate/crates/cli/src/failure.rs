//! Exit codes and the one-line error format.

use std::fmt;
use std::io::ErrorKind;

use airway_refine::error::Error as CoreError;

/// Failure classes, each with its own exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Other,
    Usage,
    MissingFile,
    Schema,
    InvalidArgument,
    Numeric,
}

impl Kind {
    pub fn code(self) -> i32 {
        match self {
            Kind::Other => 1,
            Kind::Usage => 2,
            Kind::MissingFile => 3,
            Kind::Schema => 4,
            Kind::InvalidArgument => 5,
            Kind::Numeric => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Other => "other",
            Kind::Usage => "usage",
            Kind::MissingFile => "missing-file",
            Kind::Schema => "schema",
            Kind::InvalidArgument => "invalid-argument",
            Kind::Numeric => "numeric",
        }
    }
}

/// An error raised by the CLI itself with a known class.
#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn invalid(message: impl Into<String>) -> anyhow::Error {
    Failure::new(Kind::InvalidArgument, message).into()
}

pub fn schema(message: impl Into<String>) -> anyhow::Error {
    Failure::new(Kind::Schema, message).into()
}

fn core_kind(e: &CoreError) -> Kind {
    match e {
        CoreError::Io { source, .. } if source.kind() == ErrorKind::NotFound => Kind::MissingFile,
        CoreError::Io { .. } => Kind::Other,
        CoreError::Format { .. } | CoreError::Json { .. } | CoreError::Checkpoint(_) => Kind::Schema,
        CoreError::NonFiniteLoss { .. } => Kind::Numeric,
        CoreError::Case { source, .. } => core_kind(source),
        CoreError::Shape { .. }
        | CoreError::InvalidArgument(_)
        | CoreError::Domain(_)
        | CoreError::UndefinedMetric { .. }
        | CoreError::TreeDoesNotFit { .. } => Kind::InvalidArgument,
    }
}

/// The class of the first recognised error in the chain.
pub fn classify(err: &anyhow::Error) -> Kind {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_kind(e);
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return if e.kind() == ErrorKind::NotFound { Kind::MissingFile } else { Kind::Other };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return Kind::Schema;
        }
    }
    Kind::Other
}

/// `error kind=<name> code=<n> msg="<message>"` on one line.
pub fn render(kind: Kind, message: &str) -> String {
    let msg = serde_json::to_string(&message.replace('\n', " ")).expect("strings serialize");
    format!("error kind={} code={} msg={msg}", kind.name(), kind.code())
}
