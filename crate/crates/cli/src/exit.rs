//! Mapping failures to exit codes and one-line diagnostics.

use crate::config::{one_line, ConfigError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        }
    }
}

fn library_kind(e: &refracta::Error) -> ErrorKind {
    use refracta::Error as E;
    match e {
        E::Argument(_) => ErrorKind::Config,
        E::Io { .. }
        | E::Parse { .. }
        | E::Json(_)
        | E::Image(_)
        | E::EmptyHull
        | E::NonManifold(_)
        | E::Consistency(_) => ErrorKind::Data,
        E::EmptySurface(_) | E::CgNonConvergence { .. } | E::Divergence(_) | E::Degenerate(_) => ErrorKind::Numerical,
    }
}

/// Kind and offending config key of the first recognizable cause. Anything
/// unrecognized counts as a data error.
pub fn classify(err: &anyhow::Error) -> (ErrorKind, Option<String>) {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<ConfigError>() {
            return (ErrorKind::Config, Some(c.key.clone()));
        }
        if let Some(e) = cause.downcast_ref::<refracta::Error>() {
            return (library_kind(e), None);
        }
    }
    (ErrorKind::Data, None)
}

/// `error kind=<kind> code=<n> [key=<key>] message="<json string>"`
pub fn diagnostic(err: &anyhow::Error) -> (i32, String) {
    let (kind, key) = classify(err);
    let message = one_line(&format!("{err:#}"));
    let quoted = serde_json::to_string(&message).unwrap_or_else(|_| format!("{message:?}"));
    let key = key.map(|k| format!(" key={k}")).unwrap_or_default();
    (
        kind.code(),
        format!("error kind={} code={}{key} message={quoted}", kind.name(), kind.code()),
    )
}
