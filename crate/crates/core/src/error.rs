use std::fmt;

use thiserror::Error;

/// A parameter of the calibration model that the data may fail to pin down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parameter {
    Eta1,
    Eta2,
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parameter::Eta1 => f.write_str("eta1"),
            Parameter::Eta2 => f.write_str("eta2"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("objective is flat; unidentifiable parameters: {}", list(.unidentifiable))]
    Ambiguous {
        unidentifiable: Vec<Parameter>,
        /// Tie-broken minimizer (smallest eta1 + eta2 among the near-optimal grid cells).
        best: Box<crate::estimation::CalibrationResult>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{file}{}: {message}", location(*.line, .field.as_deref()))]
    Parse {
        file: String,
        line: Option<usize>,
        field: Option<String>,
        message: String,
    },

    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

fn location(line: Option<usize>, field: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(line) = line {
        out.push_str(&format!(":{line}"));
    }
    if let Some(field) = field {
        out.push_str(&format!(" (field `{field}`)"));
    }
    out
}

fn list(params: &[Parameter]) -> String {
    params
        .iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
