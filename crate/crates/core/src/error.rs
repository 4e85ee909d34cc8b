// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

use crate::ids::EntityId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameError {
    #[error("pose contains a non-finite component")]
    NonFinite,
    #[error("rotation is not a unit quaternion (norm {0})")]
    NonUnitRotation(f64),
    #[error("scale components must be strictly positive")]
    DegenerateScale,
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("reparenting {child} under {new_parent} would create a cycle")]
    Cycle { child: EntityId, new_parent: EntityId },
    #[error("entity {0} has no Scaler child")]
    NoScaler(EntityId),
    #[error("scaler offsets must use uniform scale")]
    NonUniformScaler,
    #[error("entity {0} still has children")]
    HasChildren(EntityId),
}

/// Failure to read a structured document, with the location serde reported.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DocumentError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("unsupported schema version {found} (expected {expected})")]
    Schema { found: u64, expected: u64 },
}

impl DocumentError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        DocumentError::Invalid { path: path.into(), message: message.into() }
    }
}

impl From<serde_json::Error> for DocumentError {
    fn from(e: serde_json::Error) -> Self {
        DocumentError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
    }
}
