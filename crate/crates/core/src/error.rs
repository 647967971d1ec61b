// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use crate::syntax::Span;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("grammar `{0}` is not available")]
    GrammarUnavailable(String),

    #[error("parser failed to produce a tree")]
    ParseFailed,

    #[error("overlapping edits at {first:?} and {second:?}")]
    OverlappingEdits { first: Span, second: Span },

    #[error("edit span {span:?} is out of bounds for source of length {len}")]
    EditOutOfBounds { span: Span, len: usize },

    #[error("node does not belong to this tree")]
    ForeignNode,

    #[error("corpus file {path}: {source}")]
    CorpusIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate case_id `{0}` in corpus")]
    DuplicateCase(String),

    #[error("case `{case_id}`: {reason}")]
    InvalidCase { case_id: String, reason: String },

    #[error("method `{method}` not found in class `{class}`")]
    MethodNotFound { class: String, method: String },

    #[error("source does not tokenize: {0}")]
    Lex(String),

    #[error("renaming collision: `{0}`")]
    RenamingCollision(String),

    #[error("prompt error: {0}")]
    Prompt(String),

    #[error("perturbed location {0:?} does not address a node in the solution tree")]
    LocationNotFound(Vec<u32>),

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("test shim: {0}")]
    Shim(String),

    #[error("model backend: {0}")]
    Backend(String),

    #[error("stage `{stage}` requires artifacts from `{missing}`")]
    MissingStage { stage: String, missing: String },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
