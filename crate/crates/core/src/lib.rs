// SPDX-License-Identifier: Apache-2.0

//! Generation, identification, and evaluation of context adaptation bugs.
//!
//! A *context adaptation bug* (CtxBug) is code that is plausible on its own but
//! wrong once it is dropped into a particular class. This crate builds a
//! benchmark of such bugs from a class-level corpus and measures how well code
//! models repair them:
//!
//! 1. [`perturb`] masks task-relevant elements of each reference method with
//!    placeholders, using ten rules grouped into four adaptation tasks.
//! 2. [`obfuscate`] renames user identifiers so that a model cannot recall the
//!    reference, and [`llm`] asks a model to fill the placeholders without
//!    seeing the class.
//! 3. [`identify`] keeps the variants that differ from the reference only at
//!    the masked locations (via [`differ`], a GumTree-style tree matcher) and
//!    that fail the class tests ([`testexec`]).
//! 4. [`baselines`] derives the placeholder-masked and isolated-bug settings,
//!    and [`evaluate`] computes Pass@1, Resolution Rate, and token confidence.
//!
//! [`pipeline`] wires the stages together with resumable on-disk artifacts.

pub mod baselines;
pub mod corpus;
pub mod differ;
mod error;
pub mod evaluate;
pub mod identify;
pub mod llm;
pub mod obfuscate;
pub mod perturb;
pub mod pipeline;
pub mod syntax;
pub mod testexec;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}
