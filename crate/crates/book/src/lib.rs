// SPDX-License-Identifier: Apache-2.0

//! The guide under `book/`, compiled so that its Rust snippets run as
//! doctests. One module per chapter keeps failures easy to trace.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/corpus.md")]
pub mod corpus {}

#[doc = include_str!("../../../book/src/perturbation.md")]
pub mod perturbation {}

#[doc = include_str!("../../../book/src/obfuscation.md")]
pub mod obfuscation {}

#[doc = include_str!("../../../book/src/differencing.md")]
pub mod differencing {}

#[doc = include_str!("../../../book/src/identification.md")]
pub mod identification {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
