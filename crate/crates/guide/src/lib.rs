//! The book chapters, compiled as doc-tests.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/neural-core.md")]
pub mod neural_core {}

#[doc = include_str!("../../../book/src/embedding.md")]
pub mod embedding {}

#[doc = include_str!("../../../book/src/hmm.md")]
pub mod hmm {}

#[doc = include_str!("../../../book/src/ssl.md")]
pub mod ssl {}

#[doc = include_str!("../../../book/src/em.md")]
pub mod em {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
