//! Runs the code blocks of the guide as doc-tests.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}
#[doc = include_str!("../../../book/src/text-format.md")]
pub mod text_format {}
#[doc = include_str!("../../../book/src/kernels.md")]
pub mod kernels {}
#[doc = include_str!("../../../book/src/verifier.md")]
pub mod verifier {}
#[doc = include_str!("../../../book/src/analyses.md")]
pub mod analyses {}
#[doc = include_str!("../../../book/src/fusion.md")]
pub mod fusion {}
#[doc = include_str!("../../../book/src/runtime.md")]
pub mod runtime {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
