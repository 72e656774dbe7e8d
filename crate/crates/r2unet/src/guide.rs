//! The book, compiled.
//!
//! The mdbook sources under `book/` are included here as module docs so
//! that `cargo test --doc` builds and runs every fenced Rust example in
//! the book. The chapters render with `mdbook build book`; this module
//! exists to keep them honest — a book snippet that stops compiling or
//! asserting fails the test suite, not a reader.
//!
//! One module per chapter, so a failing doc-test names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tensors_and_tape.md")]
pub mod tensors_and_tape {}

#[doc = include_str!("../../../book/src/convolutions.md")]
pub mod convolutions {}

#[doc = include_str!("../../../book/src/blocks.md")]
pub mod blocks {}

#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
