//! Compiles every code listing in `book/src` as a doctest. Each chapter
//! gets its own module so a failing listing points at its file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/dense_kernel.md")]
pub mod dense_kernel {}
#[doc = include_str!("../../../book/src/runtime.md")]
pub mod runtime {}
#[doc = include_str!("../../../book/src/variants.md")]
pub mod variants {}
#[doc = include_str!("../../../book/src/budgets.md")]
pub mod budgets {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
