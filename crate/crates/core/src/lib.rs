//! Compiler bug isolation.
//!
//! Ranks compiler source files by suspiciousness from coverage of failing and
//! passing compilations, then asks a chat model to re-rank them using file
//! summaries, the failing program and compilation outputs.

pub mod coverage;
pub mod sbfl;
pub mod llm;
pub mod prompt;
pub mod summarize;
pub mod eval;
pub mod pipeline;
pub mod rerank;
