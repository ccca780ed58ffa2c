//! Temporal knowledge-graph question answering through KoPL programs.
//!
//! The pipeline: an LLM drafts a program in the tagged text format
//! ([`program`]), the [`linker`] aligns its mentions with the graph
//! vocabulary, the [`expander`] enumerates argument variants, and the
//! [`engine`] executes them over a [`store::TkgStore`]. [`selfimprove`]
//! closes the loop by keeping programs whose answers hit the gold set.

pub mod engine;
pub mod eval;
pub mod expander;
pub mod linker;
pub mod llm;
pub mod pipeline;
pub mod program;
pub mod selfimprove;
pub mod store;
pub mod time;

pub use engine::{execute_program, ExecError, Value};
pub use program::{parse_draft, serialize_draft, Draft, FunctionName, Program, ProgramNode};
pub use store::{load_quads, Direction, Fact, Focus, QuadFormat, TkgStore};
pub use time::TimeValue;
