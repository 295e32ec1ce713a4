//! Test fixtures and independent oracles for the StoryEcho crates.
//!
//! Everything here is deliberately written without calling into the code it
//! is used to check: the graph oracle enumerates paths instead of running a
//! search, the Han reference comes from the Unicode script tables of another
//! crate, and the session oracle carries its own copy of the legal edges.

pub mod checks;
pub mod corpus;
pub mod graphs;
pub mod han;
pub mod machine;
pub mod mutants;
pub mod records;
pub mod text;
