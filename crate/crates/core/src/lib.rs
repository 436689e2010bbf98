//! A fully automatic, human-style theorem prover for routine first-order
//! problems about metric spaces and sets. A fixed priority-ordered waterfall
//! of moves transforms a box-structured problem state; the discovered proof
//! is rendered as idiomatic mathematical prose, plain text and LaTeX, in the
//! order the moves were found.

pub mod engine;
pub mod formula;
pub mod library;
pub mod matching;
pub mod moves;
pub mod oracle;
pub mod parser;
pub mod problem;
pub mod render;
pub mod state;
pub mod writeup;
