//! Colordag: a blockdag mechanism that colors blocks, rewards them by their
//! position in per-color graph minors and extracts a ledger from one color.
//!
//! The crate also ships a deterministic round-based simulator with deviation
//! strategies and checkers for the safety and ledger properties the
//! mechanism is meant to provide.

pub mod analysis;
pub mod dag;
pub mod experiment;
pub mod fixtures;
pub mod ledger;
pub mod minor;
pub mod params;
pub mod reward;
pub mod sim;

pub use dag::{Block, BlockDag, BlockId, BlockMeta, Color, DagError, MinerIndex};
pub use minor::{build_minor, ColorAssigner, MinorDag, MinorVertex, Minors};
