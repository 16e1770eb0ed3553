//! merbin — a two-phase, disk-backed k-mer counting engine.
//!
//! Counting proceeds in two phases over a working directory:
//!
//! 1. **Distribution** ([`distribution`]): reads are cut into clean
//!    fragments, decomposed into super-mers (runs of k-mers sharing a
//!    minimizer, see [`minimizer`]), and appended to one of F temporary bin
//!    files chosen by minimizer value. All occurrences of a k-mer land in
//!    the same bin, so bins can be counted independently.
//! 2. **Counting** ([`counting`]): each bin is re-read, split into k-mers,
//!    and counted in per-worker open-addressing tables with bounded double
//!    hashing; overflow takes an exact emergency spill path. Results stream
//!    to a compact binary file ([`output`]).
//!
//! The [`pipeline`] module wires both phases behind a single configuration;
//! [`cli`] maps the command-line surface onto it.

pub mod cli;
pub mod counting;
pub mod distribution;
pub mod error;
pub mod kmer;
pub mod minimizer;
pub mod ordering;
pub mod output;
pub mod pipeline;
pub mod seq;
pub mod seqio;

pub use error::{Error, Result};
pub use kmer::Kmer;
pub use seq::PackedSeq;
