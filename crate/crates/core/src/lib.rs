//! Citation-count growth prediction from early citation cascades.
//!
//! The pipeline turns timestamped citation data into per-paper cascades
//! ([`ingest`]), resolves them to trees ([`tree`]), encodes each tree as a
//! per-level degree sequence ([`encoding`]) and regresses the log growth with
//! a GRU and convolution network ([`model`], [`train`]) built on a small
//! reverse-mode engine ([`numeric`]).

pub mod config;
pub mod encoding;
pub mod error;
pub mod ingest;
pub mod model;
pub mod numeric;
pub mod probe;
pub mod train;
pub mod tree;

pub use error::{Error, Result};
