//! All-purpose question answering on a small from-scratch transformer
//! encoder, with leave-one-out attention head importance analysis.
//!
//! Boolean (yes/no) and extractive (span or unanswerable) questions share a
//! single four-way answer classifier plus start/end span scorers. Each
//! attention head can be masked individually, and [`headlens`] measures how
//! much a dev metric moves when it is.

pub mod data;
pub mod error;
pub mod eval;
pub mod headlens;
pub mod model;
pub mod numerics;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
