//! Semantic topic signals from timestamped multi-label image annotations.
//!
//! The pipeline runs in stages, one module each:
//!
//! - [`ingest`]: parse `.jsonl` annotation dumps, build the source-prefixed
//!   label vocabulary, and apply the document-frequency filter.
//! - [`corpus`]: bag-of-label-words vectors, per-camera image-label matrices
//!   and per-camera tf-idf reweighting.
//! - [`topics`]: LDA fit by online variational Bayes, held-out perplexity and
//!   topic-count selection by rate of perplexity change.
//! - [`signals`]: label and topic signals, linear resampling, downsampling,
//!   subsequence embeddings and time windows.
//! - [`changepoint`]: exact penalized mean-change segmentation, event pairing
//!   and calendar validation.
//! - [`ratio`]: RuLSIF relative density-ratio estimation and relative Pearson
//!   divergence.
//! - [`detect`]: RPDAS window anomaly scores, threshold sweeps and PR curves.
//! - [`synth`]: ground-truth annotation stream generator.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod changepoint;
pub mod corpus;
pub mod detect;
pub mod error;
pub mod ingest;
pub mod ratio;
pub mod rng;
pub mod signals;
pub mod synth;
pub mod time;
pub mod topics;

pub use error::{Error, Result};

/// Shortest round-trip decimal form of a float, always with a decimal point
/// or exponent so the column type survives a CSV round trip.
pub fn fmt_f64(x: f64) -> String {
    let mut s = format!("{x}");
    if x.is_finite() && !s.contains('.') {
        s.push_str(".0");
    }
    s
}
