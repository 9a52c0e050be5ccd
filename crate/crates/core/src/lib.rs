//! Unsupervised adaptation of topic-mixture unigram language models from ASR
//! confusion networks.
//!
//! * [`corpus`]: vocabulary, confusion networks and the CNET text format.
//! * [`topics`]: Witten-Bell topic models, mixture weights, unigrams.
//! * [`channel`]: the ASR channel estimated from bin co-occurrences.
//! * [`adapt`]: self-training and confusion-aware EM for the mixture weights.
//! * [`eval`]: perplexity and constrained perplexity.
//! * [`synth`]: synthetic conversations with known weights.

pub mod adapt;
pub mod channel;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod numfmt;
pub mod par;
pub mod synth;
pub mod topics;

pub use error::{Error, Result};
