//! Contextual language-model adaptation for multi-turn conversational speech.
//!
//! The crate bundles everything needed to run desk-scale contextual ASR
//! experiments end to end:
//!
//! * [`corpus`]: conversation data model, tokenization, vocabularies, JSONL
//!   ingestion and a deterministic synthetic dialog generator.
//! * [`ngram`]: backoff n-gram component models with ARPA persistence.
//! * [`nn`]: a small dense network kernel with hand-derived gradients.
//! * [`topic`]: deep averaging topic / dialog-act classifiers.
//! * [`mixture`]: static EM interpolation and per-turn dynamic interpolation
//!   driven by a learned weight adapter.
//! * [`neural_lm`]: a recurrent LM with context-integration modes.
//! * [`asr_eval`]: n-best simulation, alignment, WER/EER and rescoring.
//! * [`pipeline`]: glue shared by the command-line tool and the test suites.
//! * [`verify`]: finite-difference checks of every trainable model.

pub mod asr_eval;
pub mod corpus;
mod error;
pub mod labels;
pub mod mixture;
pub mod neural_lm;
pub mod ngram;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod topic;
pub mod verify;

pub use error::{Error, Result};
