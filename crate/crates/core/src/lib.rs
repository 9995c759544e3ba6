//! Raw-waveform mispronunciation detection and diagnosis.
//!
//! The pipeline turns audio into phone sequences with a hybrid
//! CTC/attention recognizer whose first layer is a bank of learnable sinc
//! bandpass filters, then scores the recognized phones against canonical
//! and annotated (perceived) phone sequences.
//!
//! Module map:
//! - [`frontend`]: sinc filterbank, conv stack, FBANK baseline, filter export
//! - [`seqmodel`]: encoder, location-aware attention, attention decoder
//! - [`ctc`]: CTC loss, greedy decoding, prefix scoring, brute-force oracle
//! - [`train`]: joint objective, SGD loop, checkpoints, gradient checking
//! - [`decode`]: joint CTC/attention beam search
//! - [`mddeval`]: alignment, PER, detection/diagnosis tallies and metrics
//! - [`corpus`]: synthetic formant corpus, WAV and dataset I/O
//! - [`pipeline`]: synth → train → decode → evaluate, end to end

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod ctc;
pub mod decode;
pub mod error;
pub mod exec;
pub mod frontend;
pub mod mddeval;
pub mod pipeline;
pub mod seqmodel;
pub mod tensor;
pub mod train;

pub use error::{MddError, Result};
pub use exec::Execution;
