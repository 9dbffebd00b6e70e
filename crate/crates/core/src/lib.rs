//! Translating sequences of video feature vectors into action sequences.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic piece:
//! a small dense numeric kernel, LSTM/GRU cells with hand-written backward
//! passes, the four encoder-decoder variants (`LSTM-Mean`, `LSTM-SS`,
//! `LSTM-ED`, `GRU-AA`), teacher-forced training with Adam, BLEU / ROUGE-L /
//! sequence-item accuracy / frame mAP, a seeded synthetic dataset generator,
//! the two-stage captioning pipeline and attention-derived localization.
//!
//! File formats and the command-line interface live in the `actseq` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod caption;
pub mod cells;
pub mod diagnostics;
mod error;
pub mod localize;
pub mod metrics;
pub mod numkit;
pub mod synthdata;
pub mod train;
pub mod translate;
pub mod vocab;

pub use error::{Error, Result};
