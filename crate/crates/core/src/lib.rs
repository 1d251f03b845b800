//! Domain-invariant normal/abnormal heart-sound classification.
//!
//! A recording is resampled to 1000 Hz, cleaned of spikes, split into four
//! frequency bands and segmented into cardiac cycles with a duration-explicit
//! HMM. Cycle windows are embedded by a small 1-D CNN trained with a triplet
//! loss on cross-domain triplets, one network per anchor domain. Each network
//! feeds a KNN classifier, and the per-network record scores are averaged.
//!
//! ```text
//! WAV -> resample -> remove_spikes -> decompose --------------------+
//!                                  \-> envelopes -> HSMM -> cycles -+-> CNN -> KNN -> ensemble
//! ```

pub mod classify_eval;
pub mod cli;
pub mod dataset_io;
pub mod dsp_preprocess;
pub mod embednet;
pub mod error;
pub mod filter;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod segmentation;
pub mod synthgen;

pub use dataset_io::{DatasetIndex, Domain, Label, PcgRecord};
pub use error::{Error, Result};
