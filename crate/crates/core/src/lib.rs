//! Auditory attention decoding (AAD) from multi-channel EEG.
//!
//! The crate covers the full batch pipeline: dataset model and synthetic
//! data generation ([`corpus`]), signal-processing primitives ([`dsp`]),
//! per-trial EEG cleaning ([`preprocess`]), the regularized backward
//! stimulus-reconstruction decoder ([`decoder`]), cross-validated
//! evaluation and statistics ([`evalkit`]), and greedy sensor-node
//! selection ([`nodesel`]).
//!
//! Heavy inner loops (per-trial preprocessing, CV folds, candidate
//! scoring) run on rayon when the `parallel` feature is enabled
//! (default) and fall back to plain iterators without it. Results are
//! reduced in deterministic order either way, so outputs are identical
//! across thread counts.

pub mod corpus;
pub mod decoder;
pub mod dsp;
pub mod evalkit;
pub mod nodesel;
pub mod preprocess;

mod linalg;
pub mod par;

pub use corpus::{ChannelId, Montage, Recording, SampleMask, Setup, Side, Trial};
pub use decoder::{Decision, Decoder, LagGrid};
pub use preprocess::{PipelineConfig, PreparedTrial, ReferenceScheme, SetupSelection};
