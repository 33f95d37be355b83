//! Modality-collaborative transformer (MCT) with hybrid feature
//! reconstruction (HFR) for classification of unaligned multimodal sequences
//! under random per-step feature loss.
//!
//! * [`datasim`]: synthetic dataset generation, feature masking, batching and
//!   the `MMT1` container.
//! * [`mct`]: encoders, re-scaled hyper-modality attention layers, pooling and
//!   the classifier.
//! * [`hfr`]: reconstruction decoders and alignment losses.
//! * [`trainer`]: training strategies, curriculum and early stopping.
//! * [`evalkit`]: metrics, missing-rate sweeps, complexity counters and
//!   gradient checks.
//! * [`config`]: the sectioned run configuration.

pub mod checkpoint;
pub mod config;
pub mod datasim;
mod error;
pub mod evalkit;
pub mod hfr;
pub mod mct;
pub mod params;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// One input stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Audio,
    Vision,
    Language,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Vision, Modality::Language];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Audio => "a",
            Modality::Vision => "v",
            Modality::Language => "l",
        }
    }
}
