//! Audio-only bird species identification with frozen-feature transfer
//! classifiers.
//!
//! The pipeline runs clip -> pre-emphasis -> Hamming framing -> energy
//! segmentation -> three spectrogram channels (STFT, Mel-cepstral, chirplet)
//! -> 224x224 images -> frozen backbone features -> small trainable heads.
//! Heads are trained per channel (TF) or fused by concatenating features
//! (Fe-fuse) or per-channel softmax outputs (Re-fuse), and scored by mean
//! average precision.

pub mod backbone;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod signal;
pub mod tfr;

pub use error::{Error, Result};

/// Derives an independent stream seed from a base seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
