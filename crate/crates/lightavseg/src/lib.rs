//! File formats, run directories and the command line for `lightavseg-core`.
//!
//! - WAV (16-bit PCM) and PNG (8-bit RGB frames, grayscale masks) IO
//! - `LMEL` spectrogram and `TNSR` tensor blobs
//! - binary checkpoints holding config, parameters, Adam moments and RNG state
//! - flat `key=value` run configs
//! - the AVSBench-style clip directory layout
//! - train / eval / bench / gradcheck / synth-data / inspect drivers
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod harness;
pub mod image;
pub mod layout;
pub mod tensor_io;
pub mod wav;

pub use error::{Error, Result};
