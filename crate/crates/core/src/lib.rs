//! Core of the LightAVSeg audio-visual segmentation model.
//!
//! Everything here is pure computation over `alloc` types: a small dense
//! tensor type, a reverse-mode tape with per-scope FLOP accounting, the log-mel
//! audio frontend, toy backbones, the reciprocal audio-visual encoder, the
//! cross-modal fusion decoder, losses and metrics, a dense cross-attention
//! reference block, a synthetic sounding-object scene generator and the AdamW
//! training step. File formats, timing and the command line live in the
//! `lightavseg` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod attention;
pub mod audio;
pub mod backbone;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
