//! Pseudo-label generation for panoramic semantic segmentation.
//!
//! The crate works purely on serialized model outputs: SAM-style instance
//! masks and teacher-assistant / student logits. It plans sliding windows
//! over equirectangular images, fuses masks with TA logits into pseudo
//! labels, refines boundaries inside window overlaps, evaluates the
//! knowledge-adaptation losses and scores results with mIoU.

pub mod boundary;
pub mod config;
pub mod consistency;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod losses;
pub mod maps;
pub mod pipeline;
pub mod rle;
pub mod synth;
pub mod window;

pub use error::{Error, Result};
pub use maps::{BinaryMap, BoundaryMap, ImageDims, LabelMap, LogitsMap, ProbMap, Rect};
