//! Test-time modification for fixed vision models.
//!
//! Instead of adapting a model to a shifted test domain, each test image is
//! edited toward the model's training domain by an instruction-following
//! image editor, and the model is run on both versions:
//!
//! 1. a multimodal language model writes the editing prompt from a
//!    structured meta-prompt ([`prompting`]);
//! 2. the editor produces a pseudo-source image, cached by content
//!    ([`generation`]);
//! 3. the pseudo-source image is resampled to the original size;
//! 4. the unchanged model predicts on both images ([`inference`]);
//! 5. segmentation posteriors are averaged, other tasks keep the
//!    pseudo-source prediction ([`fusion`]);
//! 6. predictions are scored ([`metrics`]) and reported ([`report`]).
//!
//! [`runner`] ties the stages together behind a config file ([`config`]).
//! Every remote dependency has an in-process mock, so the whole pipeline
//! runs offline.
//!
//! ```
//! use ttm_core::fusion::{fuse_segmentation, argmax_map};
//! use ttm_core::inference::SegProbMap;
//!
//! let original = SegProbMap::new(2, 1, 1, vec![0.3, 0.7], 1e-3)?;
//! let pseudo = SegProbMap::new(2, 1, 1, vec![0.9, 0.1], 1e-3)?;
//! let fused = fuse_segmentation(&pseudo, &original, 0.5)?;
//! assert_eq!(fused.pixel(0, 0), vec![0.6, 0.4]);
//! assert_eq!(argmax_map(&fused).labels(), &[0]);
//! # Ok::<(), ttm_core::Error>(())
//! ```

pub mod config;
pub mod datasets;
pub mod digest;
pub mod error;
pub mod fixtures;
pub mod fusion;
pub mod generation;
pub mod http;
pub mod image;
pub mod inference;
pub mod labels;
pub mod metrics;
pub mod numeric;
pub mod prompting;
pub mod report;
pub mod retry;
pub mod runner;
pub mod task;
pub mod tensor;

pub use error::{Error, Result};
