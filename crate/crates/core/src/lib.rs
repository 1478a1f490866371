//! Out-of-distribution detection for camera inputs.
//!
//! Image embeddings from any encoder (the latent `v`) can be combined with
//! language-similarity features (`pi`, `pibar`: cosine similarities between a
//! CLIP image embedding and CLIP text embeddings of normal or anomalous scene
//! descriptions) according to a [`recipe::Recipe`]. Calibration averages the
//! composed vectors of half the in-distribution data, fits a Gamma
//! distribution to the cosine distances of the other half, and places the
//! detection threshold at a chosen quantile. Samples farther than the
//! threshold are flagged as out of distribution.
//!
//! ```no_run
//! use ood_sentinel::calibration::{calibrate, CalibrationConfig};
//! use ood_sentinel::detection::batch_detect;
//! use ood_sentinel::embedding_io::read_embedding_file;
//! use ood_sentinel::recipe::parse_recipe;
//! use ood_sentinel::representation::EmbeddingInputs;
//!
//! # fn main() -> ood_sentinel::Result<()> {
//! let id = read_embedding_file("id.emb")?;
//! let inputs = EmbeddingInputs { latents: Some(&id), ..Default::default() };
//! let model = calibrate(&inputs, &CalibrationConfig::new(parse_recipe("v")?))?;
//!
//! let test = read_embedding_file("test.emb")?;
//! for r in batch_detect(&model, Some(&test), None, None, None)? {
//!     println!("{} {} {}", r.index, r.epsilon, r.verdict);
//! }
//! # Ok(())
//! # }
//! ```

pub mod calibration;
pub mod cli;
pub mod detection;
pub mod embedding_io;
mod error;
pub mod evaluation;
pub mod recipe;
pub mod representation;
pub mod rng;

pub use error::{Error, ErrorClass, Result};
