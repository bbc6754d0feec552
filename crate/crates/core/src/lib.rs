//! Balance-aware sequence sampling for multi-modal classification.
//!
//! Samples are scored by how well their modalities agree and how hard they
//! are for the current model ([`measurer`]); training sequences then move
//! from balanced to imbalanced samples, either through a fixed ranking with a
//! pacing function or through learned sampling probabilities
//! ([`scheduler`]). [`trainer`] runs the whole loop on the small exact-gradient
//! model in [`mmnet`], over data from [`datagen`], scored by [`evalkit`].

pub mod datagen;
pub mod error;
pub mod evalkit;
pub mod measurer;
pub mod mmnet;
pub mod numkit;
pub mod scheduler;
pub mod trainer;

pub use error::{Error, Result};
