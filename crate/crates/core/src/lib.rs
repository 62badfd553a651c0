//! Unpaired image-to-image translation with cycle consistency and
//! augmentation-based consistency regularization of the discriminators.

pub mod augment;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod models;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
