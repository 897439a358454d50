//! Checkpoint container, image ingestion, synthetic fixtures and
//! dataset splitting.

pub mod checkpoint;
pub mod fixture;
pub mod image;
pub mod split;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use fixture::{synth_fixture, FixtureKind, SampleRecord};
pub use image::{load_image, standardize, write_mask_pgm};
pub use split::split;
