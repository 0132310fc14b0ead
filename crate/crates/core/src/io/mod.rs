//! Files: checkpoints, images and experiment configuration.

pub mod checkpoint;
pub mod config;
pub mod image;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, Model};
pub use config::{ExperimentConfig, Preset, Task};
pub use image::{read_image, read_pfm, write_image, write_pfm, write_png};
