//! JSON-configured experiment runs with CSV, tensor and image outputs.

mod config;
mod image;
mod run;

pub use config::{DataConfig, DistConfig, ModelConfig, RunConfig, Subcommand};
pub use image::{decode_image, display_shape, read_image, render_saliency, write_image};
pub use run::{run, RunOutcome};

/// Thread count from `NFRLAB_THREADS`; `0`, unset or unparsable means automatic.
pub fn threads_from_env() -> usize {
    std::env::var("NFRLAB_THREADS").ok().and_then(|v| v.trim().parse().ok()).unwrap_or(0)
}
