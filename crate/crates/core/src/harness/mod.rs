//! Operational shell: benchmark generation, evaluation, SR adapters, plots
//! and the synthetic smoke experiment.

pub mod benchmark;
pub mod config;
pub mod evaluate;
pub mod plot;
pub mod records;
pub mod smoke;
pub mod sr;
pub mod synth;

use std::path::Path;

use log::warn;

use crate::degrade::Dataset;
use crate::error::{Error, Result};
use crate::io::png::{list_images, read_image};

/// Loads every PNG in `dir` as a training image, skipping unreadable files.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut images = Vec::new();
    for path in list_images(dir)? {
        match read_image(&path) {
            Ok(img) => {
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
                images.push((id, img));
            }
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if images.is_empty() {
        return Err(Error::Empty(format!("no readable images in {}", dir.display())));
    }
    Ok(Dataset::new(images))
}
