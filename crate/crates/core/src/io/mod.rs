//! File formats: kernel and checkpoint archives, PNG images.

pub mod archive;
pub mod png;
