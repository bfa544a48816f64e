//! Meta-learned blur-kernel estimation for blind super-resolution.
//!
//! A deep linear generator learns to downscale patches of a low-resolution
//! image so that a discriminator cannot tell them from the image's own
//! patches; the generator's effective filter is the blur kernel. Both
//! networks start from initializations meta-learned over synthetic
//! degradation tasks, so a few hundred adaptation steps suffice per image.

pub mod adapt;
pub mod degrade;
pub mod error;
pub mod harness;
pub mod io;
pub mod kernelgen;
pub mod losses;
pub mod metalearn;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod parallel;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
