//! Generator, discriminator and the kernel decoder.

pub mod conv;
pub mod discriminator;
pub mod generator;
pub mod params;

pub use discriminator::{
    forward_discriminator, init_discriminator, DiscriminatorCache, DiscriminatorConfig, DiscriminatorGrads,
    DiscriminatorParams,
};
pub use generator::{derive_kernel, forward_generator, init_generator, GeneratorConfig, GeneratorParams};
pub use params::{ParamSet, ParamTensor};
