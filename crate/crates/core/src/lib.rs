pub mod image;
pub mod retinex;
pub mod prompt;
pub mod filter;
pub mod mask;
pub mod relight;
pub mod quality;
pub mod weights;
pub mod fusion;
pub mod diffusion;
pub mod pipeline;
pub mod config;
pub mod fixtures;
