//! Face anonymization: a pose-conditioned U-Net GAN trained with progressive
//! growing, classic baselines (black-out, pixelation, blur) and the
//! evaluation tools used to compare them (FID and detector AP).

pub mod annotations;
pub mod anonymizers;
pub mod autograd;
pub mod cli;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod image_io;
pub mod nn;
pub mod preprocess;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
