//! Multivariate time series imputation with a variational encoder-decoder
//! and global latent alignment.
//!
//! A Gaussian encoder maps each variable's window to a latent, a decoder
//! reconstructs the window, and training combines a KL regularizer, a masked
//! reconstruction loss and a global alignment loss that pulls latents of
//! masked inputs toward latents of the complete inputs.

pub mod cli;
pub mod config;
pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
