//! Gaussian encoder, decoder, projector and their checkpoint format.

pub mod checkpoint;
mod forward;
mod params;

pub use forward::{
    decode_rows, encode_rows, from_rows, linear, project_rows, reparameterize, reparameterize_vars,
    standard_normal, to_rows, LatentDistribution, LatentVars, LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
pub use params::{
    Attention, DecoderParams, EncoderParams, Linear, ModelConfig, ModelParams, ProjectorParams,
};
