//! Attentive illumination decomposition for multi-illuminant white balance.
//!
//! An image lit by several light sources is explained as a per-pixel convex
//! mixture of a few illuminant chromaticities. A slot-attention network
//! predicts one chromaticity and one weight map per slot; their product is the
//! mixed illumination map used for white balance, and the decomposition can be
//! edited light by light.

pub mod error;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{AidError, Result};
