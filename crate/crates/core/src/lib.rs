//! Desk-scale laboratory for keyword-targeted trojan-horse patch attacks on
//! text-to-image retrieval.
//!
//! The crate provides the full loop: a deterministic synthetic image/caption
//! corpus ([`synthworld`]), a small trainable dual-encoder matcher
//! ([`matcher`]), a patch generator that optimizes a beacon-code patch toward
//! a target keyword ([`attack`]), and the retrieval harness that measures
//! what the attack does to Recall@K ([`retrieval`]).
//!
//! Core array math lives in [`numerics`] and is generic over the scalar type;
//! the rest of the crate works in `f64` through the [`Tensor`] alias.

pub mod attack;
pub mod error;
pub mod matcher;
pub mod numerics;
pub mod ppm;
pub mod retrieval;
pub mod rng;
pub mod stats;
pub mod synthworld;

pub use error::{Error, ErrorClass, Result};

/// Dense `f64` array used for images, patches and parameters.
pub type Tensor = numerics::Tensor<f64>;

/// Gradient-check report over `f64` probes.
pub type GradCheckReport = numerics::GradCheckReport;
