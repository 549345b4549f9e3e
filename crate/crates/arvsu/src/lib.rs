//! Multi-modal addressee recognition.
//!
//! Given a speaking turn from first-person video — a saliency feature
//! vector, speaker-appearance features with a head location, and the
//! utterance transcript — this crate classifies whom the speaker is
//! addressing: entities in their line of sight, the photographer behind
//! the camera, or someone else. It contains the complete system:
//!
//! * a small reverse-mode gradient engine ([`autodiff`]) over dense
//!   [`tensor`]s,
//! * the fused classifier and its unimodal ablations ([`model`], built
//!   from [`layers`]),
//! * corpus handling: annotation collapsing, splits, class weighting and
//!   a synthetic generator ([`corpus`]),
//! * tokenisation, vocabulary and pretrained-embedding loading ([`text`]),
//! * class-weighted SGD training ([`train`]), checkpointing
//!   ([`checkpoint`]), and evaluation with agreement statistics
//!   ([`eval`]),
//! * a file-based pipeline behind the `arvsu` binary ([`pipeline`]).
//!
//! The `examples/` directory demonstrates each capability end to end.

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod text;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
