//! Adversarially trained Chinese spam-text detection.
//!
//! The pipeline: a character similarity network over glyph and pinyin codes
//! feeds similarity-aggregated character embeddings; a self-attention
//! encoder pools them into sentence embeddings; a logistic head trained with
//! cross-entropy plus supervised contrastive loss predicts spam probability;
//! and a policy-gradient generator crafts character-substitution attacks
//! against the discriminator inside an alternating training loop.

pub mod augment;
pub mod autodiff;
pub mod charsim;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod discriminator;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod generator;
pub mod manifest;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
