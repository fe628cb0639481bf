//! Expression transfer onto fixed animated identities, with expression
//! recognition through the discriminator's classification head.
//!
//! The pipeline: a conditional generator maps a human expression image, a
//! one-hot character identity, and a noise vector to a character-domain
//! image; a two-headed discriminator scores realism and classifies the
//! expression of (human, character) pairs; after training, recognition runs
//! the generator and reads the expression head. Everything (layers,
//! gradients, optimizer, data) is built in-crate and verified against
//! finite differences and protocol oracles.
//!
//! Entry points:
//! - [`corpus`]: synthetic two-domain glyph corpus, dataset I/O, augmentation
//! - [`nn`]: recorded forward/backward passes, Adam, gradient checking
//! - [`model`]: generator and discriminator
//! - [`objectives`]: adversarial, classification, and reconstruction losses
//! - [`trainer`]: the alternating training loop, checkpoints, metrics
//! - [`eval`]: recognition, subject-disjoint cross-validation, reports

pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
