//! Divide-and-conquer training for text semantic matching.
//!
//! A sentence pair is matched at two granularities: *keywords* (factual
//! content that must match strictly) and *intents* (the remaining abstract
//! content, matched loosely). Besides the usual classification objective,
//! training adds a disentanglement term that pushes pooled keyword and
//! intent representations apart, and a bidirectional KL term that ties the
//! global matching distribution to the combination of the two sub-problem
//! distributions obtained from keyword-only and intent-only views of the
//! pair. Inference uses the global distribution alone, so a trained model
//! predicts exactly like its plain-classification counterpart.
//!
//! This crate is the algorithmic core: data model, vocabulary and pair
//! encoding, gazetteer-based distant keyword labeling, the loss algebra, a
//! small trainable transformer encoder with hand-written reverse-mode
//! gradients, the AdamW optimizer, and the training/evaluation loops. It is
//! `no_std` (with `alloc`); file formats and the command-line front end live
//! in the companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod labeler;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod scheme;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use scheme::LabelScheme;
