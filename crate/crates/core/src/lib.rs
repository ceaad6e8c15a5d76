//! Transfer learning from a pre-trained multilayer perceptron: fine-tuning
//! plans, anchored regularization, domain measures, and the training harness
//! that compares them.

pub mod datasets;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod recommender;
pub mod regularizers;
pub mod report;
pub mod seed;
pub mod study;
pub mod transfer;

pub use error::{Error, Result};
pub use nn::{Activation, Batch, Block, NetworkSpec, ParamSet, Tensor2D};
pub use transfer::{Checkpoint, FineTunePlan, LrMap};
