//! Translation of natural-language descriptions into If-Then recipes with
//! sequence-to-sequence models.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom fix the precision.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod models;
pub mod recipe;
mod stopwords;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use ifthen_tensor::{DType, Scalar};
pub use inference::{greedy_decode, predict_recipe, Prediction};
pub use metrics::{evaluate, EvalReport};
pub use models::{ArchConfig, Family, SeqModel};
pub use training::{noam_lr, train, TrainConfig, TrainHistory};
pub use recipe::{parse_sequence, serialize_recipe, slot_align, Recipe, RecipeSequence, Slot};

pub type SeqModel32 = SeqModel<f32>;
pub type SeqModel64 = SeqModel<f64>;
