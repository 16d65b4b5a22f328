pub mod checkpoint;
pub mod datagen;
pub mod encoders;
pub mod error;
pub mod features;
pub mod fusion;
pub mod harness;
pub mod losses;
pub mod model;
pub mod nn;
pub mod speech_embedder;

pub use error::{KwsError, Result};
