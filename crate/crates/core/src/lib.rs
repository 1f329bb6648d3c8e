pub mod error;
pub mod feature;
pub mod mdp;
pub mod numcore;
pub mod pipeline;
pub mod rng;
pub mod simworld;
pub mod strategies;
pub mod stubclip;
pub mod ure;

pub use error::{Error, Result};
pub use feature::FeatureMap;
