//! Graph-convolution-reinforced transformer for regressing 3D mesh vertices
//! and body joints from a single image, with the synthetic articulated-body
//! data generator, training losses, and evaluation metrics used to train and
//! verify it at desk scale.

pub mod config;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod io;
pub mod numerics;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
