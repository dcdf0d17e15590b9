//! avimorph: capture articulated, species-specific 3D bird shape models
//! from 2D keypoint and silhouette annotations.
//!
//! The crate aligns an articulated template to each annotated image,
//! learns a per-species mean deformation and a blend-shape basis on top of
//! it, assembles a multi-species PCA shape space, and ships evaluation
//! metrics plus phylogenetic-signal analysis of the learned space.

pub mod energy;
pub mod error;
pub mod eval;
pub mod instance;
pub mod io;
pub mod mesh;
pub mod model;
pub mod render;
pub mod optim;
pub mod par;
pub mod phylo;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
