//! Synthesis of annotated skin-lesion images from textured body meshes.
//!
//! Lesion patches are pasted into a mesh's UV texture from a rendered view,
//! blended by optimizing the texture through a differentiable rasterizer,
//! and finally rendered from sampled viewpoints together with dense labels.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blending;
pub mod config;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod par;
pub mod pipeline;
pub mod placement;
pub mod procedural;
pub mod renderer;
pub mod seed;
pub mod synthesis;

pub use error::{Error, Result};
