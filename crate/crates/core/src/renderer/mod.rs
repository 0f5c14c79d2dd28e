//! Software rasterizer, Phong shader and the texture-space backward pass.

mod camera;
mod raster;
mod shade;

pub use camera::{Camera, CameraFrame, DEFAULT_FOV_DEG, DEFAULT_VIEW_SIZE};
pub use raster::{rasterize, Fragments, BACKGROUND_DEPTH, NEAR_PLANE};
pub use shade::{
    bilinear_taps, nearest_texel, render, render_label, sample_bilinear, shade, texture_vjp,
    Lights, Material, PointLight, RenderOutput,
};
