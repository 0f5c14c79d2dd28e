//! Mesh ingest, surface sampling and anatomy labels.

pub mod anatomy;
mod mesh;
mod sampling;

pub use anatomy::{group_labels, transfer_anatomy, AnatomyLabelMap, LabelScheme, LabelTable};
pub use mesh::{load_mesh, parse_obj, Mesh, MeshLoad, ParsedObj, Uv};
pub use sampling::{sample_surface, FaceSample, SurfaceSampler};
