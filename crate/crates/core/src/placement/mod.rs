//! Choosing lesion locations on the body and pasting lesions into texture
//! space.

mod lesion;
mod masks;
mod search;
mod textures;

pub use lesion::{
    dilate, dilation_radius, load_lesion, load_manifest, LesionEntry, LesionSource, Orientation,
    DILATION_FRACTION,
};
pub use masks::{
    body_and_skin_masks, compose_paste_view, depth_change, infer_skin_mask, PasteView, SkinMasks,
};
pub use search::{
    blending_lights, blending_material, camera_from_surface, check_candidate, find_placement,
    paste_candidate, paste_to_texture, surface_camera, texel_footprint, CandidateCheck, Criterion,
    PlacementCandidate, PlacementFailure, PlacementParams, PlacementRecord, BLEND_AMBIENT,
    BLEND_DIFFUSE, BLEND_MATERIAL_SPECULAR, BLEND_SHININESS, BLEND_SPECULAR,
};
pub use textures::TextureSet;
