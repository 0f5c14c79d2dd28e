//! Dataset rendering: scene sampling, view validation and annotation output.

mod annotate;
mod color;
mod output;
mod scene;

pub use annotate::{
    boxes_from_mask, composite_background, face_group_labels, generate_views, render_anatomy,
    texture_box_mask, AnnotationBundle, BoundingBox, RenderScene, DEFAULT_VIEW_RETRIES,
};
pub use color::{illuminant, shades_of_gray, DEFAULT_SOG_POWER};
pub use output::{
    lesion_palette, read_manifest, view_name, write_bundle, ManifestRecord, ManifestWriter,
    ANATOMY_DIR, ANATOMY_PALETTE, BINARY_PALETTE, DEPTH_DIR, IGNORE_DIR, IMAGES_DIR, LESION_DIR,
    MANIFEST_FILE, NONSKIN_DIR, SKIN_DIR,
};
pub use scene::{
    point_inside, ray_triangle, sample_scene, segment_blocked, validate_view, SceneRanges,
    SceneSample, ViewVerdict,
};
