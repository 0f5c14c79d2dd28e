//! Texture-space lesion blending by gradient descent through the renderer.

mod features;
mod losses;
mod optimize;

pub use features::{
    avg_pool, merge_channels, split_channels, FeatureExtractor, FeatureMap, FilterPyramid,
    IdentityExtractor, Kernel, PYRAMID_KERNELS,
};
pub use losses::{
    apply_mask, composite, content_loss, content_loss_grad, gradient_loss, gradient_loss_grad,
    laplacian, style_loss, style_loss_grad, tv_loss, tv_loss_grad,
};
pub use optimize::{
    blend_lesions, blend_lesions_with, blend_objective, evaluate, masked_view_change, padded_bbox,
    placement_loss, render_blend_views, Adam, BlendConfig, BlendProgress, BlendViews, Evaluation,
    LossBreakdown, LossRecord,
};
