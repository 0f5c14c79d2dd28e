use serde::{Deserialize, Serialize};

use super::scene::{sample_scene, validate_view, SceneRanges, SceneSample, ViewVerdict};
use crate::error::{Error, Result};
use crate::geometry::{LabelTable, Mesh, SurfaceSampler};
use crate::grid::{Grid, LabelImage, Mask, RgbImage, ScalarImage};
use crate::par;
use crate::renderer::{
    rasterize, render_label, shade, Fragments, DEFAULT_FOV_DEG, DEFAULT_VIEW_SIZE,
};
use crate::seed::{derive_rng, derive_seed};

/// Default number of scene draws per view before it is skipped.
pub const DEFAULT_VIEW_RETRIES: usize = 20;

/// `rgb = body ⊙ view + (1 − body) ⊙ background`
pub fn composite_background(
    view: &RgbImage,
    body: &Mask,
    background: &RgbImage,
) -> Result<RgbImage> {
    view.ensure_same_dims(body)?;
    view.ensure_same_dims(background)?;
    Ok(Grid::from_fn(view.width(), view.height(), |x, y| {
        if *body.get(x, y) {
            *view.get(x, y)
        } else {
            *background.get(x, y)
        }
    }))
}

/// Inclusive pixel box of one connected lesion component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lesion_id: u8,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// One tight box per 4-connected component of each nonzero id, in
/// scanline order of the components' first pixels.
pub fn boxes_from_mask(labels: &LabelImage) -> Vec<BoundingBox> {
    let (w, h) = labels.dims();
    let mut seen = vec![false; w * h];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        let id = labels.as_slice()[start];
        if id == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut b = BoundingBox {
            lesion_id: id,
            x0: start % w,
            y0: start / w,
            x1: start % w,
            y1: start / w,
        };
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            b.x0 = b.x0.min(x);
            b.x1 = b.x1.max(x);
            b.y0 = b.y0.min(y);
            b.y1 = b.y1.max(y);
            let mut visit = |j: usize| {
                if !seen[j] && labels.as_slice()[j] == id {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        boxes.push(b);
    }
    boxes
}

/// Group label per face: majority of its three vertex groups, ties to the
/// lowest group id.
pub fn face_group_labels(mesh: &Mesh, table: &LabelTable) -> Result<Vec<u8>> {
    let parts = mesh
        .anatomy()
        .ok_or_else(|| Error::Invalid("mesh has no anatomy labels".into()))?;
    let groups: Vec<u8> = parts
        .iter()
        .map(|&p| table.group_of(p))
        .collect::<Result<_>>()?;
    Ok(mesh
        .faces()
        .iter()
        .map(|f| {
            let g = f.map(|v| groups[v]);
            let count = |x: u8| g.iter().filter(|&&y| y == x).count();
            let mut best = g[0];
            for &x in &g {
                if count(x) > count(best) || (count(x) == count(best) && x < best) {
                    best = x;
                }
            }
            best
        })
        .collect())
}

/// Per-pixel group label; 0 where no face is visible.
pub fn render_anatomy(fragments: &Fragments, face_labels: &[u8]) -> LabelImage {
    fragments
        .face
        .map(|&f| if f < 0 { 0 } else { face_labels[f as usize] })
}

/// Rasterizes texture-space boxes `[x0, y0, x1, y1]` (inclusive texels)
/// into a 0/1 texture.
pub fn texture_box_mask(dims: (usize, usize), boxes: &[[usize; 4]]) -> LabelImage {
    let mut m = Grid::new(dims.0, dims.1);
    for &[x0, y0, x1, y1] in boxes {
        for y in y0..=y1.min(dims.1.saturating_sub(1)) {
            for x in x0..=x1.min(dims.0.saturating_sub(1)) {
                m.set(x, y, 1u8);
            }
        }
    }
    m
}

/// One rendered view with all of its annotations.
#[derive(Debug, Clone)]
pub struct AnnotationBundle {
    pub rgb: RgbImage,
    /// Lesion id per pixel, 0 elsewhere.
    pub lesion_mask: LabelImage,
    pub skin_mask: Mask,
    pub nonskin_mask: Mask,
    /// Group label per pixel, 0 on background.
    pub anatomy: LabelImage,
    /// View-axis depth, −1 on background.
    pub depth: ScalarImage,
    pub boxes: Vec<BoundingBox>,
    pub scene: SceneSample,
    /// Pixels covered by pre-existing lesions of the source texture.
    pub ignore_mask: Option<Mask>,
}

impl AnnotationBundle {
    pub fn background_mask(&self) -> Mask {
        self.depth.map(|&z| !(z > 0.0))
    }

    pub fn lesion_ids(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self.boxes.iter().map(|b| b.lesion_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// The static inputs of dataset rendering for one mesh.
pub struct RenderScene<'a> {
    pub mesh: &'a Mesh,
    /// T_b
    pub texture: &'a RgbImage,
    /// T_m
    pub lesion_ids: &'a LabelImage,
    pub nonskin: &'a LabelImage,
    pub face_labels: Vec<u8>,
    /// Pool already resized to the view size.
    pub backgrounds: &'a [RgbImage],
    pub ranges: SceneRanges,
    pub view_size: usize,
    pub fov_deg: f64,
    pub retries: usize,
    pub ignore_texture: Option<LabelImage>,
}

impl<'a> RenderScene<'a> {
    pub fn new(
        mesh: &'a Mesh,
        texture: &'a RgbImage,
        lesion_ids: &'a LabelImage,
        nonskin: &'a LabelImage,
        table: &LabelTable,
        backgrounds: &'a [RgbImage],
    ) -> Result<Self> {
        texture.ensure_same_dims(lesion_ids)?;
        texture.ensure_same_dims(nonskin)?;
        Ok(Self {
            mesh,
            texture,
            lesion_ids,
            nonskin,
            face_labels: face_group_labels(mesh, table)?,
            backgrounds,
            ranges: SceneRanges::default(),
            view_size: DEFAULT_VIEW_SIZE,
            fov_deg: DEFAULT_FOV_DEG,
            retries: DEFAULT_VIEW_RETRIES,
            ignore_texture: None,
        })
    }

    /// Renders the bundle for one scene sample.
    pub fn render(&self, scene: &SceneSample) -> Result<AnnotationBundle> {
        let fragments = rasterize(self.mesh, &scene.camera);
        let shaded = shade(
            &fragments,
            self.mesh,
            self.texture,
            &scene.lights,
            &scene.material,
        )?;
        let body = fragments.body_mask();
        let lesion_mask = render_label(&fragments, self.lesion_ids);
        let nonskin = render_label(&fragments, self.nonskin);
        let (w, h) = fragments.dims();
        let skin_mask = Grid::from_fn(w, h, |x, y| {
            *body.get(x, y) && *lesion_mask.get(x, y) == 0 && *nonskin.get(x, y) == 0
        });
        let nonskin_mask = Grid::from_fn(w, h, |x, y| {
            *body.get(x, y) && *lesion_mask.get(x, y) == 0 && *nonskin.get(x, y) != 0
        });
        let background = match scene.background {
            Some(i) => self
                .backgrounds
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("background {i} out of range")))?,
            None => Grid::filled(w, h, [0.0; 3]),
        };
        let rgb = composite_background(&shaded.view, &body, &background)?;
        let ignore_mask = self
            .ignore_texture
            .as_ref()
            .map(|t| render_label(&fragments, t).map(|&v| v != 0));
        Ok(AnnotationBundle {
            boxes: boxes_from_mask(&lesion_mask),
            anatomy: render_anatomy(&fragments, &self.face_labels),
            depth: fragments.depth.clone(),
            rgb,
            lesion_mask,
            skin_mask,
            nonskin_mask,
            scene: scene.clone(),
            ignore_mask,
        })
    }

    /// Draws scenes for view `index` until one passes [`validate_view`] and
    /// renders it. `None` if the retry budget runs out.
    pub fn view(
        &self,
        sampler: &SurfaceSampler,
        seed: u64,
        index: u64,
    ) -> Result<Option<AnnotationBundle>> {
        let mut rng = derive_rng(seed, "view", index);
        let view_seed = derive_seed(seed, "view", index);
        let mut last = ViewVerdict::Valid;
        for _ in 0..self.retries.max(1) {
            let scene = sample_scene(
                &self.ranges,
                sampler,
                self.backgrounds.len(),
                self.view_size,
                self.fov_deg,
                view_seed,
                &mut rng,
            )?;
            last = validate_view(self.mesh, &scene);
            if last == ViewVerdict::Valid {
                return self.render(&scene).map(Some);
            }
        }
        log::warn!(
            "view {index} skipped after {} draws: {last:?}",
            self.retries.max(1)
        );
        Ok(None)
    }
}

/// Views rendered concurrently before being handed to the sink in order.
const VIEW_BATCH: usize = 8;

/// Renders views `first .. first + n`. Views run in parallel; `sink` is
/// called in index order with `None` for skipped views.
pub fn generate_views(
    scene: &RenderScene,
    n: usize,
    seed: u64,
    first: u64,
    sink: &mut dyn FnMut(u64, Option<AnnotationBundle>) -> Result<()>,
) -> Result<()> {
    scene.ranges.validate()?;
    if n == 0 {
        return Ok(());
    }
    let sampler = SurfaceSampler::new(scene.mesh)?;
    let mut start = 0;
    while start < n {
        let len = VIEW_BATCH.min(n - start);
        let batch = par::map_range(len, |k| {
            scene.view(&sampler, seed, first + (start + k) as u64)
        });
        for (k, out) in batch.into_iter().enumerate() {
            sink(first + (start + k) as u64, out?)?;
        }
        start += len;
    }
    Ok(())
}
