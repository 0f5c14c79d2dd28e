use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureExtractor;
use super::losses::{
    composite, content_loss_grad, gradient_loss_grad, style_loss_grad, tv_loss_grad,
};
use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::grid::{Grid, Mask, RgbImage};
use crate::placement::{blending_lights, blending_material, PlacementRecord, TextureSet};
use crate::renderer::{
    bilinear_taps, rasterize, render_label, shade, texture_vjp, Camera, Fragments, RenderOutput,
    DEFAULT_FOV_DEG, DEFAULT_VIEW_SIZE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlendConfig {
    pub content_weight: f64,
    pub style_weight: f64,
    pub gradient_weight: f64,
    pub tv_weight: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Half-width of the uniform per-step perturbation of the camera distance.
    pub jitter_amplitude: f64,
    /// Jittered distances are clamped to this interval.
    pub distance_range: [f64; 2],
    /// Loss crop padding per side, as a fraction of the mask bounding box.
    pub bbox_padding: f64,
    pub view_size: usize,
    pub fov_deg: f64,
    /// Write T_b every this many steps; 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            content_weight: 2.0,
            style_weight: 1e6,
            gradient_weight: 1e5,
            tv_weight: 1e-4,
            learning_rate: 0.005,
            steps: 400,
            jitter_amplitude: 0.02,
            distance_range: [0.4, 0.6],
            bbox_padding: 0.2,
            view_size: DEFAULT_VIEW_SIZE,
            fov_deg: DEFAULT_FOV_DEG,
            checkpoint_every: 0,
        }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.content_weight,
            self.style_weight,
            self.gradient_weight,
            self.tv_weight,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.jitter_amplitude >= 0.0 && self.bbox_padding >= 0.0) {
            return Err(Error::Config(
                "jitter amplitude and bbox padding must be non-negative".into(),
            ));
        }
        let [lo, hi] = self.distance_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!(
                "blend distance range [{lo}, {hi}] invalid"
            )));
        }
        if self.view_size == 0 {
            return Err(Error::Config("view_size must be positive".into()));
        }
        Ok(())
    }

    fn weigh(&self, content: f64, style: f64, gradient: f64, tv: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.content_weight * content
                + self.style_weight * style
                + self.gradient_weight * gradient
                + self.tv_weight * tv,
            content,
            style,
            gradient,
            tv,
        }
    }
}

/// Unweighted loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub content: f64,
    pub style: f64,
    pub gradient: f64,
    pub tv: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.content, self.style, self.gradient, self.tv]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Loss of one optimization step, evaluated before the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub placement: usize,
    pub lesion_id: u8,
    pub step: usize,
    pub distance: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Views of every texture layer rendered with one camera and light setup.
#[derive(Debug, Clone)]
pub struct BlendViews {
    pub original: RgbImage,
    pub pasted: RgbImage,
    pub dilated: RgbImage,
    pub blended: RenderOutput,
    /// Pixels whose T_m texel holds the lesion id.
    pub mask: Mask,
}

pub fn render_blend_views(
    mesh: &Mesh,
    textures: &TextureSet,
    lesion_id: u8,
    camera: &Camera,
) -> Result<BlendViews> {
    let fragments = rasterize(mesh, camera);
    let lights = blending_lights(camera.position);
    let material = blending_material();
    let view = |tex: &RgbImage| shade(&fragments, mesh, tex, &lights, &material);
    let mask = render_label(&fragments, &textures.lesion_ids).map(|&id| id == lesion_id);
    let mask = mask.zip_map(&fragments.face, |&m, &f| m && f >= 0)?;
    Ok(BlendViews {
        original: view(&textures.original)?.view,
        pasted: view(&textures.pasted)?.view,
        dilated: view(&textures.dilated)?.view,
        blended: view(&textures.blended)?,
        mask,
    })
}

/// Mask bounding box grown by `padding` × its side on each side, clipped to
/// the view; `(x, y, w, h)`.
pub fn padded_bbox(mask: &Mask, padding: f64) -> Option<(usize, usize, usize, usize)> {
    let (x0, y0, x1, y1) = mask.bbox()?;
    let px = ((x1 - x0 + 1) as f64 * padding).ceil() as usize;
    let py = ((y1 - y0 + 1) as f64 * padding).ceil() as usize;
    let (w, h) = mask.dims();
    let (cx0, cy0) = (x0.saturating_sub(px), y0.saturating_sub(py));
    let (cx1, cy1) = ((x1 + px).min(w - 1), (y1 + py).min(h - 1));
    Some((cx0, cy0, cx1 - cx0 + 1, cy1 - cy0 + 1))
}

/// Loss at one camera and its gradient w.r.t. the full blended view.
pub struct Evaluation {
    pub loss: LossBreakdown,
    /// `None` when the lesion is not visible from the camera.
    pub view_grad: Option<RgbImage>,
    pub views: BlendViews,
}

pub fn evaluate(
    mesh: &Mesh,
    textures: &TextureSet,
    lesion_id: u8,
    camera: &Camera,
    cfg: &BlendConfig,
    fx: &dyn FeatureExtractor,
) -> Result<Evaluation> {
    let views = render_blend_views(mesh, textures, lesion_id, camera)?;
    let Some((x, y, w, h)) = padded_bbox(&views.mask, cfg.bbox_padding) else {
        return Ok(Evaluation {
            loss: LossBreakdown::default(),
            view_grad: None,
            views,
        });
    };
    let crop = |img: &RgbImage| img.crop(x, y, w, h);
    let m = views.mask.crop(x, y, w, h);
    let t = crop(&views.original);
    let p = crop(&views.pasted);
    let d = crop(&views.dilated);
    let tb = crop(&views.blended.view);
    let b = composite(&m, &tb, &t)?;

    let (lc, gc) = content_loss_grad(&b, &p, &m, fx)?;
    let (ls, gs) = style_loss_grad(&b, &t, &m, fx)?;
    let (lg, gg) = gradient_loss_grad(&b, &t, &d, &m)?;
    let (lt, gt) = tv_loss_grad(&b, &m)?;
    let loss = cfg.weigh(lc, ls, lg, lt);

    let (vw, vh) = views.mask.dims();
    let mut grad: RgbImage = Grid::new(vw, vh);
    for cy in 0..h {
        for cx in 0..w {
            // ∂b/∂ã_{T_b} = m
            if !*m.get(cx, cy) {
                continue;
            }
            let (a, s, g, v) = (
                gc.get(cx, cy),
                gs.get(cx, cy),
                gg.get(cx, cy),
                gt.get(cx, cy),
            );
            let out = grad.get_mut(x + cx, y + cy);
            for k in 0..3 {
                out[k] = cfg.content_weight * a[k]
                    + cfg.style_weight * s[k]
                    + cfg.gradient_weight * g[k]
                    + cfg.tv_weight * v[k];
            }
        }
    }
    views.blended.clamp_grad(&mut grad);
    Ok(Evaluation {
        loss,
        view_grad: Some(grad),
        views,
    })
}

/// Total loss at `camera` and its gradient w.r.t. every texel of T_b.
pub fn blend_objective(
    mesh: &Mesh,
    textures: &TextureSet,
    lesion_id: u8,
    camera: &Camera,
    cfg: &BlendConfig,
    fx: &dyn FeatureExtractor,
) -> Result<(LossBreakdown, RgbImage)> {
    let eval = evaluate(mesh, textures, lesion_id, camera, cfg, fx)?;
    let dims = textures.dims();
    let grad = match &eval.view_grad {
        Some(g) => texture_vjp(
            &eval.views.blended.fragments,
            &eval.views.blended.shade_gain,
            g,
            dims,
        )?,
        None => Grid::new(dims.0, dims.1),
    };
    Ok((eval.loss, grad))
}

/// Texture adjoint restricted to the texels listed in `slots`.
fn sparse_vjp(
    fragments: &Fragments,
    gain: &RgbImage,
    view_grad: &RgbImage,
    dims: (usize, usize),
    slots: &HashMap<usize, usize>,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, &face) in fragments.face.iter().enumerate() {
        if face < 0 {
            continue;
        }
        let g = view_grad.as_slice()[i];
        if g == [0.0; 3] {
            continue;
        }
        let s = gain.as_slice()[i];
        for (t, w) in bilinear_taps(dims.0, dims.1, fragments.uv.as_slice()[i]) {
            if w == 0.0 {
                continue;
            }
            if let Some(&k) = slots.get(&t) {
                for c in 0..3 {
                    out[3 * k + c] += w * g[c] * s[c];
                }
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

/// Progress report passed to the observer after every update.
pub struct BlendProgress<'a> {
    pub placement: usize,
    pub lesion_id: u8,
    /// Updates applied so far for this placement.
    pub step: usize,
    pub texture: &'a RgbImage,
}

pub fn blend_lesions<R: Rng + ?Sized>(
    mesh: &Mesh,
    textures: &mut TextureSet,
    placements: &[PlacementRecord],
    cfg: &BlendConfig,
    fx: &dyn FeatureExtractor,
    rng: &mut R,
) -> Result<Vec<LossRecord>> {
    blend_lesions_with(mesh, textures, placements, cfg, fx, rng, &mut |_| Ok(()))
}

/// Optimizes T_b for each placement in turn.
///
/// Every step renders all layers from a camera whose distance is the
/// placement distance plus uniform jitter, evaluates the losses on the
/// padded mask crop and takes one Adam step on the texels of the lesion's
/// footprint, clamped to `[0, 1]`. All other texels are never written.
pub fn blend_lesions_with<R: Rng + ?Sized>(
    mesh: &Mesh,
    textures: &mut TextureSet,
    placements: &[PlacementRecord],
    cfg: &BlendConfig,
    fx: &dyn FeatureExtractor,
    rng: &mut R,
    observer: &mut dyn FnMut(&BlendProgress) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let dims = textures.dims();
    let mut records = Vec::with_capacity(placements.len() * cfg.steps);
    for (pi, rec) in placements.iter().enumerate() {
        let id = rec.lesion_id;
        let texels = textures.editable_texels(id);
        if texels.is_empty() {
            log::warn!("lesion {id} has no footprint texels; skipping blend");
            continue;
        }
        let slots: HashMap<usize, usize> =
            texels.iter().enumerate().map(|(k, &t)| (t, k)).collect();
        let mut params: Vec<f64> = texels
            .iter()
            .flat_map(|&t| textures.blended.as_slice()[t])
            .collect();
        let mut grads = vec![0.0; params.len()];
        let mut adam = Adam::new(params.len(), cfg.learning_rate);
        let [lo, hi] = cfg.distance_range;

        for step in 0..cfg.steps {
            let mut d = rec.distance;
            if cfg.jitter_amplitude > 0.0 {
                d = (d + rng.random_range(-cfg.jitter_amplitude..=cfg.jitter_amplitude))
                    .clamp(lo, hi);
            }
            let mut eval = evaluate(
                mesh,
                textures,
                id,
                &rec.camera(d, cfg.view_size, cfg.fov_deg)?,
                cfg,
                fx,
            )?;
            if eval.view_grad.is_none() && d != rec.distance {
                d = rec.distance;
                eval = evaluate(
                    mesh,
                    textures,
                    id,
                    &rec.camera(d, cfg.view_size, cfg.fov_deg)?,
                    cfg,
                    fx,
                )?;
            }
            if !eval.loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "lesion {id} step {step}: non-finite loss {:?} at d = {d}",
                    eval.loss
                )));
            }
            records.push(LossRecord {
                placement: pi,
                lesion_id: id,
                step,
                distance: d,
                loss: eval.loss,
            });
            let Some(view_grad) = eval.view_grad else {
                log::warn!("lesion {id} not visible at step {step}");
                continue;
            };
            let out = &eval.views.blended;
            sparse_vjp(
                &out.fragments,
                &out.shade_gain,
                &view_grad,
                dims,
                &slots,
                &mut grads,
            );
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "lesion {id} step {step}: non-finite gradient"
                )));
            }
            adam.step(&mut params, &grads);
            let tb = textures.blended.as_mut_slice();
            for (k, &t) in texels.iter().enumerate() {
                tb[t] = [0, 1, 2].map(|c| params[3 * k + c].clamp(0.0, 1.0));
                params[3 * k..3 * k + 3].copy_from_slice(&tb[t]);
            }
            observer(&BlendProgress {
                placement: pi,
                lesion_id: id,
                step: step + 1,
                texture: &textures.blended,
            })?;
        }
        log::info!("blended lesion {id} over {} steps", cfg.steps);
    }
    Ok(records)
}

/// Loss at the placement's own distance, without jitter.
pub fn placement_loss(
    mesh: &Mesh,
    textures: &TextureSet,
    record: &PlacementRecord,
    cfg: &BlendConfig,
    fx: &dyn FeatureExtractor,
) -> Result<LossBreakdown> {
    let camera = record.camera(record.distance, cfg.view_size, cfg.fov_deg)?;
    Ok(evaluate(mesh, textures, record.lesion_id, &camera, cfg, fx)?.loss)
}

/// Mean absolute difference of the blended and pasted views over the mask.
pub fn masked_view_change(views: &BlendViews) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((b, p), &m) in views
        .blended
        .view
        .iter()
        .zip(views.pasted.iter())
        .zip(views.mask.iter())
    {
        if m {
            sum += (0..3).map(|c| (b[c] - p[c]).abs()).sum::<f64>();
            n += 3;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut adam = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            adam.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut x = vec![1.0, 1.0];
        let mut adam = Adam::new(2, 0.005);
        adam.step(&mut x, &[10.0, -0.001]);
        assert!((x[0] - 0.995).abs() < 1e-9);
        assert!((x[1] - 1.005).abs() < 1e-6);
    }

    #[test]
    fn padded_bbox_clips() {
        let mut m = Mask::new(20, 10);
        for y in 2..4 {
            for x in 5..15 {
                m.set(x, y, true);
            }
        }
        assert_eq!(padded_bbox(&m, 0.2), Some((3, 1, 14, 4)));
        assert_eq!(padded_bbox(&m, 0.0), Some((5, 2, 10, 2)));
        assert_eq!(padded_bbox(&Mask::new(3, 3), 0.2), None);
        assert_eq!(padded_bbox(&m, 5.0), Some((0, 0, 20, 10)));
    }

    #[test]
    fn config_validation() {
        assert!(BlendConfig::default().validate().is_ok());
        let bad = BlendConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = BlendConfig {
            style_weight: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
