use super::LesionSource;
use crate::error::{Error, Result};
use crate::grid::{Grid, LabelImage, Mask, RgbImage, ScalarImage};
use crate::io::resize_bilinear_region;
use crate::renderer::Fragments;

/// A lesion composed onto the center of a rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct PasteView {
    /// a_x: view with lesion pixels replacing the originals under `mask`.
    pub image: RgbImage,
    /// a_x_d: view with lesion-photo pixels under `dilated_mask`.
    pub dilated_image: RgbImage,
    /// a_s
    pub mask: Mask,
    /// a_s_d
    pub dilated_mask: Mask,
}

/// Resizes the lesion by `scale` (bilinear for the photo, nearest for the
/// masks) and centers it in `view`.
pub fn compose_paste_view(view: &RgbImage, lesion: &LesionSource, scale: f64) -> Result<PasteView> {
    if !(scale > 0.0) {
        return Err(Error::Invalid(format!(
            "lesion scale {scale} must be positive"
        )));
    }
    let (lw, lh) = lesion.dims();
    let nw = ((lw as f64 * scale).round() as usize).max(1);
    let nh = ((lh as f64 * scale).round() as usize).max(1);
    let (vw, vh) = view.dims();
    if nw > vw || nh > vh {
        return Err(Error::Invalid(format!(
            "scaled lesion {nw}x{nh} does not fit in {vw}x{vh} view"
        )));
    }
    let photo = resize_bilinear_region(&lesion.image, [0.0, 0.0, lw as f64, lh as f64], nw, nh);
    let near = |m: &Mask| {
        Grid::from_fn(nw, nh, |x, y| {
            let sx = (((x as f64 + 0.5) * lw as f64 / nw as f64) as usize).min(lw - 1);
            let sy = (((y as f64 + 0.5) * lh as f64 / nh as f64) as usize).min(lh - 1);
            *m.get(sx, sy)
        })
    };
    let small_mask = near(&lesion.mask);
    let small_dilated = near(&lesion.dilated);
    let (x0, y0) = ((vw - nw) / 2, (vh - nh) / 2);

    let place = |small: &Mask| {
        Grid::from_fn(vw, vh, |x, y| {
            x >= x0 && y >= y0 && x < x0 + nw && y < y0 + nh && *small.get(x - x0, y - y0)
        })
    };
    let mask = place(&small_mask);
    let dilated_mask = place(&small_dilated);
    let overlay = |m: &Mask| {
        Grid::from_fn(vw, vh, |x, y| {
            if *m.get(x, y) {
                *photo.get(x - x0, y - y0)
            } else {
                *view.get(x, y)
            }
        })
    };
    Ok(PasteView {
        image: overlay(&mask),
        dilated_image: overlay(&dilated_mask),
        mask,
        dilated_mask,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkinMasks {
    /// a_body = [z > 0]
    pub body: Mask,
    /// a_skin = a_body ⊙ (1 − nonskin)
    pub skin: Mask,
    /// z_skin = a_skin ⊙ z + (a_skin − 1): depth on skin, −1 elsewhere
    pub z_skin: ScalarImage,
}

pub fn body_and_skin_masks(fragments: &Fragments, nonskin_view: &LabelImage) -> Result<SkinMasks> {
    fragments.depth.ensure_same_dims(nonskin_view)?;
    let body = fragments.depth.map(|&z| z > 0.0);
    let skin = body.zip_map(nonskin_view, |&b, &n| b && n == 0)?;
    let z_skin = skin.zip_map(&fragments.depth, |&s, &z| {
        let a = if s { 1.0 } else { 0.0 };
        a * z + (a - 1.0)
    })?;
    Ok(SkinMasks { body, skin, z_skin })
}

/// `max |z_skin − d|` over the masked pixels; `+∞` for an empty mask.
pub fn depth_change(z_skin: &ScalarImage, d: f64, mask: &Mask) -> Result<f64> {
    z_skin.ensure_same_dims(mask)?;
    let mut c = f64::NEG_INFINITY;
    for (&z, &m) in z_skin.iter().zip(mask.iter()) {
        if m {
            c = c.max((z - d).abs());
        }
    }
    Ok(if c == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        c
    })
}

/// m_skin = (1 − m_lesions) ⊙ (1 − m_nonskin)
pub fn infer_skin_mask(lesions: &Mask, nonskin: &Mask) -> Result<Mask> {
    lesions.zip_map(nonskin, |&l, &n| !l && !n)
}
