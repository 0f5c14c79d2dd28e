use crate::error::{Error, Result};
use crate::grid::{clamp01, RgbImage};

/// Default Minkowski norm for [`shades_of_gray`].
pub const DEFAULT_SOG_POWER: f64 = 6.0;

/// Per-channel illuminant estimate `(mean I_c^p)^(1/p)`; `p = ∞` gives the
/// channel maximum.
pub fn illuminant(image: &RgbImage, p: f64) -> Result<[f64; 3]> {
    if !(p >= 1.0) {
        return Err(Error::Invalid(format!(
            "shades-of-gray power {p} must be >= 1"
        )));
    }
    let n = image.len() as f64;
    let mut e = [0.0; 3];
    if n == 0.0 {
        return Ok(e);
    }
    for c in 0..3 {
        e[c] = if p.is_infinite() {
            image.iter().map(|px| px[c]).fold(0.0, f64::max)
        } else {
            (image.iter().map(|px| px[c].max(0.0).powf(p)).sum::<f64>() / n).powf(1.0 / p)
        };
    }
    Ok(e)
}

/// Shades-of-Gray color constancy. Each channel is scaled by
/// `‖e‖ / (√3 · e_c)`, which leaves neutral images unchanged; the result is
/// clipped to `[0, 1]`. Images with a neutral or zero illuminant are
/// returned as is.
pub fn shades_of_gray(image: &RgbImage, p: f64) -> Result<RgbImage> {
    let e = illuminant(image, p)?;
    if e.iter().any(|&v| !(v > 0.0)) || (e[0] == e[1] && e[1] == e[2]) {
        return Ok(image.clone());
    }
    let norm = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
    let gain = e.map(|v| norm / (3f64.sqrt() * v));
    Ok(image.map(|px| [0, 1, 2].map(|c| clamp01(px[c] * gain[c]))))
}
