use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask, RgbImage};
use crate::io;

/// Dilation disk radius as a fraction of the lesion bounding-box diagonal.
pub const DILATION_FRACTION: f64 = 0.05;

/// A segmented clinical image: the photo, its lesion mask and the dilated
/// mask that also covers a ring of surrounding skin.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionSource {
    pub image: RgbImage,
    pub mask: Mask,
    pub dilated: Mask,
    pub lesion_id: u8,
}

impl LesionSource {
    /// Builds a source, deriving the dilated mask with a disk whose radius is
    /// [`DILATION_FRACTION`] of the mask's bounding-box diagonal (at least 1 px).
    pub fn new(image: RgbImage, mask: Mask, lesion_id: u8) -> Result<Self> {
        image.ensure_same_dims(&mask)?;
        if lesion_id == 0 {
            return Err(Error::Invalid("lesion ids start at 1".into()));
        }
        let dilated = dilate(&mask, dilation_radius(&mask));
        Ok(Self {
            image,
            mask,
            dilated,
            lesion_id,
        })
    }

    pub fn with_dilated(image: RgbImage, mask: Mask, dilated: Mask, lesion_id: u8) -> Result<Self> {
        image.ensure_same_dims(&mask)?;
        image.ensure_same_dims(&dilated)?;
        if mask.iter().zip(dilated.iter()).any(|(&m, &d)| m && !d) {
            return Err(Error::Invalid(
                "dilated mask must contain the lesion mask".into(),
            ));
        }
        Ok(Self {
            image,
            mask,
            dilated,
            lesion_id,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    /// Crops all three layers to the bounding box of the dilated mask.
    pub fn cropped(&self) -> Self {
        let Some((x0, y0, x1, y1)) = self.dilated.bbox() else {
            return self.clone();
        };
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        Self {
            image: self.image.crop(x0, y0, w, h),
            mask: self.mask.crop(x0, y0, w, h),
            dilated: self.dilated.crop(x0, y0, w, h),
            lesion_id: self.lesion_id,
        }
    }

    pub fn oriented(&self, o: Orientation) -> Self {
        Self {
            image: o.apply(&self.image),
            mask: o.apply(&self.mask),
            dilated: o.apply(&self.dilated),
            lesion_id: self.lesion_id,
        }
    }
}

pub fn dilation_radius(mask: &Mask) -> usize {
    match mask.bbox() {
        Some((x0, y0, x1, y1)) => {
            let dx = (x1 - x0 + 1) as f64;
            let dy = (y1 - y0 + 1) as f64;
            ((dx.hypot(dy) * DILATION_FRACTION).round() as usize).max(1)
        }
        None => 0,
    }
}

/// Morphological dilation with a disk of the given pixel radius.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            if !*mask.get(x as usize, y as usize) {
                continue;
            }
            for (dx, dy) in &offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    out.set(nx as usize, ny as usize, true);
                }
            }
        }
    }
    out
}

/// Horizontal/vertical flips followed by a number of 90° clockwise turns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orientation {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub quarter_turns: u8,
}

impl Orientation {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            flip_horizontal: rng.random(),
            flip_vertical: rng.random(),
            quarter_turns: rng.random_range(0..4),
        }
    }

    pub fn apply<T: Clone>(&self, g: &Grid<T>) -> Grid<T> {
        let (w, h) = g.dims();
        let mut out = Grid::from_fn(w, h, |x, y| {
            let sx = if self.flip_horizontal { w - 1 - x } else { x };
            let sy = if self.flip_vertical { h - 1 - y } else { y };
            g.get(sx, sy).clone()
        });
        for _ in 0..self.quarter_turns % 4 {
            let (w, h) = out.dims();
            // clockwise: new (x, y) reads old (y, h - 1 - x)
            out = Grid::from_fn(h, w, |x, y| out.get(y, h - 1 - x).clone());
        }
        out
    }
}

/// One record of a lesion manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionEntry {
    pub id: u8,
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Reads a JSON array of `{id, image, mask}` records; relative paths are
/// resolved against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<LesionEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<LesionEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = std::collections::HashSet::new();
    for e in &mut entries {
        if e.id == 0 || !seen.insert(e.id) {
            return Err(Error::Config(format!(
                "lesion ids must be unique and nonzero (id {})",
                e.id
            )));
        }
        e.image = base.join(&e.image);
        e.mask = base.join(&e.mask);
    }
    Ok(entries)
}

pub fn load_lesion(entry: &LesionEntry) -> Result<LesionSource> {
    let image = io::load_rgb(&entry.image)?;
    let mask = io::load_binary(&entry.mask)?.map(|&v| v != 0);
    LesionSource::new(image, mask, entry.id)
}
