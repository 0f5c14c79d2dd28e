use crate::error::Result;
use crate::grid::{Grid, LabelImage, RgbImage};

/// The texture-space images produced while pasting and blending lesions.
///
/// All layers share the dimensions of `original`. `lesion_ids` (T_m) marks
/// the lesion cores; `footprint` marks each lesion's dilated footprint
/// (core plus surrounding ring) and is what the overlap test and blending
/// locality use.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureSet {
    /// T: the untouched texture.
    pub original: RgbImage,
    /// 1 where the texture shows clothing, hair or other non-skin.
    pub nonskin: LabelImage,
    /// T_p: lesion pixels pasted verbatim.
    pub pasted: RgbImage,
    /// T_m: lesion id per texel, 0 elsewhere.
    pub lesion_ids: LabelImage,
    /// T_d: dilated lesion crops pasted.
    pub dilated: RgbImage,
    /// T_b: optimization variable, initialised from T_p.
    pub blended: RgbImage,
    /// Lesion id over each dilated footprint, 0 elsewhere.
    pub footprint: LabelImage,
}

impl TextureSet {
    pub fn new(original: RgbImage, nonskin: LabelImage) -> Result<Self> {
        original.ensure_same_dims(&nonskin)?;
        let (w, h) = original.dims();
        Ok(Self {
            pasted: original.clone(),
            dilated: original.clone(),
            blended: original.clone(),
            lesion_ids: Grid::new(w, h),
            footprint: Grid::new(w, h),
            nonskin: nonskin.map(|&v| u8::from(v != 0)),
            original,
        })
    }

    /// Reassembles a set from saved paste layers; T_b starts as T_p.
    pub fn from_layers(
        original: RgbImage,
        nonskin: LabelImage,
        pasted: RgbImage,
        lesion_ids: LabelImage,
        dilated: RgbImage,
        footprint: LabelImage,
    ) -> Result<Self> {
        original.ensure_same_dims(&nonskin)?;
        original.ensure_same_dims(&pasted)?;
        original.ensure_same_dims(&lesion_ids)?;
        original.ensure_same_dims(&dilated)?;
        original.ensure_same_dims(&footprint)?;
        Ok(Self {
            blended: pasted.clone(),
            nonskin: nonskin.map(|&v| u8::from(v != 0)),
            original,
            pasted,
            lesion_ids,
            dilated,
            footprint,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.original.dims()
    }

    /// Lesion ids present in T_m, ascending.
    pub fn lesion_list(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &id in self.lesion_ids.iter() {
            seen[usize::from(id)] = true;
        }
        (1..=255u8).filter(|&i| seen[usize::from(i)]).collect()
    }

    /// Texels a blend of `id` may modify: its footprint.
    pub fn editable_texels(&self, id: u8) -> Vec<usize> {
        self.footprint
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f == id).then_some(i))
            .collect()
    }
}
