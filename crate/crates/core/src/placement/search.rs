use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::masks::{body_and_skin_masks, compose_paste_view, depth_change, PasteView};
use super::{LesionSource, Orientation, TextureSet};
use crate::error::{Error, Result};
use crate::geometry::{FaceSample, Mesh, SurfaceSampler};
use crate::grid::{Mask, Rgb};
use crate::renderer::{
    bilinear_taps, rasterize, render_label, shade, Camera, Fragments, Lights, Material, PointLight,
    DEFAULT_FOV_DEG, DEFAULT_VIEW_SIZE,
};

/// Light colors used while placing and blending: ambient, diffuse, specular.
pub const BLEND_AMBIENT: f64 = 0.5;
pub const BLEND_DIFFUSE: f64 = 0.5;
pub const BLEND_SPECULAR: f64 = 0.025;
pub const BLEND_MATERIAL_SPECULAR: f64 = 0.025;
pub const BLEND_SHININESS: f64 = 50.0;

/// Single point light at `position` with the fixed blending colors.
pub fn blending_lights(position: Point3<f64>) -> Lights {
    Lights::single(PointLight::gray(
        position,
        BLEND_AMBIENT,
        BLEND_DIFFUSE,
        BLEND_SPECULAR,
    ))
}

pub fn blending_material() -> Material {
    Material::new(BLEND_MATERIAL_SPECULAR, BLEND_SHININESS)
}

/// Camera position at distance `d` along the surface normal.
pub fn camera_from_surface(
    surface: &Point3<f64>,
    normal: &Vector3<f64>,
    d: f64,
) -> Result<Point3<f64>> {
    if !(d > 0.0) {
        return Err(Error::Invalid(format!(
            "camera distance {d} must be positive"
        )));
    }
    let len = normal.norm();
    if !(len > 0.0) || !len.is_finite() {
        return Err(Error::Invalid("surface normal has zero length".into()));
    }
    let n = if (len - 1.0).abs() > 1e-6 {
        log::warn!("normalizing surface normal of length {len}");
        normal / len
    } else {
        *normal
    };
    Ok(surface + n * d)
}

/// Camera looking at `surface` from distance `d` along `normal`.
pub fn surface_camera(
    surface: &FaceSample,
    d: f64,
    width: usize,
    height: usize,
    fov_deg: f64,
) -> Result<Camera> {
    let position = camera_from_surface(&surface.world_point, &surface.normal, d)?;
    Ok(Camera::new(position, surface.world_point, width, height).with_fov(fov_deg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementParams {
    /// Maximum accepted depth change inside the dilated lesion mask.
    pub depth_threshold: f64,
    pub max_tries: usize,
    /// Camera distance interval for placement views.
    pub distance_range: [f64; 2],
    pub view_size: usize,
    pub fov_deg: f64,
    /// Longest lesion side as a fraction of the view width.
    pub lesion_scale: f64,
}

impl Default for PlacementParams {
    fn default() -> Self {
        Self {
            depth_threshold: 0.02,
            max_tries: 500,
            distance_range: [0.4, 0.6],
            view_size: DEFAULT_VIEW_SIZE,
            fov_deg: DEFAULT_FOV_DEG,
            lesion_scale: 0.25,
        }
    }
}

impl PlacementParams {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.distance_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!(
                "placement distance range [{lo}, {hi}] invalid"
            )));
        }
        if !(self.lesion_scale > 0.0 && self.lesion_scale <= 1.0) {
            return Err(Error::Config(format!(
                "lesion_scale {} outside (0, 1]",
                self.lesion_scale
            )));
        }
        if self.view_size == 0 || self.max_tries == 0 {
            return Err(Error::Config(
                "view_size and max_tries must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Resize factor that makes the lesion's longest side `lesion_scale` of the view.
    pub fn scale_for(&self, lesion: &LesionSource) -> f64 {
        let (w, h) = lesion.dims();
        self.lesion_scale * self.view_size as f64 / w.max(h) as f64
    }
}

/// Reasons a candidate location is rejected, in the order they are tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// The dilated lesion covers clothing, hair or other non-skin.
    NonSkin,
    /// The dilated lesion extends past the body silhouette.
    Background,
    /// Depth inside the dilated lesion varies by more than the threshold.
    DepthChange,
    /// The lesion would overlap an already pasted lesion.
    LesionOverlap,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::NonSkin,
        Criterion::Background,
        Criterion::DepthChange,
        Criterion::LesionOverlap,
    ];
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::NonSkin => "overlaps non-skin",
            Criterion::Background => "overlaps background",
            Criterion::DepthChange => "depth change above threshold",
            Criterion::LesionOverlap => "overlaps another lesion",
        })
    }
}

/// Outcome of an exhausted placement search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementFailure {
    pub tries: usize,
    /// Rejections per criterion, indexed like [`Criterion::ALL`].
    pub rejections: [usize; 4],
    /// Criterion that rejected the most candidates.
    pub dominant: Criterion,
    /// Smallest depth change seen over all tries.
    pub best_depth_change: f64,
}

impl fmt::Display for PlacementFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "no location after {} tries; most rejections: {} ({}/{})",
            self.tries,
            self.dominant,
            self.rejections[Criterion::ALL
                .iter()
                .position(|c| *c == self.dominant)
                .unwrap_or(0)],
            self.tries
        )
    }
}

/// An accepted lesion location.
#[derive(Debug, Clone)]
pub struct PlacementCandidate {
    pub lesion_id: u8,
    pub surface: FaceSample,
    pub distance: f64,
    pub camera: Camera,
    pub paste: PasteView,
    pub depth_change: f64,
    pub fragments: Fragments,
    /// Texels reached by the dilated mask, ascending.
    pub footprint: Vec<usize>,
    pub tries: usize,
}

impl PlacementCandidate {
    /// Serializable summary; `orientation` is the transform applied to the
    /// lesion before the search.
    pub fn record(&self, orientation: Orientation) -> PlacementRecord {
        let p = self.surface.world_point;
        let n = self.surface.normal;
        PlacementRecord {
            lesion_id: self.lesion_id,
            face_index: self.surface.face_index,
            surface_point: [p.x, p.y, p.z],
            normal: [n.x, n.y, n.z],
            distance: self.distance,
            orientation,
            depth_change: self.depth_change,
            tries: self.tries,
        }
    }
}

/// What later stages need to know about an accepted placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub lesion_id: u8,
    pub face_index: usize,
    pub surface_point: [f64; 3],
    pub normal: [f64; 3],
    pub distance: f64,
    pub orientation: Orientation,
    pub depth_change: f64,
    pub tries: usize,
}

impl PlacementRecord {
    /// Camera at distance `d` from the placement point, looking at it.
    pub fn camera(&self, d: f64, size: usize, fov_deg: f64) -> Result<Camera> {
        let s = Point3::from(self.surface_point);
        let position = camera_from_surface(&s, &Vector3::from(self.normal), d)?;
        Ok(Camera::new(position, s, size, size).with_fov(fov_deg))
    }
}

/// Evaluation of one placement view against the acceptance criteria.
#[derive(Debug, Clone)]
pub struct CandidateCheck {
    pub depth_change: f64,
    pub footprint: Vec<usize>,
    pub rejected: Option<Criterion>,
}

/// Applies the placement criteria to an already composed view.
pub fn check_candidate(
    fragments: &Fragments,
    paste: &PasteView,
    textures: &TextureSet,
    d: f64,
    threshold: f64,
) -> Result<CandidateCheck> {
    let nonskin_view = render_label(fragments, &textures.nonskin);
    let masks = body_and_skin_masks(fragments, &nonskin_view)?;
    let region = &paste.dilated_mask;
    let c = depth_change(&masks.z_skin, d, region)?;
    let footprint = texel_footprint(fragments, region, textures.dims());

    let covers =
        |pred: &dyn Fn(usize) -> bool| region.iter().enumerate().any(|(i, &m)| m && pred(i));
    let body = masks.body.as_slice();
    let ns = nonskin_view.as_slice();
    let rejected = if covers(&|i| body[i] && ns[i] != 0) {
        Some(Criterion::NonSkin)
    } else if covers(&|i| !body[i]) {
        Some(Criterion::Background)
    } else if !(c <= threshold) {
        Some(Criterion::DepthChange)
    } else if footprint
        .iter()
        .any(|&t| textures.footprint.as_slice()[t] != 0)
    {
        Some(Criterion::LesionOverlap)
    } else {
        None
    };
    Ok(CandidateCheck {
        depth_change: c,
        footprint,
        rejected,
    })
}

/// Samples surface locations until one satisfies every criterion.
///
/// Each try draws a surface point and a distance from
/// `params.distance_range`, renders the view under the blending lights,
/// composes the lesion at its center and runs [`check_candidate`].
pub fn find_placement<R: Rng + ?Sized>(
    mesh: &Mesh,
    textures: &TextureSet,
    lesion: &LesionSource,
    rng: &mut R,
    params: &PlacementParams,
) -> Result<PlacementCandidate> {
    params.validate()?;
    let sampler = SurfaceSampler::new(mesh)?;
    let scale = params.scale_for(lesion);
    let mut rejections = [0usize; 4];
    let mut best_c = f64::INFINITY;
    let [lo, hi] = params.distance_range;
    let material = blending_material();

    for attempt in 1..=params.max_tries {
        let surface = sampler.sample(rng);
        let d = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        let camera = surface_camera(
            &surface,
            d,
            params.view_size,
            params.view_size,
            params.fov_deg,
        )?;
        let fragments = rasterize(mesh, &camera);
        let lights = blending_lights(camera.position);
        let rendered = shade(&fragments, mesh, &textures.pasted, &lights, &material)?;
        let paste = compose_paste_view(&rendered.view, lesion, scale)?;
        let check = check_candidate(&fragments, &paste, textures, d, params.depth_threshold)?;
        best_c = best_c.min(check.depth_change);
        match check.rejected {
            Some(crit) => {
                let k = Criterion::ALL
                    .iter()
                    .position(|c| *c == crit)
                    .expect("known criterion");
                rejections[k] += 1;
                log::debug!("lesion {} try {attempt}: {crit}", lesion.lesion_id);
            }
            None => {
                return Ok(PlacementCandidate {
                    lesion_id: lesion.lesion_id,
                    surface,
                    distance: d,
                    camera,
                    paste,
                    depth_change: check.depth_change,
                    fragments,
                    footprint: check.footprint,
                    tries: attempt,
                });
            }
        }
    }
    let dominant_idx = (0..4).fold(0, |best, k| {
        if rejections[k] > rejections[best] {
            k
        } else {
            best
        }
    });
    Err(Error::Placement {
        lesion_id: lesion.lesion_id,
        failure: PlacementFailure {
            tries: params.max_tries,
            rejections,
            dominant: Criterion::ALL[dominant_idx],
            best_depth_change: best_c,
        },
    })
}

/// Texels receiving nonzero bilinear weight from the masked covered pixels.
pub fn texel_footprint(fragments: &Fragments, mask: &Mask, dims: (usize, usize)) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for (i, &m) in mask.iter().enumerate() {
        if !m || fragments.face.as_slice()[i] < 0 {
            continue;
        }
        for (t, w) in bilinear_taps(dims.0, dims.1, fragments.uv.as_slice()[i]) {
            if w > 0.0 {
                out.push(t);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Weighted-average splat of masked view colors into texels. Returns the
/// texel colors keyed by texel index.
fn splat(
    fragments: &Fragments,
    colors: &[Rgb],
    mask: &Mask,
    dims: (usize, usize),
) -> BTreeMap<usize, Rgb> {
    let mut acc: BTreeMap<usize, ([f64; 3], f64)> = BTreeMap::new();
    for (i, &m) in mask.iter().enumerate() {
        if !m || fragments.face.as_slice()[i] < 0 {
            continue;
        }
        let rgb = colors[i];
        for (t, w) in bilinear_taps(dims.0, dims.1, fragments.uv.as_slice()[i]) {
            if w > 0.0 {
                let e = acc.entry(t).or_insert(([0.0; 3], 0.0));
                for (acc_c, v) in e.0.iter_mut().zip(rgb) {
                    *acc_c += w * v;
                }
                e.1 += w;
            }
        }
    }
    acc.into_iter()
        .map(|(t, (sum, w))| (t, sum.map(|s| s / w)))
        .collect()
}

/// Fills texels missed by the splat but surrounded (≥ 5 of 8 neighbors) by
/// splatted texels, using the mean of those neighbors. Only texels for which
/// `allowed` holds are filled.
fn fill_holes(
    texels: &mut BTreeMap<usize, Rgb>,
    dims: (usize, usize),
    allowed: impl Fn(usize) -> bool,
) {
    let (w, h) = (dims.0 as isize, dims.1 as isize);
    let neighbors = |t: usize| {
        let (x, y) = ((t % dims.0) as isize, (t / dims.0) as isize);
        (-1..=1)
            .flat_map(move |dy| (-1..=1).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| dx != 0 || dy != 0)
            .map(move |(dx, dy)| (x + dx, y + dy))
            .filter(move |&(nx, ny)| nx >= 0 && ny >= 0 && nx < w && ny < h)
            .map(|(nx, ny)| ny as usize * dims.0 + nx as usize)
    };
    let mut candidates: Vec<usize> = texels
        .keys()
        .flat_map(|&t| neighbors(t))
        .filter(|t| !texels.contains_key(t))
        .collect();
    candidates.sort_unstable();
    candidates.dedup();
    let mut fills = Vec::new();
    for t in candidates {
        if !allowed(t) {
            continue;
        }
        let hits: Vec<Rgb> = neighbors(t)
            .filter_map(|n| texels.get(&n).copied())
            .collect();
        if hits.len() >= 5 {
            let mut mean = [0.0; 3];
            for hcol in &hits {
                for c in 0..3 {
                    mean[c] += hcol[c] / hits.len() as f64;
                }
            }
            fills.push((t, mean));
        }
    }
    texels.extend(fills);
}

/// Writes one lesion into T_p/T_m (core) and T_d/footprint (dilated).
pub fn paste_to_texture(
    textures: &mut TextureSet,
    fragments: &Fragments,
    paste: &PasteView,
    lesion_id: u8,
) -> Result<()> {
    if lesion_id == 0 {
        return Err(Error::Invalid(
            "lesion id 0 is reserved for background".into(),
        ));
    }
    paste.mask.ensure_same_dims(&fragments.face)?;
    let dims = textures.dims();
    let reach = texel_footprint(fragments, &paste.dilated_mask, dims);
    if let Some(&t) = reach.iter().find(|&&t| {
        !matches!(textures.footprint.as_slice()[t], 0)
            && textures.footprint.as_slice()[t] != lesion_id
    }) {
        return Err(Error::Invalid(format!(
            "lesion {lesion_id} footprint collides with lesion {} at texel {t}",
            textures.footprint.as_slice()[t]
        )));
    }

    let mut ring = splat(
        fragments,
        paste.dilated_image.as_slice(),
        &paste.dilated_mask,
        dims,
    );
    {
        let fp = textures.footprint.as_slice();
        fill_holes(&mut ring, dims, |t| fp[t] == 0 || fp[t] == lesion_id);
    }
    for (&t, rgb) in &ring {
        textures.dilated.as_mut_slice()[t] = *rgb;
        textures.footprint.as_mut_slice()[t] = lesion_id;
    }

    let mut core = splat(fragments, paste.image.as_slice(), &paste.mask, dims);
    {
        let fp = textures.footprint.as_slice();
        fill_holes(&mut core, dims, |t| fp[t] == lesion_id);
    }
    for (&t, rgb) in &core {
        textures.pasted.as_mut_slice()[t] = *rgb;
        textures.lesion_ids.as_mut_slice()[t] = lesion_id;
    }
    textures.blended = textures.pasted.clone();
    Ok(())
}

/// Pastes an accepted candidate.
pub fn paste_candidate(textures: &mut TextureSet, candidate: &PlacementCandidate) -> Result<()> {
    paste_to_texture(
        textures,
        &candidate.fragments,
        &candidate.paste,
        candidate.lesion_id,
    )
}
