//! Small procedural scenes: meshes, textures and lesion patches that need no
//! external assets. Used by tests, benchmarks and demos.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::anatomy::PART_COUNT;
use crate::geometry::{Mesh, Uv};
use crate::grid::{Grid, Mask, RgbImage};
use crate::io;
use crate::placement::{LesionEntry, LesionSource};

/// Latitude-longitude sphere with an equirectangular UV atlas. Vertices on
/// the seam are duplicated; pole caps use one triangle per segment. Each
/// vertex is labelled with one of the 16 parts by latitude band, head on top.
pub fn uv_sphere(center: Point3<f64>, radius: f64, segments: usize, rings: usize) -> Result<Mesh> {
    let segments = segments.max(3);
    let rings = rings.max(2);
    let mut vertices = Vec::with_capacity((rings + 1) * (segments + 1));
    let mut vuv = Vec::with_capacity(vertices.capacity());
    let mut labels = Vec::with_capacity(vertices.capacity());
    for i in 0..=rings {
        let theta = PI * i as f64 / rings as f64;
        for j in 0..=segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            vertices.push(Point3::new(
                center.x + radius * theta.sin() * phi.cos(),
                center.y + radius * theta.cos(),
                center.z - radius * theta.sin() * phi.sin(),
            ));
            vuv.push([j as f64 / segments as f64, 1.0 - i as f64 / rings as f64]);
            let band = (i as f64 / rings as f64 * PART_COUNT as f64) as usize;
            labels.push(band.min(PART_COUNT - 1) as u8);
        }
    }
    let at = |i: usize, j: usize| i * (segments + 1) + j;
    let mut faces = Vec::new();
    for i in 0..rings {
        for j in 0..segments {
            let (a, b, c, d) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
            if i > 0 {
                faces.push([a, b, d]);
            }
            if i + 1 < rings {
                faces.push([b, c, d]);
            }
        }
    }
    let uvs = faces.iter().map(|f| f.map(|v| vuv[v])).collect();
    Mesh::new(vertices, faces, uvs)?.with_anatomy(labels)
}

/// Axis-aligned quad in the plane `z = z`, facing +z, with UVs spanning
/// `uv_rect = [u0, v0, u1, v1]`.
fn push_quad(
    x: [f64; 2],
    y: [f64; 2],
    z: f64,
    uv_rect: [f64; 4],
    vertices: &mut Vec<Point3<f64>>,
    faces: &mut Vec<[usize; 3]>,
    uvs: &mut Vec<[Uv; 3]>,
) {
    let base = vertices.len();
    vertices.extend([
        Point3::new(x[0], y[0], z),
        Point3::new(x[1], y[0], z),
        Point3::new(x[1], y[1], z),
        Point3::new(x[0], y[1], z),
    ]);
    let [u0, v0, u1, v1] = uv_rect;
    let (t0, t1, t2, t3) = ([u0, v0], [u1, v0], [u1, v1], [u0, v1]);
    faces.push([base, base + 1, base + 2]);
    uvs.push([t0, t1, t2]);
    faces.push([base, base + 2, base + 3]);
    uvs.push([t0, t2, t3]);
}

/// Two-triangle square `[-h, h]²` at `z`, facing +z, mapped to the full texture.
pub fn plane(half_size: f64, z: f64) -> Result<Mesh> {
    let (mut v, mut f, mut t) = (Vec::new(), Vec::new(), Vec::new());
    push_quad(
        [-half_size, half_size],
        [-half_size, half_size],
        z,
        [0.0, 0.0, 1.0, 1.0],
        &mut v,
        &mut f,
        &mut t,
    );
    let n = v.len();
    Mesh::new(v, f, t)?.with_anatomy(vec![1; n])
}

/// A torso plane at `z = 0` crossed by a narrow arm strip floating `gap`
/// in front of it. The torso uses the left half of the texture, the arm the
/// right half.
pub fn occluded_torso(half_size: f64, arm_half_width: f64, gap: f64) -> Result<Mesh> {
    let (mut v, mut f, mut t) = (Vec::new(), Vec::new(), Vec::new());
    push_quad(
        [-half_size, half_size],
        [-half_size, half_size],
        0.0,
        [0.0, 0.0, 0.5, 1.0],
        &mut v,
        &mut f,
        &mut t,
    );
    push_quad(
        [-arm_half_width, arm_half_width],
        [-half_size, half_size],
        gap,
        [0.5, 0.0, 1.0, 1.0],
        &mut v,
        &mut f,
        &mut t,
    );
    // upper torso and upper arm left
    Mesh::new(v, f, t)?.with_anatomy(vec![1, 1, 1, 1, 10, 10, 10, 10])
}

/// Skin-toned texture with mild low-frequency variation and texel noise.
pub fn skin_texture(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = [0.86, 0.66, 0.54];
    Grid::from_fn(width, height, |x, y| {
        let u = x as f64 / width as f64;
        let v = y as f64 / height as f64;
        let wave = 0.04 * (2.0 * PI * 3.0 * u).sin() * (2.0 * PI * 2.0 * v).cos();
        let n: f64 = rng.random_range(-0.02..0.02);
        base.map(|c| (c + wave + n).clamp(0.0, 1.0))
    })
}

/// Dark elliptical lesion on a skin-toned background. The mask is the
/// ellipse; the photo's skin tone deliberately differs from
/// [`skin_texture`] so blending has something to correct.
pub fn lesion_patch(size: usize, lesion_id: u8, seed: u64) -> Result<LesionSource> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rx = size as f64 * rng.random_range(0.28..0.36);
    let ry = size as f64 * rng.random_range(0.22..0.30);
    let c = (size as f64 - 1.0) / 2.0;
    let mask: Mask = Grid::from_fn(size, size, |x, y| {
        let dx = (x as f64 - c) / rx;
        let dy = (y as f64 - c) / ry;
        dx * dx + dy * dy <= 1.0
    });
    let image = Grid::from_fn(size, size, |x, y| {
        let dx = (x as f64 - c) / rx;
        let dy = (y as f64 - c) / ry;
        let r = (dx * dx + dy * dy).sqrt();
        let n: f64 = rng.random_range(-0.03..0.03);
        if r <= 1.0 {
            let shade = 0.6 + 0.4 * r;
            [0.45 * shade + n, 0.28 * shade + n, 0.20 * shade + n].map(|v| v.clamp(0.0, 1.0))
        } else {
            [0.78 + n, 0.58 + n, 0.50 + n]
        }
    });
    LesionSource::new(image, mask, lesion_id)
}

/// Sizes of the inputs written by [`write_demo`].
#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub texture_size: usize,
    pub lesion_sources: usize,
    pub lesions_per_mesh: usize,
    pub views_per_mesh: usize,
    pub view_size: usize,
    pub blend_steps: usize,
    pub backgrounds: usize,
    pub seed: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            texture_size: 1024,
            lesion_sources: 3,
            lesions_per_mesh: 3,
            views_per_mesh: 6,
            view_size: 128,
            blend_steps: 10,
            backgrounds: 2,
            seed: 0,
        }
    }
}

/// Writes a self-contained run into `dir`: a labelled sphere mesh with its
/// texture, a lesion manifest, backgrounds and `config.yaml`. Returns the
/// config path.
pub fn write_demo(dir: &Path, opts: &DemoOptions) -> Result<PathBuf> {
    let write =
        |path: PathBuf, text: String| std::fs::write(&path, text).map_err(|e| Error::io(&path, e));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mesh = uv_sphere(Point3::origin(), 1.0, 48, 24)?;
    write(dir.join("sphere.obj"), mesh.to_obj())?;
    let labels = serde_json::to_string(mesh.anatomy().unwrap_or(&[]))
        .map_err(|e| Error::Invalid(e.to_string()))?;
    write(dir.join("sphere_labels.json"), labels)?;
    io::save_rgb(
        dir.join("sphere.png"),
        &skin_texture(opts.texture_size, opts.texture_size, opts.seed),
    )?;

    let mut entries = Vec::new();
    for i in 0..opts.lesion_sources {
        let id = (i + 1) as u8;
        let lesion = lesion_patch(96, id, opts.seed.wrapping_add(100 + i as u64))?;
        let image = PathBuf::from(format!("lesions/lesion_{id:02}.png"));
        let mask = PathBuf::from(format!("lesions/lesion_{id:02}_mask.png"));
        io::save_rgb(dir.join(&image), &lesion.image)?;
        io::save_labels(
            dir.join(&mask),
            &lesion.mask.map(|&m| if m { 255 } else { 0 }),
        )?;
        entries.push(LesionEntry { id, image, mask });
    }
    let manifest =
        serde_json::to_string_pretty(&entries).map_err(|e| Error::Invalid(e.to_string()))?;
    write(dir.join("lesions.json"), manifest)?;

    let backgrounds = dir.join("backgrounds");
    std::fs::create_dir_all(&backgrounds).map_err(|e| Error::io(&backgrounds, e))?;
    for i in 0..opts.backgrounds {
        let tint =
            [0.2 + 0.3 * i as f64, 0.5, 0.7 - 0.2 * i as f64].map(|v: f64| v.clamp(0.0, 1.0));
        let img = Grid::from_fn(64, 48, |x, y| {
            tint.map(|c| c * (0.5 + 0.5 * ((x + y) % 16) as f64 / 16.0))
        });
        io::save_rgb(backgrounds.join(format!("bg_{i:02}.png")), &img)?;
    }

    let mut cfg = RunConfig::from_yaml(
        "version: 1\nmeshes: [{id: sphere, obj: sphere.obj, texture: sphere.png, anatomy_labels: sphere_labels.json}]\nlesions: lesions.json\n",
    )?;
    cfg.seed = opts.seed;
    cfg.backgrounds = Some("backgrounds".into());
    cfg.lesions_per_mesh = opts.lesions_per_mesh;
    cfg.views_per_mesh = opts.views_per_mesh;
    cfg.placement.view_size = opts.view_size;
    cfg.blend.view_size = opts.view_size;
    cfg.blend.steps = opts.blend_steps;
    cfg.render.view_size = opts.view_size;
    let path = dir.join("config.yaml");
    write(path.clone(), cfg.to_yaml()?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_is_closed_and_outward() {
        let m = uv_sphere(Point3::origin(), 1.0, 16, 8).unwrap();
        assert_eq!(m.face_count(), 16 * 2 * 8 - 2 * 16);
        for f in 0..m.face_count() {
            let n = m.face_normal(f);
            let [a, b, c] = m.corners(f);
            let mid = (a.coords + b.coords + c.coords) / 3.0;
            assert!(n.dot(&mid) > 0.0, "face {f} points inward");
        }
        let (_, dropped) = m.without_degenerate_faces();
        assert_eq!(dropped, 0);
    }

    #[test]
    fn plane_faces_camera() {
        let m = plane(1.0, 0.0).unwrap();
        assert!(m.face_normal(0).z > 0.99 && m.face_normal(1).z > 0.99);
    }

    #[test]
    fn lesion_patch_has_mask() {
        let l = lesion_patch(48, 2, 7).unwrap();
        assert!(l.mask.count() > 48 * 48 / 5);
        assert!(l.dilated.count() > l.mask.count());
    }

    #[test]
    fn demo_config_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_demo(dir.path(), &DemoOptions::default()).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.meshes[0].obj, dir.path().join("sphere.obj"));
        assert_eq!(
            crate::placement::load_manifest(&cfg.lesions).unwrap().len(),
            3
        );
    }
}
