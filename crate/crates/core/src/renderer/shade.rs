//! Phong shading of rasterized fragments and the texture adjoint.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{rasterize, Camera, Fragments};
use crate::error::{Error, Result};
use crate::geometry::{Mesh, Uv};
use crate::grid::{clamp01, Grid, LabelImage, Rgb, RgbImage};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointLight {
    pub position: Point3<f64>,
    pub ambient: Rgb,
    pub diffuse: Rgb,
    pub specular: Rgb,
}

impl PointLight {
    pub fn gray(position: Point3<f64>, ambient: f64, diffuse: f64, specular: f64) -> Self {
        Self {
            position,
            ambient: [ambient; 3],
            diffuse: [diffuse; 3],
            specular: [specular; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Lights {
    pub points: Vec<PointLight>,
}

impl Lights {
    pub fn single(light: PointLight) -> Self {
        Self {
            points: vec![light],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.points {
            for c in l.ambient.iter().chain(&l.diffuse).chain(&l.specular) {
                if !(0.0..=1.0).contains(c) {
                    return Err(Error::Invalid(format!("light channel {c} outside [0,1]")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub specular_color: Rgb,
    pub shininess: f64,
}

impl Material {
    pub fn new(specular: f64, shininess: f64) -> Self {
        Self {
            specular_color: [specular; 3],
            shininess,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shininess > 0.0) {
            return Err(Error::Invalid(format!(
                "shininess {} must be positive",
                self.shininess
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// Shaded view, clamped to `[0, 1]`.
    pub view: RgbImage,
    /// Shaded view before clamping.
    pub unclamped: RgbImage,
    pub fragments: Fragments,
    /// Per-pixel multiplier applied to the sampled texel color
    /// (ambient + diffuse; specular is additive and excluded).
    pub shade_gain: RgbImage,
}

impl RenderOutput {
    /// Zeroes the gradient of saturated channels, i.e. applies the
    /// derivative of the output clamp.
    pub fn clamp_grad(&self, grad: &mut RgbImage) {
        for (g, u) in grad.as_mut_slice().iter_mut().zip(self.unclamped.iter()) {
            for c in 0..3 {
                if !(0.0..=1.0).contains(&u[c]) {
                    g[c] = 0.0;
                }
            }
        }
    }
}

/// Up to four `(texel index, weight)` taps of a bilinear lookup with
/// clamp-to-edge addressing. Row 0 of the texture is `v = 1`.
#[inline]
pub fn bilinear_taps(width: usize, height: usize, uv: Uv) -> [(usize, f64); 4] {
    let x = uv[0] * width as f64 - 0.5;
    let y = (1.0 - uv[1]) * height as f64 - 0.5;
    let xf = x.floor();
    let yf = y.floor();
    let fx = x - xf;
    let fy = y - yf;
    let cx = |i: f64| (i.max(0.0) as usize).min(width - 1);
    let cy = |j: f64| (j.max(0.0) as usize).min(height - 1);
    let (x0, x1) = (cx(xf), cx(xf + 1.0));
    let (y0, y1) = (cy(yf), cy(yf + 1.0));
    [
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ]
}

#[inline]
pub fn sample_bilinear(texture: &RgbImage, uv: Uv) -> Rgb {
    let taps = bilinear_taps(texture.width(), texture.height(), uv);
    let data = texture.as_slice();
    let mut out = [0.0; 3];
    for (i, w) in taps {
        for c in 0..3 {
            out[c] += w * data[i][c];
        }
    }
    out
}

/// Texel holding `uv` (no interpolation).
#[inline]
pub fn nearest_texel(width: usize, height: usize, uv: Uv) -> usize {
    let x = ((uv[0] * width as f64).floor().max(0.0) as usize).min(width - 1);
    let y = (((1.0 - uv[1]) * height as f64).floor().max(0.0) as usize).min(height - 1);
    y * width + x
}

fn check_fragments(fragments: &Fragments, mesh: &Mesh) -> Result<()> {
    if let Some(&bad) = fragments
        .face
        .iter()
        .find(|&&f| f >= mesh.face_count() as i32)
    {
        return Err(Error::Invalid(format!(
            "fragments reference face {bad} but mesh has {} faces",
            mesh.face_count()
        )));
    }
    Ok(())
}

/// Phong shading: per light,
/// `(ambient + diffuse·max(0, n·l)) ⊙ tex(uv) + specular ⊙ ks · max(0, r·v)^shininess`,
/// with smooth (interpolated vertex) normals and the specular term only on
/// lit sides (`n·l > 0`).
pub fn shade(
    fragments: &Fragments,
    mesh: &Mesh,
    texture: &RgbImage,
    lights: &Lights,
    material: &Material,
) -> Result<RenderOutput> {
    if texture.is_empty() {
        return Err(Error::Invalid("texture must be at least 1x1".into()));
    }
    check_fragments(fragments, mesh)?;
    let (w, h) = fragments.dims();
    let mut pixels = vec![([0.0; 3], [0.0; 3]); w * h];
    par::for_each_row(&mut pixels, w, |y, row| {
        for (x, slot) in row.iter_mut().enumerate() {
            let face = *fragments.face.get(x, y);
            if face < 0 {
                continue;
            }
            let (gain, spec) = lighting(fragments, mesh, lights, material, face as usize, x, y);
            let tex = sample_bilinear(texture, *fragments.uv.get(x, y));
            let mut color = [0.0; 3];
            for c in 0..3 {
                color[c] = gain[c] * tex[c] + spec[c];
            }
            *slot = (color, gain);
        }
    });
    let unclamped = Grid::from_vec(w, h, pixels.iter().map(|p| p.0).collect())?;
    let shade_gain = Grid::from_vec(w, h, pixels.iter().map(|p| p.1).collect())?;
    Ok(RenderOutput {
        view: unclamped.map(|p| p.map(clamp01)),
        unclamped,
        fragments: fragments.clone(),
        shade_gain,
    })
}

/// Returns (texture gain, additive specular) at one covered pixel.
fn lighting(
    fragments: &Fragments,
    mesh: &Mesh,
    lights: &Lights,
    material: &Material,
    face: usize,
    x: usize,
    y: usize,
) -> (Rgb, Rgb) {
    let b = fragments.barycentric.get(x, y);
    let [ia, ib, ic] = mesh.faces()[face];
    let [pa, pb, pc] = mesh.corners(face);
    let pos = Point3::from(pa.coords * b[0] + pb.coords * b[1] + pc.coords * b[2]);
    let vn = mesh.vertex_normals();
    let n = vn[ia] * b[0] + vn[ib] * b[1] + vn[ic] * b[2];
    let n = if n.norm() > 0.0 {
        n.normalize()
    } else {
        mesh.face_normal(face)
    };
    let view_dir = unit_or_zero(fragments.eye - pos);

    let mut gain = [0.0; 3];
    let mut spec = [0.0; 3];
    for light in &lights.points {
        let l = unit_or_zero(light.position - pos);
        let cos = n.dot(&l);
        let diffuse = cos.max(0.0);
        let highlight = if cos > 0.0 {
            let r = n * (2.0 * cos) - l;
            r.dot(&view_dir).max(0.0).powf(material.shininess)
        } else {
            0.0
        };
        for c in 0..3 {
            gain[c] += light.ambient[c] + light.diffuse[c] * diffuse;
            spec[c] += light.specular[c] * material.specular_color[c] * highlight;
        }
    }
    (gain, spec)
}

fn unit_or_zero(v: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        Vector3::zeros()
    }
}

/// Rasterize then shade: the `(view, faces, depth)` render contract, with the
/// shading gain kept for the backward pass.
pub fn render(
    mesh: &Mesh,
    texture: &RgbImage,
    camera: &Camera,
    lights: &Lights,
    material: &Material,
) -> Result<RenderOutput> {
    camera.validate()?;
    let fragments = rasterize(mesh, camera);
    shade(&fragments, mesh, texture, lights, material)
}

/// Samples an integer-valued texture at fragment UVs with nearest-texel
/// lookup. Equivalent to ambient-only rendering with unit ambient light, so
/// the result is independent of any lighting. Background pixels are 0.
pub fn render_label(fragments: &Fragments, labels: &LabelImage) -> LabelImage {
    let (tw, th) = labels.dims();
    let data = labels.as_slice();
    Grid::from_fn(fragments.width(), fragments.height(), |x, y| {
        if *fragments.face.get(x, y) < 0 {
            0
        } else {
            data[nearest_texel(tw, th, *fragments.uv.get(x, y))]
        }
    })
}

/// Adjoint of the texture-to-view map at fixed fragments: scatters
/// `view_grad ⊙ shade_gain` of every covered pixel into its bilinear taps.
///
/// Accumulation runs in pixel order, so the result is bit-reproducible.
pub fn texture_vjp(
    fragments: &Fragments,
    shade_gain: &RgbImage,
    view_grad: &RgbImage,
    texture_dims: (usize, usize),
) -> Result<RgbImage> {
    fragments.face.ensure_same_dims(shade_gain)?;
    fragments.face.ensure_same_dims(view_grad)?;
    let (tw, th) = texture_dims;
    if tw == 0 || th == 0 {
        return Err(Error::Invalid("texture must be at least 1x1".into()));
    }
    let mut grad: RgbImage = Grid::new(tw, th);
    let out = grad.as_mut_slice();
    for (i, &face) in fragments.face.iter().enumerate() {
        if face < 0 {
            continue;
        }
        let g = view_grad.as_slice()[i];
        let s = shade_gain.as_slice()[i];
        let gs = [g[0] * s[0], g[1] * s[1], g[2] * s[2]];
        if gs == [0.0; 3] {
            continue;
        }
        for (t, w) in bilinear_taps(tw, th, fragments.uv.as_slice()[i]) {
            if w != 0.0 {
                for c in 0..3 {
                    out[t][c] += w * gs[c];
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::parse_obj;

    fn facing_quad(z: f64) -> Mesh {
        let text = format!(
            "v -1 -1 {z}\nv 1 -1 {z}\nv 1 1 {z}\nv -1 1 {z}\n\
             vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n\
             f 1/1 2/2 3/3\nf 1/1 3/3 4/4\n"
        );
        parse_obj(&text).unwrap().mesh
    }

    fn camera(w: usize) -> Camera {
        Camera::new(Point3::origin(), Point3::new(0.0, 0.0, -1.0), w, w)
    }

    fn gradient_texture(w: usize, h: usize) -> RgbImage {
        Grid::from_fn(w, h, |x, y| {
            [
                x as f64 / w as f64,
                y as f64 / h as f64,
                ((x + y) % 3) as f64 / 3.0,
            ]
        })
    }

    #[test]
    fn ambient_only_equals_bilinear_lookup() {
        let mesh = facing_quad(-2.0);
        let tex = gradient_texture(8, 8);
        let frags = rasterize(&mesh, &camera(16));
        let lights = Lights::single(PointLight::gray(Point3::origin(), 1.0, 0.0, 0.0));
        let out = shade(&frags, &mesh, &tex, &lights, &Material::new(0.0, 10.0)).unwrap();
        for (i, px) in out.view.iter().enumerate() {
            let expect = sample_bilinear(&tex, frags.uv.as_slice()[i]);
            assert_eq!(*px, expect);
        }
    }

    #[test]
    fn dark_lights_give_black_body() {
        let mesh = facing_quad(-2.0);
        let frags = rasterize(&mesh, &camera(8));
        let lights = Lights::single(PointLight::gray(Point3::origin(), 0.0, 0.0, 0.0));
        let out = shade(
            &frags,
            &mesh,
            &gradient_texture(4, 4),
            &lights,
            &Material::new(1.0, 10.0),
        )
        .unwrap();
        assert!(out.view.iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn headlight_phong_closed_form() {
        // light at the camera, white texture: at pixel p on the plane z = -2,
        // n = +z, l = v = unit(eye - p), r = 2(n·l)n - l
        let mesh = facing_quad(-2.0);
        let cam = camera(16);
        let frags = rasterize(&mesh, &cam);
        let white = Grid::filled(4, 4, [1.0; 3]);
        let (ka, kd, ks, mat_s, shin) = (0.2, 0.5, 0.3, 0.4, 20.0);
        let lights = Lights::single(PointLight::gray(Point3::origin(), ka, kd, ks));
        let out = shade(&frags, &mesh, &white, &lights, &Material::new(mat_s, shin)).unwrap();
        let frame = cam.frame();
        for (x, y) in [(8, 8), (2, 3), (13, 12)] {
            let dir = cam.pixel_ray(&frame, x, y);
            let p = dir * (2.0 / -dir.z);
            let l = (-p).normalize();
            let n = Vector3::z();
            let cos = n.dot(&l);
            let r = n * (2.0 * cos) - l;
            let expect = ka + kd * cos + ks * mat_s * r.dot(&l).max(0.0).powf(shin);
            let got = out.unclamped.get(x, y)[0];
            assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        }
    }

    #[test]
    fn label_render_uniform_and_background() {
        let mesh =
            parse_obj("v -1 -1 -2\nv 1 -1 -2\nv 0 1 -2\nvt 0 0\nvt 1 0\nvt 0.5 1\nf 1/1 2/2 3/3\n")
                .unwrap()
                .mesh;
        let frags = rasterize(&mesh, &camera(32));
        let labels = render_label(&frags, &Grid::filled(4, 4, 7u8));
        for (i, l) in labels.iter().enumerate() {
            if frags.face.as_slice()[i] >= 0 {
                assert_eq!(*l, 7);
            } else {
                assert_eq!(*l, 0);
            }
        }
        assert!(labels.iter().any(|&l| l == 0));
    }

    #[test]
    fn label_render_half_texture() {
        // plane filling the view; u < 0.5 carries label 1, u >= 0.5 label 2
        let mesh = facing_quad(-1.0);
        let cam = camera(16);
        let frags = rasterize(&mesh, &cam);
        let tex = Grid::from_fn(8, 8, |x, _| if x < 4 { 1u8 } else { 2 });
        let labels = render_label(&frags, &tex);
        for y in 0..16 {
            for x in 0..16 {
                let u = frags.uv.get(x, y)[0];
                assert_eq!(*labels.get(x, y), if u < 0.5 { 1 } else { 2 });
            }
        }
    }

    #[test]
    fn vjp_zero_grad() {
        let mesh = facing_quad(-2.0);
        let frags = rasterize(&mesh, &camera(8));
        let gain = Grid::filled(8, 8, [1.0; 3]);
        let g = texture_vjp(&frags, &gain, &Grid::new(8, 8), (4, 4)).unwrap();
        assert!(g.iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn vjp_single_texel_hit() {
        let mut frags = Fragments::background(1, 1, Point3::origin());
        frags.face.set(0, 0, 0);
        // center of texel (1, 2) in a 4x4 texture: u = 1.5/4, v = 1 - 2.5/4
        frags.uv.set(0, 0, [1.5 / 4.0, 1.0 - 2.5 / 4.0]);
        let gain = Grid::filled(1, 1, [1.0; 3]);
        let grad = Grid::filled(1, 1, [0.3, -0.2, 0.7]);
        let g = texture_vjp(&frags, &gain, &grad, (4, 4)).unwrap();
        for (i, p) in g.iter().enumerate() {
            if i == 2 * 4 + 1 {
                assert_eq!(*p, [0.3, -0.2, 0.7]);
            } else {
                assert_eq!(*p, [0.0; 3]);
            }
        }
    }

    #[test]
    fn vjp_shape_mismatch() {
        let frags = Fragments::background(4, 4, Point3::origin());
        let bad = Grid::new(3, 4);
        assert!(texture_vjp(&frags, &bad, &Grid::new(4, 4), (2, 2)).is_err());
    }

    #[test]
    fn mismatched_mesh_rejected() {
        let mesh = facing_quad(-2.0);
        let frags = rasterize(&mesh, &camera(8));
        let one =
            parse_obj("v 0 0 -2\nv 1 0 -2\nv 0 1 -2\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n")
                .unwrap()
                .mesh;
        let lights = Lights::single(PointLight::gray(Point3::origin(), 1.0, 0.0, 0.0));
        assert!(shade(
            &frags,
            &one,
            &gradient_texture(2, 2),
            &lights,
            &Material::new(0.0, 1.0)
        )
        .is_err());
    }
}
