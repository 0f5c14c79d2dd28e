use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, SurfaceSampler};
use crate::placement::camera_from_surface;
use crate::renderer::{Camera, Lights, Material, PointLight};

/// Sampling intervals for dataset rendering, each `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRanges {
    pub distance: [f64; 2],
    pub ambient: [f64; 2],
    pub diffuse: [f64; 2],
    pub light_specular: [f64; 2],
    pub material_specular: [f64; 2],
    pub shininess: [f64; 2],
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            distance: [0.1, 1.3],
            ambient: [0.2, 0.99],
            diffuse: [0.2, 0.99],
            light_specular: [0.0, 0.1],
            material_specular: [0.0, 0.05],
            shininess: [30.0, 60.0],
        }
    }
}

impl SceneRanges {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("distance", self.distance),
            ("ambient", self.ambient),
            ("diffuse", self.diffuse),
            ("light_specular", self.light_specular),
            ("material_specular", self.material_specular),
            ("shininess", self.shininess),
        ];
        for (name, [lo, hi]) in named {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] invalid")));
            }
        }
        if !(self.distance[0] > 0.0) {
            return Err(Error::Config("distance range must be positive".into()));
        }
        for (name, [lo, hi]) in &named[1..5] {
            if *lo < 0.0 || *hi > 1.0 {
                return Err(Error::Config(format!("{name} range must lie in [0, 1]")));
            }
        }
        if self.shininess[0] < 0.0 {
            return Err(Error::Config("shininess must be non-negative".into()));
        }
        Ok(())
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Everything that varies between rendered views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub seed: u64,
    pub face_index: usize,
    pub surface_point: [f64; 3],
    pub normal: [f64; 3],
    pub distance: f64,
    pub camera: Camera,
    pub lights: Lights,
    pub material: Material,
    /// Index into the background pool; `None` renders on black.
    pub background: Option<usize>,
}

/// Draws a surface point, a camera distance along its normal, a point light
/// at the camera, material parameters and a background.
pub fn sample_scene<R: Rng + ?Sized>(
    ranges: &SceneRanges,
    sampler: &SurfaceSampler,
    backgrounds: usize,
    view_size: usize,
    fov_deg: f64,
    seed: u64,
    rng: &mut R,
) -> Result<SceneSample> {
    let s = sampler.sample(rng);
    let d = draw(rng, ranges.distance);
    let position = camera_from_surface(&s.world_point, &s.normal, d)?;
    let camera = Camera::new(position, s.world_point, view_size, view_size).with_fov(fov_deg);
    let ambient = draw(rng, ranges.ambient);
    let diffuse = draw(rng, ranges.diffuse);
    let specular = draw(rng, ranges.light_specular);
    let material = Material::new(
        draw(rng, ranges.material_specular),
        draw(rng, ranges.shininess),
    );
    let background = (backgrounds > 0).then(|| rng.random_range(0..backgrounds));
    Ok(SceneSample {
        seed,
        face_index: s.face_index,
        surface_point: s.world_point.coords.into(),
        normal: s.normal.into(),
        distance: d,
        camera,
        lights: Lights::single(PointLight::gray(position, ambient, diffuse, specular)),
        material,
        background,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewVerdict {
    Valid,
    CameraInside,
    LightOccluded,
}

/// Möller–Trumbore; returns the ray parameter of the hit.
pub fn ray_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    tri: &[Point3<f64>; 3],
) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

const PARITY_DIRECTIONS: [[f64; 3]; 3] = [
    [0.48, 0.62, 0.62],
    [-0.71, 0.29, -0.64],
    [0.17, -0.83, 0.53],
];

/// True if `point` is inside the closed mesh: majority vote of crossing
/// parity along three fixed rays.
pub fn point_inside(mesh: &Mesh, point: &Point3<f64>) -> bool {
    let votes = PARITY_DIRECTIONS
        .iter()
        .filter(|d| {
            let dir = Vector3::from(**d).normalize();
            let hits = (0..mesh.face_count())
                .filter(|&f| ray_triangle(point, &dir, &mesh.corners(f)).is_some_and(|t| t > 1e-9))
                .count();
            hits % 2 == 1
        })
        .count();
    votes >= 2
}

/// True if the open segment `a → b` crosses the mesh.
pub fn segment_blocked(mesh: &Mesh, a: &Point3<f64>, b: &Point3<f64>) -> bool {
    let dir = b - a;
    let len = dir.norm();
    if len < 1e-12 {
        return false;
    }
    let eps = 1e-9 / len;
    crate::par::any_index(mesh.face_count(), |f| {
        ray_triangle(a, &dir, &mesh.corners(f)).is_some_and(|t| t > eps && t < 1.0 - eps)
    })
}

/// Rejects cameras inside the (closed) mesh and lights that cannot reach the
/// camera.
pub fn validate_view(mesh: &Mesh, scene: &SceneSample) -> ViewVerdict {
    let eye = scene.camera.position;
    if point_inside(mesh, &eye) {
        return ViewVerdict::CameraInside;
    }
    if scene
        .lights
        .points
        .iter()
        .any(|l| segment_blocked(mesh, &l.position, &eye))
    {
        return ViewVerdict::LightOccluded;
    }
    ViewVerdict::Valid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procedural::uv_sphere;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_stay_in_range_and_repeat() {
        let mesh = uv_sphere(Point3::origin(), 1.0, 16, 8).unwrap();
        let sampler = SurfaceSampler::new(&mesh).unwrap();
        let r = SceneRanges::default();
        let a = sample_scene(
            &r,
            &sampler,
            3,
            32,
            30.0,
            1,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let b = sample_scene(
            &r,
            &sampler,
            3,
            32,
            30.0,
            1,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..500 {
            let s = sample_scene(&r, &sampler, 3, 32, 30.0, 1, &mut rng).unwrap();
            assert!((0.1..=1.3).contains(&s.distance));
            assert!(s.background.unwrap() < 3);
            let l = &s.lights.points[0];
            assert!((0.2..=0.99).contains(&l.ambient[0]) && (0.0..=0.1).contains(&l.specular[0]));
            assert!((30.0..=60.0).contains(&s.material.shininess));
        }
    }

    #[test]
    fn inside_and_outside_sphere() {
        let mesh = uv_sphere(Point3::origin(), 1.0, 24, 12).unwrap();
        assert!(point_inside(&mesh, &Point3::origin()));
        assert!(point_inside(&mesh, &Point3::new(0.3, -0.2, 0.1)));
        assert!(!point_inside(&mesh, &Point3::new(0.0, 0.0, 1.5)));
        assert!(!point_inside(&mesh, &Point3::new(3.0, 1.0, -2.0)));
    }

    #[test]
    fn occlusion_segments() {
        let mesh = uv_sphere(Point3::origin(), 1.0, 24, 12).unwrap();
        let a = Point3::new(0.0, 0.0, 2.0);
        assert!(!segment_blocked(&mesh, &a, &a));
        assert!(segment_blocked(&mesh, &a, &Point3::new(0.0, 0.0, -2.0)));
        assert!(!segment_blocked(&mesh, &a, &Point3::new(2.0, 0.0, 2.0)));
    }

    #[test]
    fn ranges_validation() {
        assert!(SceneRanges::default().validate().is_ok());
        let bad = SceneRanges {
            ambient: [0.5, 0.2],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
