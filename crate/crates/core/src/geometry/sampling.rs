use nalgebra::{Point3, Vector3};
use rand::Rng;

use super::Mesh;
use crate::error::{Error, Result};

/// A point on the mesh surface together with its face normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceSample {
    pub face_index: usize,
    pub barycentric: [f64; 3],
    pub world_point: Point3<f64>,
    pub normal: Vector3<f64>,
}

/// Area-weighted surface sampler. Builds the cumulative area table once so
/// repeated draws are `O(log F)`.
#[derive(Debug, Clone)]
pub struct SurfaceSampler<'m> {
    mesh: &'m Mesh,
    cumulative: Vec<f64>,
}

impl<'m> SurfaceSampler<'m> {
    pub fn new(mesh: &'m Mesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::Invalid("cannot sample an empty mesh".into()));
        }
        let mut total = 0.0;
        let cumulative = (0..mesh.face_count())
            .map(|f| {
                total += mesh.face_area(f);
                total
            })
            .collect::<Vec<_>>();
        if !(total > 0.0) {
            return Err(Error::Invalid("mesh has zero surface area".into()));
        }
        Ok(Self { mesh, cumulative })
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FaceSample {
        let total = *self.cumulative.last().expect("non-empty");
        let target = rng.random::<f64>() * total;
        let face = self
            .cumulative
            .partition_point(|&c| c <= target)
            .min(self.cumulative.len() - 1);

        // uniform on the triangle: fold the unit square along its diagonal
        let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
        if r1 + r2 > 1.0 {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        let barycentric = [1.0 - r1 - r2, r1, r2];
        let [a, b, c] = self.mesh.corners(face);
        let world_point = Point3::from(
            a.coords * barycentric[0] + b.coords * barycentric[1] + c.coords * barycentric[2],
        );
        FaceSample {
            face_index: face,
            barycentric,
            world_point,
            normal: self.mesh.face_normal(face),
        }
    }
}

/// Draws one area-weighted surface point. Prefer [`SurfaceSampler`] for
/// repeated draws on the same mesh.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &Mesh, rng: &mut R) -> Result<FaceSample> {
    Ok(SurfaceSampler::new(mesh)?.sample(rng))
}
