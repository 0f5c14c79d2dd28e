use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

pub type Uv = [f64; 2];

/// Tolerance for UV coordinates that drift just outside the unit square in
/// exported files; such values are clamped instead of rejected.
const UV_SLACK: f64 = 1e-6;

/// Triangle mesh with per-corner UV coordinates.
///
/// Immutable once constructed: vertex normals are computed up front so the
/// mesh can be shared freely between render workers.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    uvs: Vec<[Uv; 3]>,
    anatomy: Option<Vec<u8>>,
    vertex_normals: Vec<Vector3<f64>>,
}

impl Mesh {
    /// Builds a mesh, validating indices and UV range. Degenerate faces are
    /// kept; see [`Mesh::without_degenerate_faces`].
    pub fn new(
        vertices: Vec<Point3<f64>>,
        faces: Vec<[usize; 3]>,
        uvs: Vec<[Uv; 3]>,
    ) -> Result<Self> {
        if faces.len() != uvs.len() {
            return Err(Error::Invalid(format!(
                "{} faces but {} UV triplets",
                faces.len(),
                uvs.len()
            )));
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::Invalid(format!(
                    "face {fi} references vertex out of range"
                )));
            }
        }
        let mut uvs = uvs;
        for (fi, tri) in uvs.iter_mut().enumerate() {
            for uv in tri.iter_mut() {
                for c in uv.iter_mut() {
                    if !c.is_finite() || *c < -UV_SLACK || *c > 1.0 + UV_SLACK {
                        return Err(Error::Invalid(format!(
                            "face {fi} has UV {c} outside [0,1]"
                        )));
                    }
                    *c = c.clamp(0.0, 1.0);
                }
            }
        }
        let mut mesh = Self {
            vertices,
            faces,
            uvs,
            anatomy: None,
            vertex_normals: Vec::new(),
        };
        mesh.vertex_normals = mesh.compute_vertex_normals();
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            uvs: Vec::new(),
            anatomy: None,
            vertex_normals: Vec::new(),
        }
    }

    /// Attaches per-vertex anatomy labels (part ids `0..16`).
    pub fn with_anatomy(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.vertices.len() {
            return Err(Error::Invalid(format!(
                "{} anatomy labels for {} vertices",
                labels.len(),
                self.vertices.len()
            )));
        }
        if let Some(bad) = labels
            .iter()
            .find(|&&l| usize::from(l) >= super::anatomy::PART_COUNT)
        {
            return Err(Error::Invalid(format!("anatomy label {bad} out of range")));
        }
        self.anatomy = Some(labels);
        Ok(self)
    }

    /// Drops faces with zero area, returning the cleaned mesh and the number
    /// of faces removed.
    pub fn without_degenerate_faces(self) -> (Self, usize) {
        let keep: Vec<bool> = (0..self.faces.len())
            .map(|f| !self.is_degenerate(f))
            .collect();
        let dropped = keep.iter().filter(|k| !**k).count();
        if dropped == 0 {
            return (self, 0);
        }
        let faces = self
            .faces
            .iter()
            .zip(&keep)
            .filter_map(|(f, k)| k.then_some(*f))
            .collect();
        let uvs = self
            .uvs
            .iter()
            .zip(&keep)
            .filter_map(|(f, k)| k.then_some(*f))
            .collect();
        let mut mesh = Self {
            vertices: self.vertices,
            faces,
            uvs,
            anatomy: self.anatomy,
            vertex_normals: Vec::new(),
        };
        mesh.vertex_normals = mesh.compute_vertex_normals();
        (mesh, dropped)
    }

    fn is_degenerate(&self, face: usize) -> bool {
        let [a, b, c] = self.corners(face);
        let cross = (b - a).cross(&(c - a));
        let longest = (b - a)
            .norm_squared()
            .max((c - b).norm_squared())
            .max((a - c).norm_squared());
        // relative test keeps legitimately tiny faces on finely scanned meshes
        cross.norm() <= f64::EPSILON * longest
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn uvs(&self) -> &[[Uv; 3]] {
        &self.uvs
    }

    pub fn anatomy(&self) -> Option<&[u8]> {
        self.anatomy.as_deref()
    }

    pub fn vertex_normals(&self) -> &[Vector3<f64>] {
        &self.vertex_normals
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    #[inline]
    pub fn corners(&self, face: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.corners(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Geometric face normal, counter-clockwise winding.
    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        let [a, b, c] = self.corners(face);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vector3::z()
        }
    }

    /// Area-weighted average of incident face normals.
    fn compute_vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let [a, b, c] = self.corners(fi);
            // the unnormalized cross product is already 2 × area × normal
            let weighted = (b - a).cross(&(c - a));
            for &v in f {
                acc[v] += weighted;
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vector3::z()
                }
            })
            .collect()
    }

    /// Wavefront OBJ text with one `vt` per face corner.
    pub fn to_obj(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in self.uvs.iter().flatten() {
            let _ = writeln!(out, "vt {} {}", t[0], t[1]);
        }
        for (i, f) in self.faces.iter().enumerate() {
            let _ = writeln!(
                out,
                "f {}/{} {}/{} {}/{}",
                f[0] + 1,
                3 * i + 1,
                f[1] + 1,
                3 * i + 2,
                f[2] + 1,
                3 * i + 3
            );
        }
        out
    }

    pub fn centroid(&self) -> Point3<f64> {
        if self.vertices.is_empty() {
            return Point3::origin();
        }
        let sum = self
            .vertices
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / self.vertices.len() as f64)
    }
}

/// Result of reading an OBJ file.
#[derive(Debug, Clone)]
pub struct MeshLoad {
    pub mesh: Mesh,
    /// Zero-area faces removed during cleaning.
    pub dropped_faces: usize,
    /// `map_Kd` texture referenced by the OBJ's material library, if any.
    pub texture: Option<PathBuf>,
}

/// Loads a Wavefront OBJ with texture coordinates. Polygons are fan
/// triangulated; zero-area faces are dropped and counted.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<MeshLoad> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_obj(&text)?;
    let texture = match &parsed.mtllib {
        Some(lib) => {
            let base = path.parent().unwrap_or(Path::new("."));
            let mtl_path = base.join(lib);
            match fs::read_to_string(&mtl_path) {
                Ok(mtl) => texture_from_mtl(&mtl).map(|t| base.join(t)),
                Err(e) => {
                    log::warn!(
                        "could not read material library {}: {e}",
                        mtl_path.display()
                    );
                    None
                }
            }
        }
        None => None,
    };
    let (mesh, dropped_faces) = parsed.mesh.without_degenerate_faces();
    if dropped_faces > 0 {
        log::warn!(
            "{}: dropped {dropped_faces} degenerate faces",
            path.display()
        );
    }
    Ok(MeshLoad {
        mesh,
        dropped_faces,
        texture,
    })
}

pub struct ParsedObj {
    pub mesh: Mesh,
    pub mtllib: Option<String>,
}

/// Parses OBJ text. Degenerate faces are not removed here.
pub fn parse_obj(text: &str) -> Result<ParsedObj> {
    let mut positions = Vec::new();
    let mut texcoords: Vec<Uv> = Vec::new();
    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    let mut mtllib = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        match tag {
            "v" => {
                let xyz = parse_floats(tokens, 3, line)?;
                positions.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
            "vt" => {
                let uv = parse_floats(tokens, 2, line)?;
                texcoords.push([uv[0], uv[1]]);
            }
            "f" => {
                let corners = tokens
                    .map(|tok| parse_corner(tok, positions.len(), texcoords.len(), line))
                    .collect::<Result<Vec<_>>>()?;
                if corners.len() < 3 {
                    return Err(Error::Obj {
                        line,
                        message: "face with fewer than 3 corners".into(),
                    });
                }
                for i in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[i], corners[i + 1]];
                    faces.push([tri[0].0, tri[1].0, tri[2].0]);
                    uvs.push([
                        texcoords[tri[0].1],
                        texcoords[tri[1].1],
                        texcoords[tri[2].1],
                    ]);
                }
            }
            "mtllib" => {
                mtllib = tokens.next().map(str::to_owned);
            }
            _ => {}
        }
    }
    if !faces.is_empty() && texcoords.is_empty() {
        return Err(Error::Obj {
            line: 0,
            message: "OBJ has no texture coordinates".into(),
        });
    }
    Ok(ParsedObj {
        mesh: Mesh::new(positions, faces, uvs)?,
        mtllib,
    })
}

fn parse_floats<'a>(
    tokens: impl Iterator<Item = &'a str>,
    n: usize,
    line: usize,
) -> Result<Vec<f64>> {
    let values = tokens
        .take(n)
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Obj {
                line,
                message: format!("bad number {t:?}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() < n {
        return Err(Error::Obj {
            line,
            message: format!("expected {n} values"),
        });
    }
    Ok(values)
}

/// Resolves one `v/vt[/vn]` corner into zero-based (vertex, texcoord).
fn parse_corner(tok: &str, nv: usize, nvt: usize, line: usize) -> Result<(usize, usize)> {
    let mut parts = tok.split('/');
    let v = parts.next().unwrap_or("");
    let vt = parts.next().unwrap_or("");
    if vt.is_empty() {
        return Err(Error::Obj {
            line,
            message: format!("face corner {tok:?} has no texture coordinate"),
        });
    }
    Ok((resolve_index(v, nv, line)?, resolve_index(vt, nvt, line)?))
}

fn resolve_index(tok: &str, count: usize, line: usize) -> Result<usize> {
    let raw: i64 = tok.parse().map_err(|_| Error::Obj {
        line,
        message: format!("bad index {tok:?}"),
    })?;
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        -1
    };
    if idx < 0 || idx as usize >= count {
        return Err(Error::Obj {
            line,
            message: format!("index {raw} out of range"),
        });
    }
    Ok(idx as usize)
}

fn texture_from_mtl(mtl: &str) -> Option<String> {
    mtl.lines().find_map(|l| {
        let l = l.trim();
        l.strip_prefix("map_Kd")
            .map(|rest| rest.split_whitespace().last().unwrap_or("").to_owned())
            .filter(|s| !s.is_empty())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n";

    #[test]
    fn obj_roundtrip() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0.5\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1/1 2/2 3/3 4/4\n")
            .unwrap()
            .mesh;
        let back = parse_obj(&m.to_obj()).unwrap().mesh;
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.faces(), m.faces());
        assert_eq!(back.uvs(), m.uvs());
    }

    #[test]
    fn single_triangle() {
        let obj = parse_obj(TRIANGLE).unwrap();
        assert_eq!(obj.mesh.face_count(), 1);
        assert_eq!(obj.mesh.uvs()[0][1], [1.0, 0.0]);
        assert!((obj.mesh.face_area(0) - 0.5).abs() < 1e-15);
        assert_eq!(obj.mesh.face_normal(0), Vector3::z());
    }

    #[test]
    fn zero_area_face_dropped() {
        let text = format!("{TRIANGLE}v 2 0 0\nf 1/1 2/2 4/3\n");
        let (mesh, dropped) = parse_obj(&text).unwrap().mesh.without_degenerate_faces();
        assert_eq!(dropped, 1);
        assert_eq!(mesh.face_count(), 1);
    }

    #[test]
    fn unit_cube_with_shared_positions() {
        // 8 positions, 4 texcoords, 6 quads -> 12 triangles
        let mut s = String::new();
        for z in [0, 1] {
            for y in [0, 1] {
                for x in [0, 1] {
                    s.push_str(&format!("v {x} {y} {z}\n"));
                }
            }
        }
        s.push_str("vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n");
        for quad in [
            [1, 3, 4, 2],
            [5, 6, 8, 7],
            [1, 2, 6, 5],
            [3, 7, 8, 4],
            [1, 5, 7, 3],
            [2, 4, 8, 6],
        ] {
            s.push_str(&format!(
                "f {}/1 {}/2 {}/3 {}/4\n",
                quad[0], quad[1], quad[2], quad[3]
            ));
        }
        let mesh = parse_obj(&s).unwrap().mesh;
        assert_eq!(mesh.face_count(), 12);
        assert_eq!(mesh.vertex_count(), 8);
        let total: f64 = (0..12).map(|f| mesh.face_area(f)).sum();
        assert!((total - 6.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_missing_uvs() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        assert!(matches!(parse_obj(text), Err(Error::Obj { .. })));
    }

    #[test]
    fn negative_indices_resolve() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf -3/-3 -2/-2 -1/-1\n";
        let mesh = parse_obj(text).unwrap().mesh;
        assert_eq!(mesh.faces()[0], [0, 1, 2]);
    }

    #[test]
    fn rejects_uv_outside_unit_square() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1.5 0\nvt 0 1\nf 1/1 2/2 3/3\n";
        assert!(parse_obj(text).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_mesh("/nonexistent/mesh.obj"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn mtl_texture_name() {
        assert_eq!(
            texture_from_mtl("newmtl skin\nKd 1 1 1\nmap_Kd tex/body.png\n").as_deref(),
            Some("tex/body.png")
        );
    }
}
