//! Anatomical part labels: the 16-part template scheme, its 7-group
//! reduction, and nearest-vertex transfer between aligned meshes.

use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::Mesh;
use crate::error::{Error, Result};

pub const PART_COUNT: usize = 16;
pub const GROUP_COUNT: usize = 7;

/// Part names indexed by part id.
pub const PART_NAMES: [&str; PART_COUNT] = [
    "head",
    "upper torso",
    "lower torso",
    "hips",
    "upper leg left",
    "upper leg right",
    "lower leg left",
    "lower leg right",
    "feet left",
    "feet right",
    "upper arm left",
    "upper arm right",
    "lower arm left",
    "lower arm right",
    "hand left",
    "hand right",
];

/// Group names; group id `g` is `GROUP_NAMES[g - 1]`, id 0 is background.
pub const GROUP_NAMES: [&str; GROUP_COUNT] =
    ["head", "torso", "hips", "legs", "feet", "arms", "hands"];

pub const BACKGROUND_GROUP: u8 = 0;

/// One row of a label table file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: u8,
    pub name: String,
    pub group: String,
}

/// Maps part ids to names and groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    entries: Vec<LabelEntry>,
    group_of: Vec<u8>,
}

impl Default for LabelTable {
    fn default() -> Self {
        let group = |part: &str| -> &'static str {
            match part {
                "head" => "head",
                "upper torso" | "lower torso" => "torso",
                "hips" => "hips",
                p if p.contains("leg") => "legs",
                p if p.starts_with("feet") => "feet",
                p if p.contains("arm") => "arms",
                _ => "hands",
            }
        };
        let entries = PART_NAMES
            .iter()
            .enumerate()
            .map(|(id, name)| LabelEntry {
                id: id as u8,
                name: (*name).to_owned(),
                group: group(name).to_owned(),
            })
            .collect();
        Self::from_entries(entries).expect("built-in table is valid")
    }
}

impl LabelTable {
    pub fn from_entries(mut entries: Vec<LabelEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.id);
        let ids: Vec<u8> = entries.iter().map(|e| e.id).collect();
        if ids != (0..PART_COUNT as u8).collect::<Vec<_>>() {
            return Err(Error::Invalid(format!(
                "label table must list ids 0..{PART_COUNT} exactly once, got {ids:?}"
            )));
        }
        let mut group_of = Vec::with_capacity(PART_COUNT);
        for e in &entries {
            let g = GROUP_NAMES
                .iter()
                .position(|n| *n == e.group)
                .ok_or_else(|| {
                    Error::Invalid(format!("unknown group {:?} for part {}", e.group, e.id))
                })?;
            group_of.push(g as u8 + 1);
        }
        let mut seen = [false; GROUP_COUNT];
        for g in &group_of {
            seen[usize::from(*g) - 1] = true;
        }
        if !seen.iter().all(|s| *s) {
            return Err(Error::Invalid(
                "label table does not cover all 7 groups".into(),
            ));
        }
        Ok(Self { entries, group_of })
    }

    /// Reads a JSON array of `{id, name, group}` records.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<LabelEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_entries(entries)
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    /// Group id (1..=7) of a part id.
    pub fn group_of(&self, part: u8) -> Result<u8> {
        self.group_of
            .get(usize::from(part))
            .copied()
            .ok_or_else(|| Error::Invalid(format!("unknown label id {part}")))
    }

    pub fn part_name(&self, part: u8) -> Option<&str> {
        self.entries.get(usize::from(part)).map(|e| e.name.as_str())
    }
}

pub fn group_name(group: u8) -> Option<&'static str> {
    match group {
        0 => Some("background"),
        g if usize::from(g) <= GROUP_COUNT => Some(GROUP_NAMES[usize::from(g) - 1]),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    /// Part ids `0..16`.
    Parts,
    /// Group ids `1..=7`.
    Groups,
}

/// Per-vertex anatomy labels under one scheme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnatomyLabelMap {
    pub scheme: LabelScheme,
    pub labels: Vec<u8>,
}

impl AnatomyLabelMap {
    pub fn parts(labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| usize::from(l) >= PART_COUNT) {
            return Err(Error::Invalid(format!("unknown label id {bad}")));
        }
        Ok(Self {
            scheme: LabelScheme::Parts,
            labels,
        })
    }

    /// Reads a JSON array of per-vertex part ids.
    pub fn load_parts(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let labels: Vec<u8> = serde_json::from_str(&text)
            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        Self::parts(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Gives every vertex of `target` the label of its nearest labelled vertex
/// (Euclidean; ties go to the lowest vertex index).
pub fn transfer_anatomy(labeled: &Mesh, target: &Mesh) -> Result<AnatomyLabelMap> {
    let labels = labeled
        .anatomy()
        .ok_or_else(|| Error::Invalid("source mesh has no anatomy labels".into()))?;
    if labeled.vertex_count() == 0 {
        return Err(Error::Invalid("source mesh has no vertices".into()));
    }
    let tree = KdTree::build(labeled.vertices());
    let out = crate::par::map_slice(target.vertices(), |p| labels[tree.nearest(p)]);
    AnatomyLabelMap::parts(out)
}

/// Applies the 16 → 7 grouping table.
pub fn group_labels(map: &AnatomyLabelMap, table: &LabelTable) -> Result<AnatomyLabelMap> {
    match map.scheme {
        LabelScheme::Groups => Ok(map.clone()),
        LabelScheme::Parts => Ok(AnatomyLabelMap {
            scheme: LabelScheme::Groups,
            labels: map
                .labels
                .iter()
                .map(|&l| table.group_of(l))
                .collect::<Result<_>>()?,
        }),
    }
}

/// Static 3D k-d tree over point indices.
pub(crate) struct KdTree<'a> {
    points: &'a [Point3<f64>],
    nodes: Vec<Node>,
    root: Option<usize>,
}

struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl<'a> KdTree<'a> {
    pub(crate) fn build(points: &'a [Point3<f64>]) -> Self {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut tree = Self {
            points,
            nodes: Vec::with_capacity(points.len()),
            root: None,
        };
        tree.root = tree.build_rec(&mut idx, 0);
        tree
    }

    fn build_rec(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let pts = self.points;
        idx.sort_unstable_by(|&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        let mid = idx.len() / 2;
        let node = self.nodes.len();
        self.nodes.push(Node {
            point: idx[mid],
            axis,
            left: None,
            right: None,
        });
        let (lo, hi) = idx.split_at_mut(mid);
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(&mut hi[1..], depth + 1);
        self.nodes[node].left = left;
        self.nodes[node].right = right;
        Some(node)
    }

    /// Index of the nearest point; panics on an empty tree.
    pub(crate) fn nearest(&self, q: &Point3<f64>) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(self.root, q, &mut best);
        best.1
    }

    fn search(&self, node: Option<usize>, q: &Point3<f64>, best: &mut (f64, usize)) {
        let Some(n) = node else { return };
        let node = &self.nodes[n];
        let p = &self.points[node.point];
        let d = (p - q).norm_squared();
        if d < best.0 || (d == best.0 && node.point < best.1) {
            *best = (d, node.point);
        }
        let diff = q[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, q, best);
        // `<=` keeps equal-distance candidates reachable for the index tie-break
        if diff * diff <= best.0 {
            self.search(far, q, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(points: &[Point3<f64>], q: &Point3<f64>) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn point_mesh(points: Vec<Point3<f64>>, labels: Vec<u8>) -> Mesh {
        Mesh::new(points, vec![], vec![])
            .unwrap()
            .with_anatomy(labels)
            .unwrap()
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3<f64>> = (0..500)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let tree = KdTree::build(&pts);
        for _ in 0..500 {
            let q = Point3::new(rng.random(), rng.random(), rng.random());
            assert_eq!(tree.nearest(&q), brute_nearest(&pts, &q));
        }
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let pts = vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.nearest(&Point3::origin()), 0);
    }

    #[test]
    fn identity_transfer_copies_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point3<f64>> = (0..64)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let labels: Vec<u8> = (0..64).map(|i| (i % 16) as u8).collect();
        let m = point_mesh(pts, labels.clone());
        let out = transfer_anatomy(&m, &m).unwrap();
        assert_eq!(out.labels, labels);
    }

    #[test]
    fn perturbed_target_keeps_labels() {
        // grid with spacing 1: any perturbation under 0.5 keeps the nearest vertex
        let mut pts = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                pts.push(Point3::new(x as f64, y as f64, 0.0));
            }
        }
        let labels: Vec<u8> = (0..16).collect();
        let src = point_mesh(pts.clone(), labels.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let moved: Vec<Point3<f64>> = pts
            .iter()
            .map(|p| {
                p + nalgebra::Vector3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    0.1,
                )
            })
            .collect();
        let dst = Mesh::new(moved, vec![], vec![]).unwrap();
        assert_eq!(transfer_anatomy(&src, &dst).unwrap().labels, labels);
    }

    #[test]
    fn two_clusters_midpoint_bias() {
        // cluster A around x=0 (label 3), cluster B around x=2 (label 9)
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, 0.1, 0.0),
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(2.0, 0.1, 0.0),
        ];
        let src = point_mesh(pts, vec![3, 3, 9, 9]);
        // midpoint x=1 plus delta toward B: distance to B 0.99, to A 1.01
        let dst = Mesh::new(vec![Point3::new(1.01, 0.0, 0.0)], vec![], vec![]).unwrap();
        assert_eq!(transfer_anatomy(&src, &dst).unwrap().labels, vec![9]);
    }

    #[test]
    fn unlabeled_source_rejected() {
        let m = Mesh::new(vec![Point3::origin()], vec![], vec![]).unwrap();
        assert!(transfer_anatomy(&m, &m).is_err());
    }

    #[test]
    fn grouping_table() {
        let t = LabelTable::default();
        let g = |name: &str| {
            let id = PART_NAMES.iter().position(|n| *n == name).unwrap() as u8;
            group_name(t.group_of(id).unwrap()).unwrap()
        };
        assert_eq!(g("upper arm left"), "arms");
        assert_eq!(g("head"), "head");
        assert_eq!(g("lower torso"), "torso");
        assert_eq!(g("lower leg right"), "legs");
        assert_eq!(g("feet left"), "feet");
        assert_eq!(g("hand right"), "hands");
        let all = AnatomyLabelMap::parts((0..16).collect()).unwrap();
        let mut grouped = group_labels(&all, &t).unwrap().labels;
        grouped.sort();
        grouped.dedup();
        assert_eq!(grouped, (1..=7).collect::<Vec<u8>>());
    }

    #[test]
    fn unknown_label_rejected() {
        assert!(AnatomyLabelMap::parts(vec![16]).is_err());
        assert!(LabelTable::default().group_of(20).is_err());
    }

    #[test]
    fn label_table_json_roundtrip() {
        let t = LabelTable::default();
        let json = serde_json::to_string(t.entries()).unwrap();
        let back: Vec<LabelEntry> = serde_json::from_str(&json).unwrap();
        assert_eq!(LabelTable::from_entries(back).unwrap(), t);
    }
}
