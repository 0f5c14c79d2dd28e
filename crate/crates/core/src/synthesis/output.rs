use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotate::{AnnotationBundle, BoundingBox};
use super::scene::SceneSample;
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::io;

pub const IMAGES_DIR: &str = "images";
pub const LESION_DIR: &str = "masks_lesion";
pub const SKIN_DIR: &str = "masks_skin";
pub const NONSKIN_DIR: &str = "masks_nonskin";
pub const ANATOMY_DIR: &str = "anatomy";
pub const DEPTH_DIR: &str = "depth";
pub const IGNORE_DIR: &str = "masks_ignore";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Anatomy palette: background, head, torso, hips, legs, feet, arms, hands.
pub const ANATOMY_PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
];

pub const BINARY_PALETTE: [[u8; 3]; 2] = [[0, 0, 0], [255, 255, 255]];

/// Lesion palette: black background, then a fixed color cycle by id.
pub fn lesion_palette() -> Vec<[u8; 3]> {
    const CYCLE: [[u8; 3]; 6] = [
        [255, 0, 0],
        [0, 255, 0],
        [0, 0, 255],
        [255, 255, 0],
        [255, 0, 255],
        [0, 255, 255],
    ];
    std::iter::once([0, 0, 0])
        .chain((0..255).map(|i| CYCLE[i % CYCLE.len()]))
        .collect()
}

pub fn view_name(index: u64) -> String {
    format!("view_{index:06}.png")
}

/// One line of `manifest.jsonl`. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub view: u64,
    pub mesh_id: String,
    pub image: String,
    pub lesion_mask: String,
    pub skin_mask: String,
    pub nonskin_mask: String,
    pub anatomy: String,
    pub depth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ignore_mask: Option<String>,
    pub lesion_ids: Vec<u8>,
    pub boxes: Vec<BoundingBox>,
    pub scene: SceneSample,
}

fn mask_to_labels(m: &Mask) -> crate::grid::LabelImage {
    m.map(|&b| u8::from(b))
}

/// Writes the image layers of one bundle and returns its manifest record.
pub fn write_bundle(
    root: &Path,
    mesh_id: &str,
    index: u64,
    bundle: &AnnotationBundle,
) -> Result<ManifestRecord> {
    let name = view_name(index);
    let rel = |dir: &str| format!("{dir}/{name}");
    io::save_rgb(root.join(rel(IMAGES_DIR)), &bundle.rgb)?;
    io::save_indexed(
        root.join(rel(LESION_DIR)),
        &bundle.lesion_mask,
        &lesion_palette(),
    )?;
    io::save_indexed(
        root.join(rel(SKIN_DIR)),
        &mask_to_labels(&bundle.skin_mask),
        &BINARY_PALETTE,
    )?;
    io::save_indexed(
        root.join(rel(NONSKIN_DIR)),
        &mask_to_labels(&bundle.nonskin_mask),
        &BINARY_PALETTE,
    )?;
    io::save_indexed(
        root.join(rel(ANATOMY_DIR)),
        &bundle.anatomy,
        &ANATOMY_PALETTE,
    )?;
    io::save_depth(root.join(rel(DEPTH_DIR)), &bundle.depth)?;
    let ignore_mask = match &bundle.ignore_mask {
        Some(m) => {
            io::save_indexed(
                root.join(rel(IGNORE_DIR)),
                &mask_to_labels(m),
                &BINARY_PALETTE,
            )?;
            Some(rel(IGNORE_DIR))
        }
        None => None,
    };
    Ok(ManifestRecord {
        view: index,
        mesh_id: mesh_id.to_string(),
        image: rel(IMAGES_DIR),
        lesion_mask: rel(LESION_DIR),
        skin_mask: rel(SKIN_DIR),
        nonskin_mask: rel(NONSKIN_DIR),
        anatomy: rel(ANATOMY_DIR),
        depth: rel(DEPTH_DIR),
        ignore_mask,
        lesion_ids: bundle.lesion_ids(),
        boxes: bundle.boxes.clone(),
        scene: bundle.scene.clone(),
    })
}

/// Appends JSON lines to the manifest.
pub struct ManifestWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl ManifestWriter {
    /// Creates (or truncates) `root/manifest.jsonl`.
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(MANIFEST_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    pub fn append(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    pub fn write(&mut self, record: &ManifestRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRecord>> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
        })
        .collect()
}
