//! The `paste`, `blend` and `render` stages driven by a [`RunConfig`].
//!
//! Stages talk to each other only through files under the output
//! directory, so running them one by one gives the same bytes as
//! [`run_pipeline`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blending::{blend_lesions_with, FilterPyramid, LossRecord};
use crate::config::{MeshConfig, RunConfig};
use crate::error::{Error, Result};
use crate::geometry::{load_mesh, transfer_anatomy, AnatomyLabelMap, LabelTable, Mesh};
use crate::grid::{Grid, LabelImage, RgbImage};
use crate::io;
use crate::placement::{
    find_placement, load_lesion, load_manifest, paste_candidate, LesionEntry, Orientation,
    PlacementRecord, TextureSet,
};
use crate::seed::derive_rng;
use crate::synthesis::{
    generate_views, lesion_palette, shades_of_gray, texture_box_mask, write_bundle, ManifestRecord,
    ManifestWriter, RenderScene,
};

/// Per-mesh texture artifacts live in `<output>/textures/<mesh id>/`.
pub const TEXTURES_DIR: &str = "textures";
pub const PASTED_FILE: &str = "texture_pasted.png";
pub const LESION_IDS_FILE: &str = "lesion_ids.png";
pub const DILATED_FILE: &str = "texture_dilated.png";
pub const FOOTPRINT_FILE: &str = "footprint.png";
pub const PLACEMENTS_FILE: &str = "placements.json";
pub const BLENDED_FILE: &str = "texture_blended.png";
pub const LOSS_FILE: &str = "loss.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Which stage a command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Paste,
    Blend,
    Render,
}

/// One pasted lesion in `placements.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastedLesion {
    /// Id in the lesion manifest.
    pub source_id: u8,
    /// Source image, relative to the lesion manifest.
    pub image: PathBuf,
    pub placement: PlacementRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementLog {
    pub mesh_id: String,
    pub lesions: Vec<PastedLesion>,
}

pub fn mesh_dir(cfg: &RunConfig, mesh: &MeshConfig) -> PathBuf {
    cfg.output.join(TEXTURES_DIR).join(&mesh.id)
}

fn require(path: PathBuf, stage: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Config(format!(
            "{} missing; run `{stage}` first",
            path.display()
        )))
    }
}

/// Runs `f` for every mesh index on up to `jobs` threads. Results come back
/// in mesh order; the first error (by mesh index) wins.
pub fn for_each_mesh<T, F>(count: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let jobs = jobs.clamp(1, count.max(1));
    if jobs == 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= count || stop.load(Ordering::SeqCst) {
                    break;
                }
                let out = f(i);
                if out.is_err() {
                    stop.store(true, Ordering::SeqCst);
                }
                slots.lock().expect("worker panicked")[i] = Some(out);
            });
        }
    });
    let slots = slots.into_inner().expect("worker panicked");
    let mut results = Vec::with_capacity(count);
    for slot in slots {
        match slot {
            Some(r) => results.push(r?),
            None => break,
        }
    }
    if results.len() < count {
        return Err(Error::Invalid(
            "mesh worker stopped without a result".into(),
        ));
    }
    Ok(results)
}

/// The mesh with its texture and non-skin layer.
pub struct MeshAssets {
    pub mesh: Mesh,
    pub texture: RgbImage,
    pub nonskin: LabelImage,
}

pub fn load_assets(m: &MeshConfig) -> Result<MeshAssets> {
    let loaded = load_mesh(&m.obj)?;
    let texture_path = m
        .texture
        .clone()
        .or(loaded.texture)
        .ok_or_else(|| Error::Config(format!("mesh {:?} has no texture", m.id)))?;
    let texture = io::load_rgb(&texture_path)?;
    let nonskin = match &m.nonskin {
        Some(p) => io::load_binary(p)?,
        None => Grid::new(texture.width(), texture.height()),
    };
    if nonskin.dims() != texture.dims() {
        return Err(Error::Config(format!(
            "non-skin mask of mesh {:?} is {:?}, texture is {:?}",
            m.id,
            nonskin.dims(),
            texture.dims()
        )));
    }
    Ok(MeshAssets {
        mesh: loaded.mesh,
        texture,
        nonskin,
    })
}

/// Attaches per-vertex part labels from the config: a label file, or
/// transfer from a labelled reference mesh.
pub fn attach_anatomy(mesh: Mesh, m: &MeshConfig) -> Result<Mesh> {
    let labels = if let Some(p) = &m.anatomy_labels {
        AnatomyLabelMap::load_parts(p)?
    } else if let Some(r) = &m.anatomy_reference {
        let reference = load_mesh(&r.obj)?.mesh;
        let reference = reference.with_anatomy(AnatomyLabelMap::load_parts(&r.labels)?.labels)?;
        transfer_anatomy(&reference, &mesh)?
    } else {
        return Err(Error::Config(format!(
            "mesh {:?} needs anatomy_labels or anatomy_reference",
            m.id
        )));
    };
    mesh.with_anatomy(labels.labels)
        .map_err(|e| Error::Config(format!("mesh {:?}: {e}", m.id)))
}

/// Picks `k` manifest indices: shuffled passes over the whole manifest, so
/// no source repeats before every source has been used.
pub fn select_lesions<R: Rng + ?Sized>(available: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    if available == 0 {
        return out;
    }
    let mut order: Vec<usize> = (0..available).collect();
    while out.len() < k {
        order.shuffle(rng);
        let take = (k - out.len()).min(available);
        out.extend_from_slice(&order[..take]);
    }
    out
}

/// Pastes `lesions_per_mesh` lesions into one mesh's texture.
pub fn paste_mesh(cfg: &RunConfig, index: usize, entries: &[LesionEntry]) -> Result<PlacementLog> {
    let m = &cfg.meshes[index];
    let assets = load_assets(m)?;
    let mut textures = TextureSet::new(assets.texture, assets.nonskin)?;
    let mut rng = derive_rng(cfg.seed, "paste", index as u64);
    let k = cfg.lesions_per_mesh;
    if k > 0 && entries.is_empty() {
        return Err(Error::Config("lesion manifest is empty".into()));
    }
    let lesion_root = cfg.lesions.parent().unwrap_or(Path::new(""));
    let mut lesions = Vec::with_capacity(k);
    for (i, source) in select_lesions(entries.len(), k, &mut rng)
        .into_iter()
        .enumerate()
    {
        let entry = &entries[source];
        let mut lesion = load_lesion(entry)?;
        if let Some(p) = cfg.color_constancy_power {
            lesion.image = shades_of_gray(&lesion.image, p)?;
        }
        let orientation = Orientation::random(&mut rng);
        let mut lesion = lesion.oriented(orientation).cropped();
        lesion.lesion_id = (i + 1) as u8;
        let candidate = find_placement(&assets.mesh, &textures, &lesion, &mut rng, &cfg.placement)?;
        paste_candidate(&mut textures, &candidate)?;
        log::info!(
            "{}: lesion {} (source {}) placed after {} tries, depth change {:.4}",
            m.id,
            lesion.lesion_id,
            entry.id,
            candidate.tries,
            candidate.depth_change
        );
        lesions.push(PastedLesion {
            source_id: entry.id,
            image: entry
                .image
                .strip_prefix(lesion_root)
                .unwrap_or(&entry.image)
                .to_path_buf(),
            placement: candidate.record(orientation),
        });
    }
    let dir = mesh_dir(cfg, m);
    io::save_rgb(dir.join(PASTED_FILE), &textures.pasted)?;
    io::save_indexed(
        dir.join(LESION_IDS_FILE),
        &textures.lesion_ids,
        &lesion_palette(),
    )?;
    io::save_rgb(dir.join(DILATED_FILE), &textures.dilated)?;
    io::save_indexed(
        dir.join(FOOTPRINT_FILE),
        &textures.footprint,
        &lesion_palette(),
    )?;
    let log = PlacementLog {
        mesh_id: m.id.clone(),
        lesions,
    };
    write_json(&dir.join(PLACEMENTS_FILE), &log)?;
    Ok(log)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_placements(path: &Path) -> Result<PlacementLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn cmd_paste(cfg: &RunConfig, jobs: usize) -> Result<Vec<PlacementLog>> {
    let entries = load_manifest(&cfg.lesions)?;
    for_each_mesh(cfg.meshes.len(), jobs, |i| paste_mesh(cfg, i, &entries))
}

/// Loads the paste artifacts of one mesh back into a [`TextureSet`].
pub fn load_paste_artifacts(
    cfg: &RunConfig,
    index: usize,
) -> Result<(MeshAssets, TextureSet, PlacementLog)> {
    let m = &cfg.meshes[index];
    let dir = mesh_dir(cfg, m);
    let log = read_placements(&require(dir.join(PLACEMENTS_FILE), "paste")?)?;
    let pasted = io::load_rgb(require(dir.join(PASTED_FILE), "paste")?)?;
    let lesion_ids = io::load_indexed(require(dir.join(LESION_IDS_FILE), "paste")?)?;
    let dilated = io::load_rgb(require(dir.join(DILATED_FILE), "paste")?)?;
    let footprint = io::load_indexed(require(dir.join(FOOTPRINT_FILE), "paste")?)?;
    let assets = load_assets(m)?;
    let textures = TextureSet::from_layers(
        assets.texture.clone(),
        assets.nonskin.clone(),
        pasted,
        lesion_ids,
        dilated,
        footprint,
    )
    .map_err(|e| {
        Error::Config(format!(
            "paste artifacts of mesh {:?} do not match its texture: {e}",
            m.id
        ))
    })?;
    Ok((assets, textures, log))
}

pub const LOSS_HEADER: &str = "placement,lesion_id,step,distance,total,content,style,gradient,tv";

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut out = String::from(LOSS_HEADER);
    out.push('\n');
    for r in records {
        let l = &r.loss;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.placement,
            r.lesion_id,
            r.step,
            r.distance,
            l.total,
            l.content,
            l.style,
            l.gradient,
            l.tv
        );
    }
    out
}

/// Optimizes T_b for one mesh and writes it with its loss curve.
pub fn blend_mesh(cfg: &RunConfig, index: usize) -> Result<Vec<LossRecord>> {
    let m = &cfg.meshes[index];
    let dir = mesh_dir(cfg, m);
    let (assets, mut textures, log) = load_paste_artifacts(cfg, index)?;
    let placements: Vec<PlacementRecord> =
        log.lesions.iter().map(|l| l.placement.clone()).collect();
    let mut rng = derive_rng(cfg.seed, "blend", index as u64);
    let every = cfg.blend.checkpoint_every;
    let checkpoints = dir.join(CHECKPOINT_DIR);
    let mut observer = |p: &crate::blending::BlendProgress| -> Result<()> {
        if every > 0 && p.step.is_multiple_of(every) {
            let name = format!("placement{:03}_step{:05}.png", p.placement, p.step);
            io::save_rgb(checkpoints.join(name), p.texture)?;
        }
        Ok(())
    };
    let records = blend_lesions_with(
        &assets.mesh,
        &mut textures,
        &placements,
        &cfg.blend,
        &FilterPyramid::default(),
        &mut rng,
        &mut observer,
    )?;
    io::save_rgb(dir.join(BLENDED_FILE), &textures.blended)?;
    let path = dir.join(LOSS_FILE);
    std::fs::write(&path, loss_csv(&records)).map_err(|e| Error::io(&path, e))?;
    log::info!("{}: blended {} lesions", m.id, placements.len());
    Ok(records)
}

pub fn cmd_blend(cfg: &RunConfig, jobs: usize) -> Result<Vec<Vec<LossRecord>>> {
    for_each_mesh(cfg.meshes.len(), jobs, |i| blend_mesh(cfg, i))
}

/// Background images in `dir`, sorted by file name and resized to the view.
pub fn load_backgrounds(dir: &Path, size: usize) -> Result<Vec<RgbImage>> {
    let read = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in read {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(io::fit_to(&io::load_rgb(p)?, size, size)))
        .collect()
}

fn load_label_table(cfg: &RunConfig) -> Result<LabelTable> {
    match &cfg.label_table {
        Some(p) => LabelTable::load(p),
        None => Ok(LabelTable::default()),
    }
}

/// Renders `views_per_mesh` views of one mesh; view numbers continue across
/// meshes so that file names stay unique.
pub fn render_mesh(
    cfg: &RunConfig,
    index: usize,
    table: &LabelTable,
    backgrounds: &[RgbImage],
) -> Result<Vec<ManifestRecord>> {
    let m = &cfg.meshes[index];
    let dir = mesh_dir(cfg, m);
    let blended = io::load_rgb(require(dir.join(BLENDED_FILE), "blend")?)?;
    let lesion_ids = io::load_indexed(require(dir.join(LESION_IDS_FILE), "paste")?)?;
    let assets = load_assets(m)?;
    let mesh = attach_anatomy(assets.mesh, m)?;
    let mut scene = RenderScene::new(
        &mesh,
        &blended,
        &lesion_ids,
        &assets.nonskin,
        table,
        backgrounds,
    )
    .map_err(|e| {
        Error::Config(format!(
            "artifacts of mesh {:?} do not match its texture: {e}",
            m.id
        ))
    })?;
    scene.ranges = cfg.scene.clone();
    scene.view_size = cfg.render.view_size;
    scene.fov_deg = cfg.render.fov_deg;
    scene.retries = cfg.render.retries;
    if let Some(p) = &m.existing_lesions {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let boxes: Vec<[usize; 4]> = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        scene.ignore_texture = Some(texture_box_mask(blended.dims(), &boxes));
    }
    let n = cfg.views_per_mesh;
    let mut records = Vec::with_capacity(n);
    let mut sink = |view: u64, bundle: Option<crate::synthesis::AnnotationBundle>| -> Result<()> {
        if let Some(b) = bundle {
            records.push(write_bundle(&cfg.output, &m.id, view, &b)?);
        }
        Ok(())
    };
    generate_views(&scene, n, cfg.seed, (index * n) as u64, &mut sink)?;
    log::info!("{}: rendered {}/{} views", m.id, records.len(), n);
    Ok(records)
}

pub fn cmd_render(cfg: &RunConfig, jobs: usize) -> Result<Vec<ManifestRecord>> {
    let table = load_label_table(cfg)?;
    let backgrounds = match &cfg.backgrounds {
        Some(dir) => load_backgrounds(dir, cfg.render.view_size)?,
        None => Vec::new(),
    };
    let per_mesh = for_each_mesh(cfg.meshes.len(), jobs, |i| {
        render_mesh(cfg, i, &table, &backgrounds)
    })?;
    let mut records: Vec<ManifestRecord> = per_mesh.into_iter().flatten().collect();
    records.sort_by_key(|r| r.view);
    let mut writer = ManifestWriter::create(&cfg.output)?;
    for r in &records {
        writer.write(r)?;
    }
    writer.finish()?;
    Ok(records)
}

/// `paste`, then `blend`, then `render`.
pub fn run_pipeline(cfg: &RunConfig, jobs: usize) -> Result<Vec<ManifestRecord>> {
    cmd_paste(cfg, jobs)?;
    cmd_blend(cfg, jobs)?;
    cmd_render(cfg, jobs)
}

pub fn run_stage(cfg: &RunConfig, stage: Stage, jobs: usize) -> Result<()> {
    match stage {
        Stage::Paste => cmd_paste(cfg, jobs).map(drop),
        Stage::Blend => cmd_blend(cfg, jobs).map(drop),
        Stage::Render => cmd_render(cfg, jobs).map(drop),
    }
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Placement { .. } => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn selection_cycles_through_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = select_lesions(3, 7, &mut rng);
        assert_eq!(s.len(), 7);
        let mut first: Vec<usize> = s[..3].to_vec();
        first.sort();
        assert_eq!(first, vec![0, 1, 2]);
        assert!(select_lesions(0, 4, &mut rng).is_empty());
        assert!(select_lesions(5, 0, &mut rng).is_empty());
    }

    #[test]
    fn mesh_workers_keep_order() {
        let out = for_each_mesh(9, 4, |i| Ok(i * i)).unwrap();
        assert_eq!(out, (0..9).map(|i| i * i).collect::<Vec<_>>());
        let err = for_each_mesh(5, 3, |i| {
            if i == 2 {
                Err(Error::Numerical("x".into()))
            } else {
                Ok(i)
            }
        });
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 4);
        assert_eq!(exit_code(&Error::Invalid("x".into())), 1);
    }

    #[test]
    fn csv_has_header() {
        assert_eq!(loss_csv(&[]), format!("{LOSS_HEADER}\n"));
    }
}
