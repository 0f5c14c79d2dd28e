//! Versioned YAML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blending::BlendConfig;
use crate::error::{Error, Result};
use crate::placement::PlacementParams;
use crate::renderer::{DEFAULT_FOV_DEG, DEFAULT_VIEW_SIZE};
use crate::synthesis::{SceneRanges, DEFAULT_SOG_POWER, DEFAULT_VIEW_RETRIES};

pub const CONFIG_VERSION: u32 = 1;

/// Source of per-vertex anatomy labels when the mesh has none of its own:
/// labels transferred from a reference mesh in the same pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnatomyReference {
    pub obj: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Output subdirectory name; letters, digits, `-`, `_` and `.` only.
    pub id: String,
    pub obj: PathBuf,
    /// Texture image; defaults to the `map_Kd` of the OBJ's material.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<PathBuf>,
    /// Binary texture mask of clothing, hair and other non-skin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonskin: Option<PathBuf>,
    /// JSON array with one part id per vertex.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anatomy_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anatomy_reference: Option<AnatomyReference>,
    /// JSON list of `[x0, y0, x1, y1]` texel boxes around lesions already
    /// present in the texture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub existing_lesions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub view_size: usize,
    pub fov_deg: f64,
    /// Scene draws per view before the view is skipped.
    pub retries: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            view_size: DEFAULT_VIEW_SIZE,
            fov_deg: DEFAULT_FOV_DEG,
            retries: DEFAULT_VIEW_RETRIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub meshes: Vec<MeshConfig>,
    /// JSON manifest of lesion image/mask pairs.
    pub lesions: PathBuf,
    /// Directory of background images; black backgrounds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backgrounds: Option<PathBuf>,
    /// Part table JSON; the built-in 16-part table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_table: Option<PathBuf>,
    /// Lesions pasted per mesh.
    #[serde(default = "default_lesions_per_mesh")]
    pub lesions_per_mesh: usize,
    /// Views rendered per mesh.
    #[serde(default = "default_views_per_mesh")]
    pub views_per_mesh: usize,
    /// Shades-of-Gray power applied to lesion images; `null` disables it.
    #[serde(default = "default_sog")]
    pub color_constancy_power: Option<f64>,
    #[serde(default)]
    pub placement: PlacementParams,
    #[serde(default)]
    pub blend: BlendConfig,
    #[serde(default)]
    pub scene: SceneRanges,
    #[serde(default)]
    pub render: RenderSettings,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_lesions_per_mesh() -> usize {
    3
}

fn default_views_per_mesh() -> usize {
    10
}

fn default_sog() -> Option<f64> {
    Some(DEFAULT_SOG_POWER)
}

impl RunConfig {
    pub fn from_yaml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_yaml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn to_yaml(&self) -> Result<String> {
        serde_yaml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_yaml(&text)?.resolved(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Joins every relative path onto `base`.
    pub fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        fix(&mut self.lesions);
        self.backgrounds.as_mut().map(fix);
        self.label_table.as_mut().map(fix);
        for m in &mut self.meshes {
            fix(&mut m.obj);
            m.texture.as_mut().map(fix);
            m.nonskin.as_mut().map(fix);
            m.anatomy_labels.as_mut().map(fix);
            m.existing_lesions.as_mut().map(fix);
            if let Some(r) = m.anatomy_reference.as_mut() {
                fix(&mut r.obj);
                fix(&mut r.labels);
            }
        }
        self
    }

    /// Checks parameter ranges, mesh ids and that every input path exists.
    pub fn validate(&self) -> Result<()> {
        self.placement.validate()?;
        self.blend.validate()?;
        self.scene.validate()?;
        if self.render.view_size == 0 || !(self.render.fov_deg > 0.0 && self.render.fov_deg < 180.0)
        {
            return Err(Error::Config("render view_size/fov_deg invalid".into()));
        }
        if self.lesions_per_mesh > 255 {
            return Err(Error::Config("at most 255 lesions per mesh".into()));
        }
        if let Some(p) = self.color_constancy_power {
            if !(p >= 1.0) {
                return Err(Error::Config(format!(
                    "color_constancy_power {p} must be >= 1"
                )));
            }
        }
        let exists = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} not found: {}", p.display())))
            }
        };
        exists(&self.lesions, "lesion manifest")?;
        if let Some(p) = &self.backgrounds {
            exists(p, "background directory")?;
        }
        if let Some(p) = &self.label_table {
            exists(p, "label table")?;
        }
        let mut ids = std::collections::HashSet::new();
        for m in &self.meshes {
            let safe = !m.id.is_empty()
                && m.id != "."
                && m.id != ".."
                && m.id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
            if !safe {
                return Err(Error::Config(format!(
                    "mesh id {:?} is not a valid directory name",
                    m.id
                )));
            }
            if !ids.insert(m.id.as_str()) {
                return Err(Error::Config(format!("duplicate mesh id {:?}", m.id)));
            }
            exists(&m.obj, "mesh")?;
            for (p, what) in [
                (&m.texture, "texture"),
                (&m.nonskin, "non-skin mask"),
                (&m.anatomy_labels, "anatomy labels"),
                (&m.existing_lesions, "existing lesion boxes"),
            ] {
                if let Some(p) = p {
                    exists(p, what)?;
                }
            }
            if let Some(r) = &m.anatomy_reference {
                exists(&r.obj, "anatomy reference mesh")?;
                exists(&r.labels, "anatomy reference labels")?;
            }
        }
        Ok(())
    }
}
