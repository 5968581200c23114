//! On-disk scenes: a JSON manifest referencing PNG views and a point-cloud
//! PLY by paths relative to the manifest.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::ply::{load_points, save_points, PointCloud};
use super::png::{load_normal, load_rgb, save_normal, save_rgb};
use super::atomic_write;
use crate::camera::{Camera, CameraRig};
use crate::error::{Error, Result};
use crate::scene::Scene;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "scene.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub version: u32,
    pub id: String,
    pub background: [f64; 3],
    pub points: String,
    pub views: Vec<ViewEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub camera: Camera,
    pub rgb: String,
    pub normal: String,
}

impl SceneManifest {
    /// Schema checks that need no image decoding: version, view count,
    /// camera validity, and existence of every referenced file.
    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::format(
                "manifest",
                format!("unsupported version {} (expected {MANIFEST_VERSION})", self.version),
            ));
        }
        if self.views.len() < 2 {
            return Err(Error::TooFewViews { views: self.views.len() });
        }
        if self.background.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("background"));
        }
        for v in &self.views {
            v.camera.validate()?;
        }
        let files = std::iter::once(&self.points).chain(self.views.iter().flat_map(|v| [&v.rgb, &v.normal]));
        for f in files {
            let p = base.join(f);
            if !p.is_file() {
                return Err(Error::MissingFile(p));
            }
        }
        Ok(())
    }
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_manifest(path: &Path) -> Result<SceneManifest> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let manifest: SceneManifest = serde_json::from_slice(&std::fs::read(path)?)?;
    manifest.validate(&base_dir(path))?;
    Ok(manifest)
}

/// Writes `scene` into `dir` and returns the manifest path.
pub fn save_scene(dir: &Path, scene: &Scene) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let cloud = PointCloud {
        points: scene.points.clone(),
        normals: scene.normals.clone(),
        colors: scene.colors.clone(),
    };
    save_points(&dir.join("points.ply"), &cloud)?;
    let mut views = Vec::with_capacity(scene.views());
    for (i, cam) in scene.rig.cameras.iter().enumerate() {
        let rgb = format!("rgb_{i:03}.png");
        let normal = format!("normal_{i:03}.png");
        save_rgb(&dir.join(&rgb), &scene.gt_rgb[i])?;
        save_normal(&dir.join(&normal), &scene.gt_normal[i])?;
        views.push(ViewEntry {
            camera: cam.clone(),
            rgb,
            normal,
        });
    }
    let manifest = SceneManifest {
        version: MANIFEST_VERSION,
        id: scene.id.clone(),
        background: [scene.background.x, scene.background.y, scene.background.z],
        points: "points.ply".to_string(),
        views,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    atomic_write(&path, &json)?;
    Ok(path)
}

/// Loads a scene from its manifest, validating the schema before decoding
/// any image. Normal maps are snapped back to exact zeros off the surface.
pub fn load_scene(manifest_path: &Path) -> Result<Scene> {
    let manifest = read_manifest(manifest_path)?;
    let base = base_dir(manifest_path);
    let cloud = load_points(&base.join(&manifest.points))?;
    let mut gt_rgb = Vec::with_capacity(manifest.views.len());
    let mut gt_normal = Vec::with_capacity(manifest.views.len());
    for v in &manifest.views {
        gt_rgb.push(load_rgb(&base.join(&v.rgb))?);
        let mut n = load_normal(&base.join(&v.normal))?;
        for px in n.data.chunks_mut(3) {
            if px.iter().map(|c| c * c).sum::<f64>() < 0.25 {
                px.fill(0.0);
            }
        }
        gt_normal.push(n);
    }
    let scene = Scene {
        id: manifest.id,
        points: cloud.points,
        colors: cloud.colors,
        normals: cloud.normals,
        rig: CameraRig {
            cameras: manifest.views.into_iter().map(|v| v.camera).collect(),
        },
        gt_rgb,
        gt_normal,
        background: Vector3::from(manifest.background),
    };
    scene.validate()?;
    Ok(scene)
}
