//! File formats: PLY fields and point clouds, PNG images, JSON scene
//! manifests, and CSV reports. Every write is atomic.

pub mod manifest;
pub mod ply;
pub mod png;

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use manifest::{load_scene, read_manifest, save_scene, SceneManifest, ViewEntry, MANIFEST_FILE, MANIFEST_VERSION};
pub use ply::{load_field, load_points, save_field, save_points, PlyTable, PointCloud};
pub use png::{load_normal, load_rgb, save_normal, save_rgb};

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
