//! Synthetic scenes with analytic geometry: surface point clouds, camera
//! rigs, and ground-truth RGB and normal views.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::buffer::{Image, Rect};
use crate::camera::{Camera, CameraRig};
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian3D, GaussianField, ParamMode};
use crate::math::{self, SH_C0};
use crate::raster::{oracle_render, RenderMode};

pub const SPHERE_RADIUS: f64 = 0.9;
pub const BOX_HALF_EXTENTS: [f64; 3] = [0.9, 0.65, 0.5];
/// Distance of the rig cameras from the origin.
pub const RIG_RADIUS: f64 = 3.2;
/// Relative margin added around the projected object for evaluation crops.
pub const CROP_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Sphere,
    Box,
    TwoToneSphere,
    TexturedSphere,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Sphere, Preset::Box, Preset::TwoToneSphere, Preset::TexturedSphere];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Sphere => "sphere",
            Preset::Box => "box",
            Preset::TwoToneSphere => "two-tone-sphere",
            Preset::TexturedSphere => "textured-sphere",
        }
    }

    fn surface(self) -> Surface {
        match self {
            Preset::Box => Surface::Box(Vector3::from(BOX_HALF_EXTENTS)),
            _ => Surface::Sphere(SPHERE_RADIUS),
        }
    }

    fn color(self, p: &Vector3<f64>, n: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Preset::Sphere => Vector3::new(0.55 + 0.3 * n.x, 0.5 + 0.3 * n.y, 0.45 + 0.3 * n.z),
            Preset::Box => {
                let base = if n.x.abs() > 0.5 {
                    Vector3::new(0.85, 0.3, 0.25)
                } else if n.y.abs() > 0.5 {
                    Vector3::new(0.25, 0.7, 0.35)
                } else {
                    Vector3::new(0.3, 0.4, 0.85)
                };
                // opposite faces differ in brightness
                let side = if n.x + n.y + n.z > 0.0 { 1.0 } else { 0.7 };
                base * side + Vector3::repeat(0.05 * p.z)
            }
            Preset::TwoToneSphere => {
                if p.z >= 0.0 {
                    Vector3::new(0.9, 0.45, 0.2)
                } else {
                    Vector3::new(0.2, 0.45, 0.9)
                }
            }
            Preset::TexturedSphere => {
                let lon = n.y.atan2(n.x);
                let lat = n.z.clamp(-1.0, 1.0).asin();
                let u = (lon / std::f64::consts::TAU * 12.0).floor() as i64;
                let v = (lat / std::f64::consts::PI * 6.0).floor() as i64;
                let stripe = 0.5 + 0.5 * (lat * 9.0).sin();
                if (u + v).rem_euclid(2) == 0 {
                    Vector3::new(0.85, 0.75 * stripe + 0.15, 0.25)
                } else {
                    Vector3::new(0.2, 0.3, 0.6 + 0.3 * stripe)
                }
            }
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "scene preset",
                value: s.to_string(),
            })
    }
}

/// Closed surfaces centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Sphere(f64),
    /// Axis-aligned box given by its half extents.
    Box(Vector3<f64>),
}

impl Surface {
    pub fn area(&self) -> f64 {
        match *self {
            Surface::Sphere(r) => 4.0 * std::f64::consts::PI * r * r,
            Surface::Box(h) => 8.0 * (h.x * h.y + h.y * h.z + h.z * h.x),
        }
    }

    /// Uniform sample on the surface with its outward normal.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (Vector3<f64>, Vector3<f64>) {
        match *self {
            Surface::Sphere(r) => loop {
                let v = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                let len = v.norm();
                if len > 1e-9 {
                    let n = v / len;
                    break (n * r, n);
                }
            },
            Surface::Box(h) => {
                let areas = [h.y * h.z, h.z * h.x, h.x * h.y];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = Vector3::zeros();
                let mut n = Vector3::zeros();
                for k in 0..3 {
                    p[k] = if k == axis {
                        sign * h[k]
                    } else {
                        rng.random_range(-h[k]..h[k])
                    };
                }
                n[axis] = sign;
                (p, n)
            }
        }
    }

    /// Nearest intersection of the ray `o + t d` (t > 0) with the surface,
    /// returning the hit distance and outward normal.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match *self {
            Surface::Sphere(r) => {
                let b = o.dot(d);
                let c = o.dot(o) - r * r;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                (t > 0.0).then(|| (t, (o + d * t) / r))
            }
            Surface::Box(h) => {
                let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = 0;
                let mut sign = 0.0;
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o[k].abs() > h[k] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-h[k] - o[k]) / d[k];
                    let t2 = (h[k] - o[k]) / d[k];
                    let (lo, hi, s) = if t1 < t2 { (t1, t2, -1.0) } else { (t2, t1, 1.0) };
                    if lo > t_near {
                        t_near = lo;
                        axis = k;
                        sign = s;
                    }
                    t_far = t_far.min(hi);
                }
                if t_near > t_far || t_near <= 0.0 {
                    return None;
                }
                let mut n = Vector3::zeros();
                n[axis] = sign;
                Some((t_near, n))
            }
        }
    }
}

/// Scene generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub preset: Preset,
    pub views: usize,
    pub resolution: usize,
    pub points: usize,
    pub seed: u64,
}

impl SceneConfig {
    pub fn new(preset: Preset) -> Self {
        Self {
            preset,
            views: 24,
            resolution: 64,
            points: 2000,
            seed: 0,
        }
    }
}

/// Supervision data for per-scene fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<Vector3<f64>>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub rig: CameraRig,
    pub gt_rgb: Vec<Image>,
    /// World-frame normal maps, zero where no surface is hit.
    pub gt_normal: Vec<Image>,
    pub background: Vector3<f64>,
}

impl Scene {
    pub fn views(&self) -> usize {
        self.rig.len()
    }

    /// Checks the shape and finiteness invariants a fit relies on.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::EmptyPointCloud);
        }
        if self.rig.len() < 2 {
            return Err(Error::TooFewViews { views: self.rig.len() });
        }
        self.rig.validate()?;
        if self.gt_rgb.len() != self.rig.len() || self.gt_normal.len() != self.rig.len() {
            return Err(Error::Shape {
                expected: format!("{} ground-truth views", self.rig.len()),
                actual: format!("{} rgb, {} normal", self.gt_rgb.len(), self.gt_normal.len()),
            });
        }
        for ((cam, rgb), nrm) in self.rig.cameras.iter().zip(&self.gt_rgb).zip(&self.gt_normal) {
            for img in [rgb, nrm] {
                if (img.width, img.height) != (cam.width, cam.height) {
                    return Err(Error::Shape {
                        expected: format!("{}x{}", cam.width, cam.height),
                        actual: format!("{}x{}", img.width, img.height),
                    });
                }
                if !img.is_finite() {
                    return Err(Error::NonFinite("ground-truth image"));
                }
            }
        }
        for opt in [&self.colors, &self.normals].into_iter().flatten() {
            if opt.len() != self.points.len() {
                return Err(Error::Shape {
                    expected: format!("{} per-point values", self.points.len()),
                    actual: opt.len().to_string(),
                });
            }
        }
        if self.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("point cloud"));
        }
        Ok(())
    }

    /// Foreground mask of view `i`: 1 where the ground-truth normal map hits
    /// the surface, 0 elsewhere.
    pub fn normal_mask(&self, i: usize) -> Vec<f64> {
        self.gt_normal[i]
            .data
            .chunks(3)
            .map(|n| if n[0] * n[0] + n[1] * n[1] + n[2] * n[2] > 0.25 { 1.0 } else { 0.0 })
            .collect()
    }

    /// Evaluation crop of view `i`.
    pub fn eval_crop(&self, i: usize) -> Rect {
        eval_crop(&self.rig.cameras[i], &self.points)
    }

    /// Splits view indices into (training, held-out); every `holdout_every`-th
    /// view (starting at index `holdout_every - 1`) is held out. Zero holds
    /// nothing out.
    pub fn split(&self, holdout_every: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.views()).partition(|i| holdout_every == 0 || (i + 1) % holdout_every != 0)
    }
}

/// Bounding box of the projected points, grown by [`CROP_MARGIN`] of its
/// size on every side and clipped to the image.
pub fn eval_crop(cam: &Camera, points: &[Vector3<f64>]) -> Rect {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        let t = cam.to_camera(p);
        if t.z <= 0.0 {
            continue;
        }
        let u = cam.fx * t.x / t.z + cam.cx;
        let v = cam.fy * t.y / t.z + cam.cy;
        x0 = x0.min(u);
        x1 = x1.max(u);
        y0 = y0.min(v);
        y1 = y1.max(v);
    }
    if !(x0 <= x1 && y0 <= y1) {
        return Rect::full(cam.width, cam.height);
    }
    let (mx, my) = ((x1 - x0) * CROP_MARGIN, (y1 - y0) * CROP_MARGIN);
    let clip = |v: f64, hi: usize| v.clamp(0.0, (hi - 1) as f64);
    let left = clip((x0 - mx).floor(), cam.width) as usize;
    let right = clip((x1 + mx).ceil(), cam.width) as usize;
    let top = clip((y0 - my).floor(), cam.height) as usize;
    let bottom = clip((y1 + my).ceil(), cam.height) as usize;
    Rect {
        x0: left,
        y0: top,
        width: right - left + 1,
        height: bottom - top + 1,
    }
}

/// Rig used by all presets: `views` cameras on two elevation rings whose
/// field of view frames the unit cube.
pub fn preset_rig(views: usize, resolution: usize) -> CameraRig {
    CameraRig::orbit(views, RIG_RADIUS, resolution as f64 * 1.05, resolution, resolution)
}

/// Analytic normal map: per-pixel ray cast against `surface`.
pub fn analytic_normal_map(surface: &Surface, cam: &Camera) -> Image {
    let mut img = Image::new(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (o, d) = cam.ray(x as f64, y as f64);
            if let Some((_, n)) = surface.intersect(&o, &d) {
                img.set(x, y, n);
            }
        }
    }
    img
}

/// Distance from every point to its nearest other point.
pub fn nearest_neighbor_distances(points: &[Vector3<f64>]) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return vec![1.0; n];
    }
    let cell = {
        let (lo, hi) = bounds(points);
        let ext = (hi - lo).max().max(1e-9);
        ext / (n as f64).cbrt().max(1.0)
    };
    let grid = SpatialGrid::new(points, cell);
    points.iter().enumerate().map(|(i, p)| grid.nearest_other(points, i, p)).collect()
}

fn bounds(points: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

struct SpatialGrid {
    lo: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<usize>>,
}

impl SpatialGrid {
    fn new(points: &[Vector3<f64>], cell: f64) -> Self {
        let (lo, hi) = bounds(points);
        let dims = [0, 1, 2].map(|k| (((hi[k] - lo[k]) / cell).floor() as usize + 1).max(1));
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut grid = Self { lo, cell, dims, cells: Vec::new() };
        for (i, p) in points.iter().enumerate() {
            let c = grid.coord(p);
            cells[grid.index(c)].push(i);
        }
        grid.cells = cells;
        grid
    }

    fn coord(&self, p: &Vector3<f64>) -> [usize; 3] {
        [0, 1, 2].map(|k| (((p[k] - self.lo[k]) / self.cell).floor() as usize).min(self.dims[k] - 1))
    }

    fn index(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn nearest_other(&self, points: &[Vector3<f64>], me: usize, p: &Vector3<f64>) -> f64 {
        let c = self.coord(p);
        let mut best = f64::INFINITY;
        let mut ring = 0usize;
        loop {
            for dz in -(ring as isize)..=ring as isize {
                for dy in -(ring as isize)..=ring as isize {
                    for dx in -(ring as isize)..=ring as isize {
                        let on_shell = dx.unsigned_abs() == ring || dy.unsigned_abs() == ring || dz.unsigned_abs() == ring;
                        if !on_shell {
                            continue;
                        }
                        let q = [c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz];
                        if (0..3).any(|k| q[k] < 0 || q[k] >= self.dims[k] as isize) {
                            continue;
                        }
                        for &j in &self.cells[self.index([q[0] as usize, q[1] as usize, q[2] as usize])] {
                            if j != me {
                                best = best.min((points[j] - p).norm());
                            }
                        }
                    }
                }
            }
            // every unvisited cell is at least `ring * cell` away
            if best <= ring as f64 * self.cell || ring > self.dims.iter().copied().max().unwrap_or(1) {
                return best;
            }
            ring += 1;
        }
    }
}

/// Hand-built ground-truth field: one flat, near-opaque Gaussian per surface
/// sample whose thin axis follows the normal, with a random spin and mild
/// in-plane anisotropy.
pub fn ground_truth_field(
    points: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    colors: &[Vector3<f64>],
    area: f64,
    rng: &mut ChaCha8Rng,
) -> GaussianField {
    let spacing = (area / points.len() as f64).sqrt();
    let gaussians = points
        .iter()
        .zip(normals)
        .zip(colors)
        .map(|((p, n), c)| {
            let spin = Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random_range(0.0..std::f64::consts::TAU));
            let r: Matrix3<f64> = math::normal_to_rotation(n) * spin.matrix();
            let mut g = Gaussian3D::new(*p);
            g.rotation_raw = math::matrix_to_quat(&r);
            g.scales_log = Vector3::new(
                (spacing * rng.random_range(0.55..0.95)).ln(),
                (spacing * rng.random_range(0.3..0.55)).ln(),
                (spacing * 0.05).ln(),
            );
            g.opacity_raw = math::logit(0.97);
            for ch in 0..3 {
                g.sh[0][ch] = (c[ch] - 0.5) / SH_C0;
            }
            g.normal_raw = *n;
            g
        })
        .collect();
    GaussianField::new(gaussians, ParamMode::Unconstrained, 1)
}

/// Generates a preset scene: surface samples with analytic normals and
/// colors, the preset rig, oracle-rendered RGB views of the ground-truth
/// field, and ray-cast normal maps.
pub fn generate(config: &SceneConfig) -> Result<Scene> {
    if config.points == 0 {
        return Err(Error::EmptyPointCloud);
    }
    if config.views < 2 {
        return Err(Error::TooFewViews { views: config.views });
    }
    if config.resolution < 8 {
        return Err(Error::invalid("resolution must be at least 8 pixels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let surface = config.preset.surface();
    let (points, normals): (Vec<_>, Vec<_>) = (0..config.points).map(|_| surface.sample(&mut rng)).unzip();
    let colors: Vec<_> = points
        .iter()
        .zip(&normals)
        .map(|(p, n)| config.preset.color(p, n).map(|v| v.clamp(0.02, 0.98)))
        .collect();
    let field = ground_truth_field(&points, &normals, &colors, surface.area(), &mut rng);
    let rig = preset_rig(config.views, config.resolution);
    let background = Vector3::repeat(1.0);
    let gt_rgb = rig
        .cameras
        .iter()
        .map(|cam| oracle_render(&field, cam, RenderMode::Rgb, background).payload)
        .collect();
    let gt_normal = rig.cameras.iter().map(|cam| analytic_normal_map(&surface, cam)).collect();
    Ok(Scene {
        id: format!("{}-{}", config.preset, config.seed),
        points,
        colors: Some(colors),
        normals: Some(normals),
        rig,
        gt_rgb,
        gt_normal,
        background,
    })
}
