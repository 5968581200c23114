//! Triplane feature geometry: occupancy voxelization, point-to-plane
//! projection, bilinear feature fetching, multiscale construction, toy
//! cross-attention, additive injection and feature mixup. All weights are
//! seeded random linear maps.

mod attention;
mod container;
mod selftest;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub use attention::{cross_attend, CrossAttention};
pub use container::{features_csv, load_stack, read_stack, save_stack, write_stack, StackHeader, CONTAINER_MAGIC};
pub use selftest::{selftest, SelftestCheck, SelftestReport};

/// Plane directions in the fixed concatenation order used by [`fetch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneDir {
    Xy,
    Yz,
    Zx,
}

impl PlaneDir {
    pub const ALL: [PlaneDir; 3] = [PlaneDir::Xy, PlaneDir::Yz, PlaneDir::Zx];

    pub fn as_str(self) -> &'static str {
        match self {
            PlaneDir::Xy => "xy",
            PlaneDir::Yz => "yz",
            PlaneDir::Zx => "zx",
        }
    }

    /// Coordinates of `p` on this plane.
    pub fn project(self, p: &Vector3<f64>) -> [f64; 2] {
        match self {
            PlaneDir::Xy => [p.x, p.y],
            PlaneDir::Yz => [p.y, p.z],
            PlaneDir::Zx => [p.z, p.x],
        }
    }
}

/// Projections of `p` onto the xy, yz and zx planes.
pub fn project_to_planes(p: &Vector3<f64>) -> [[f64; 2]; 3] {
    PlaneDir::ALL.map(|d| d.project(p))
}

/// Square grid of feature vectors, stored as `data[(v * res + u) * channels + k]`
/// where `u` indexes the first plane coordinate and `v` the second.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub resolution: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Stand-in for an encoded reference image: an `R x R x C` feature map.
pub type ImageFeatureMap = FeatureGrid;

impl FeatureGrid {
    pub fn zeros(resolution: usize, channels: usize) -> Self {
        Self {
            resolution,
            channels,
            data: vec![0.0; resolution * resolution * channels],
        }
    }

    pub fn from_data(resolution: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if resolution == 0 || channels == 0 {
            return Err(Error::invalid("feature grids need a positive resolution and channel count"));
        }
        if data.len() != resolution * resolution * channels {
            return Err(Error::Shape {
                expected: format!("{resolution}x{resolution}x{channels} values"),
                actual: data.len().to_string(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature grid"));
        }
        Ok(Self {
            resolution,
            channels,
            data,
        })
    }

    /// Grid with entries drawn from a standard normal distribution.
    pub fn random(resolution: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let data = (0..resolution * resolution * channels).map(|_| normal.sample(&mut rng)).collect();
        Self {
            resolution,
            channels,
            data,
        }
    }

    pub fn tokens(&self) -> usize {
        self.resolution * self.resolution
    }

    #[inline]
    pub fn node(&self, u: usize, v: usize) -> &[f64] {
        let i = (v * self.resolution + u) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn token(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    /// Bilinear sample at plane coordinates in `[-1, 1]^2`, align-corners:
    /// `-1` and `1` land exactly on the first and last nodes.
    pub fn sample(&self, uv: [f64; 2], out: &mut [f64]) {
        let r = self.resolution;
        let cell = |x: f64| -> (usize, f64) {
            if r == 1 {
                return (0, 0.0);
            }
            let g = (x + 1.0) * 0.5 * (r - 1) as f64;
            let i = (g.floor() as usize).min(r - 2);
            (i, g - i as f64)
        };
        let (u0, fu) = cell(uv[0]);
        let (v0, fv) = cell(uv[1]);
        let (u1, v1) = ((u0 + 1).min(r - 1), (v0 + 1).min(r - 1));
        let corners = [
            (u0, v0, (1.0 - fu) * (1.0 - fv)),
            (u1, v0, fu * (1.0 - fv)),
            (u0, v1, (1.0 - fu) * fv),
            (u1, v1, fu * fv),
        ];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (u, v, w) in corners {
            if w == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(self.node(u, v)) {
                *o += w * x;
            }
        }
    }

    /// Applies a linear channel map to every node.
    pub fn map_channels(&self, map: &Linear) -> FeatureGrid {
        assert_eq!(map.inputs, self.channels, "channel map input width");
        let mut data = Vec::with_capacity(self.tokens() * map.outputs);
        for t in 0..self.tokens() {
            data.extend(map.apply(self.token(t)));
        }
        FeatureGrid {
            resolution: self.resolution,
            channels: map.outputs,
            data,
        }
    }

    /// Bilinear 2x upsample with the align-corners convention.
    pub fn upsample2(&self) -> FeatureGrid {
        let r = self.resolution;
        let out_r = 2 * r;
        let mut out = FeatureGrid::zeros(out_r, self.channels);
        let mut buf = vec![0.0; self.channels];
        for v in 0..out_r {
            for u in 0..out_r {
                let to_uv = |i: usize| 2.0 * i as f64 / (out_r - 1) as f64 - 1.0;
                self.sample([to_uv(u), to_uv(v)], &mut buf);
                let i = (v * out_r + u) * self.channels;
                out.data[i..i + self.channels].copy_from_slice(&buf);
            }
        }
        out
    }
}

/// Dense linear map `y = W x` with `W` stored row-major (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
}

impl Linear {
    /// Weights drawn from `N(0, 1 / inputs)`.
    pub fn seeded(inputs: usize, outputs: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let normal = Normal::new(0.0, 1.0 / (inputs.max(1) as f64).sqrt()).expect("finite std");
        let weights = (0..inputs * outputs).map(|_| normal.sample(&mut rng)).collect();
        Self {
            inputs,
            outputs,
            weights,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.inputs, "linear map input width");
        self.weights
            .chunks(self.inputs)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }
}

/// Three same-shaped feature planes in xy, yz, zx order.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplane {
    pub planes: [FeatureGrid; 3],
}

impl Triplane {
    pub fn new(planes: [FeatureGrid; 3]) -> Result<Self> {
        let (r, c) = (planes[0].resolution, planes[0].channels);
        if planes.iter().any(|p| p.resolution != r || p.channels != c) {
            return Err(Error::invalid("triplane planes must share resolution and channel count"));
        }
        Ok(Self { planes })
    }

    pub fn resolution(&self) -> usize {
        self.planes[0].resolution
    }

    pub fn channels(&self) -> usize {
        self.planes[0].channels
    }

    pub fn plane(&self, dir: PlaneDir) -> &FeatureGrid {
        &self.planes[dir as usize]
    }
}

fn check_in_cube(p: &Vector3<f64>) -> Result<()> {
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("query point"));
    }
    if p.iter().any(|v| v.abs() > 1.0) {
        return Err(Error::OutOfCube { point: [p.x, p.y, p.z] });
    }
    Ok(())
}

/// Feature of `p`: bilinear samples of the xy, yz and zx planes,
/// concatenated in that order.
pub fn fetch(t: &Triplane, p: &Vector3<f64>) -> Result<Vec<f64>> {
    check_in_cube(p)?;
    let c = t.channels();
    let mut out = vec![0.0; 3 * c];
    for (k, dir) in PlaneDir::ALL.iter().enumerate() {
        t.plane(*dir).sample(dir.project(p), &mut out[k * c..(k + 1) * c]);
    }
    Ok(out)
}

/// Triplanes at increasing resolution: each scale doubles the resolution and
/// halves the channel count of the previous one.
#[derive(Debug, Clone, PartialEq)]
pub struct TriplaneStack {
    pub seed: u64,
    pub scales: Vec<Triplane>,
}

impl TriplaneStack {
    pub fn new(seed: u64, scales: Vec<Triplane>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::invalid("a triplane stack needs at least one scale"));
        }
        for w in scales.windows(2) {
            if w[1].resolution() != 2 * w[0].resolution() || 2 * w[1].channels() != w[0].channels() {
                return Err(Error::invalid(
                    "each scale must double the resolution and halve the channels",
                ));
            }
        }
        Ok(Self { seed, scales })
    }

    /// Features fetched from every scale, coarsest first.
    pub fn fetch_all(&self, p: &Vector3<f64>) -> Result<Vec<Vec<f64>>> {
        self.scales.iter().map(|t| fetch(t, p)).collect()
    }
}

fn channel_map_stream(scale: usize, dir: PlaneDir) -> u64 {
    (scale as u64) * 3 + dir as u64
}

/// Builds `n_scales` triplanes from an image feature map. Scale 0 applies a
/// seeded per-direction channel map to `base`; every further scale upsamples
/// the previous one 2x and applies a seeded per-direction, per-scale
/// channel-halving map.
pub fn build_multiscale(base: &ImageFeatureMap, n_scales: usize, seed: u64) -> Result<TriplaneStack> {
    if n_scales == 0 {
        return Err(Error::invalid("at least one scale is required"));
    }
    if base.resolution == 0 || base.data.len() != base.tokens() * base.channels {
        return Err(Error::invalid("malformed base feature map"));
    }
    if base.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("base feature map"));
    }
    if base.channels % (1 << (n_scales - 1)) != 0 {
        return Err(Error::invalid(format!(
            "{} channels cannot be halved {} times",
            base.channels,
            n_scales - 1
        )));
    }
    let c0 = base.channels;
    let first = PlaneDir::ALL.map(|d| base.map_channels(&Linear::seeded(c0, c0, seed, channel_map_stream(0, d))));
    let mut scales = vec![Triplane::new(first)?];
    for s in 1..n_scales {
        let prev = scales.last().expect("non-empty");
        let c = prev.channels();
        let planes = PlaneDir::ALL.map(|d| {
            let map = Linear::seeded(c, c / 2, seed, channel_map_stream(s, d));
            prev.plane(d).upsample2().map_channels(&map)
        });
        scales.push(Triplane::new(planes)?);
    }
    TriplaneStack::new(seed, scales)
}

/// Boolean voxel grid over `[-1, 1]^3`, indexed `(i * side + j) * side + k`
/// for voxel `(i, j, k)` along x, y, z.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub side: usize,
    pub occupied: Vec<bool>,
}

impl OccupancyGrid {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.side + j) * self.side + k
    }

    pub fn is_occupied(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupied[self.index(i, j, k)]
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }

    /// Center of voxel `(i, j, k)` in cube coordinates.
    pub fn center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let c = |n: usize| -1.0 + (2 * n + 1) as f64 / self.side as f64;
        Vector3::new(c(i), c(j), c(k))
    }

    /// One token per occupied voxel: a seeded linear embedding of the voxel
    /// center and a constant 1, in index order.
    pub fn features(&self, width: usize, seed: u64) -> OccupancyFeature {
        let map = Linear::seeded(4, width, seed, 0);
        let mut data = Vec::with_capacity(self.count() * width);
        for i in 0..self.side {
            for j in 0..self.side {
                for k in 0..self.side {
                    if self.is_occupied(i, j, k) {
                        let c = self.center(i, j, k);
                        data.extend(map.apply(&[c.x, c.y, c.z, 1.0]));
                    }
                }
            }
        }
        OccupancyFeature { width, data }
    }
}

/// Voxel index of a cube coordinate; `1` clamps to the last voxel.
pub fn voxel_index(x: f64, side: usize) -> usize {
    (((x + 1.0) * 0.5 * side as f64).floor() as usize).min(side - 1)
}

/// Marks every voxel that contains at least one point.
pub fn voxelize(points: &[Vector3<f64>], side: usize) -> Result<OccupancyGrid> {
    if points.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    if side == 0 {
        return Err(Error::invalid("voxel grid side must be positive"));
    }
    let mut grid = OccupancyGrid {
        side,
        occupied: vec![false; side * side * side],
    };
    for p in points {
        check_in_cube(p)?;
        let idx = grid.index(voxel_index(p.x, side), voxel_index(p.y, side), voxel_index(p.z, side));
        grid.occupied[idx] = true;
    }
    Ok(grid)
}

/// Per-occupied-voxel feature tokens, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyFeature {
    pub width: usize,
    pub data: Vec<f64>,
}

impl OccupancyFeature {
    pub fn tokens(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.data.len() / self.width
        }
    }

    pub fn token(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }
}

/// Adds a seeded linear projection of `fetched` to `occ_feature`.
pub fn inject(occ_feature: &[f64], fetched: &[f64], seed: u64) -> Result<Vec<f64>> {
    if occ_feature.is_empty() {
        return Err(Error::invalid("occupancy feature is empty"));
    }
    if occ_feature.iter().chain(fetched).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("injected features"));
    }
    let proj = Linear::seeded(fetched.len(), occ_feature.len(), seed, 0).apply(fetched);
    Ok(occ_feature.iter().zip(proj).map(|(o, p)| o + p).collect())
}

/// `alpha * f0 + (1 - alpha) * f1`.
pub fn mixup(f0: &[f64], f1: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if f0.len() != f1.len() {
        return Err(Error::Shape {
            expected: format!("{} values", f0.len()),
            actual: f1.len().to_string(),
        });
    }
    if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("mixup weight {alpha} is outside [0, 1]")));
    }
    Ok(f0.iter().zip(f1).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_planes(&Vector3::zeros()), [[0.0; 2]; 3]);
        assert_eq!(
            project_to_planes(&Vector3::new(1.0, -1.0, 0.5)),
            [[1.0, -1.0], [-1.0, 0.5], [0.5, 1.0]]
        );
    }

    #[test]
    fn origin_voxel() {
        let g = voxelize(&[Vector3::zeros()], 8).unwrap();
        assert_eq!(g.count(), 1);
        assert!(g.is_occupied(4, 4, 4));
        assert!(voxelize(&[], 8).is_err());
    }

    #[test]
    fn boundary_points_clamp_to_last_voxel() {
        let g = voxelize(&[Vector3::repeat(1.0), Vector3::repeat(-1.0)], 4).unwrap();
        assert!(g.is_occupied(3, 3, 3));
        assert!(g.is_occupied(0, 0, 0));
        assert!(voxelize(&[Vector3::new(1.01, 0.0, 0.0)], 4).is_err());
    }

    #[test]
    fn voxelize_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let side = 8;
        let points: Vec<Vector3<f64>> = (0..10_000)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0)))
            .collect();
        let grid = voxelize(&points, side).unwrap();
        let mut naive = 0;
        for i in 0..side {
            for j in 0..side {
                for k in 0..side {
                    let lo = |n: usize| -1.0 + 2.0 * n as f64 / side as f64;
                    let inside = |x: f64, n: usize| {
                        x >= lo(n) && (x < lo(n + 1) || (n == side - 1 && x <= 1.0))
                    };
                    if points.iter().any(|p| inside(p.x, i) && inside(p.y, j) && inside(p.z, k)) {
                        naive += 1;
                    }
                }
            }
        }
        assert_eq!(grid.count(), naive);
    }

    #[test]
    fn ladder_for_four_scales() {
        let base = FeatureGrid::random(32, 64, 1);
        let stack = build_multiscale(&base, 4, 9).unwrap();
        let shape: Vec<(usize, usize)> = stack.scales.iter().map(|t| (t.resolution(), t.channels())).collect();
        assert_eq!(shape, vec![(32, 64), (64, 32), (128, 16), (256, 8)]);
    }

    #[test]
    fn single_scale_keeps_base_resolution() {
        let base = FeatureGrid::random(5, 4, 2);
        let stack = build_multiscale(&base, 1, 0).unwrap();
        assert_eq!(stack.scales.len(), 1);
        assert_eq!(stack.scales[0].resolution(), 5);
    }

    #[test]
    fn constant_base_gives_constant_planes() {
        let base = FeatureGrid::from_data(4, 8, (0..4 * 4 * 8).map(|i| (i % 8) as f64).collect()).unwrap();
        let stack = build_multiscale(&base, 3, 5).unwrap();
        for t in &stack.scales {
            for p in &t.planes {
                let first = p.node(0, 0).to_vec();
                for tok in 0..p.tokens() {
                    for (a, b) in p.token(tok).iter().zip(&first) {
                        assert_relative_eq!(a, b, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn directions_use_distinct_weights() {
        let base = FeatureGrid::random(4, 4, 2);
        let stack = build_multiscale(&base, 2, 1).unwrap();
        for t in &stack.scales {
            assert_ne!(t.planes[0], t.planes[1]);
            assert_ne!(t.planes[1], t.planes[2]);
        }
        assert_eq!(stack, build_multiscale(&base, 2, 1).unwrap());
        assert_ne!(stack, build_multiscale(&base, 2, 2).unwrap());
    }

    #[test]
    fn fetch_rejects_points_outside_cube() {
        let t = build_multiscale(&FeatureGrid::random(4, 2, 0), 1, 0).unwrap().scales.remove(0);
        assert!(fetch(&t, &Vector3::new(0.0, 1.5, 0.0)).is_err());
        assert!(fetch(&t, &Vector3::new(0.0, f64::NAN, 0.0)).is_err());
        assert_eq!(fetch(&t, &Vector3::repeat(1.0)).unwrap().len(), 6);
    }

    #[test]
    fn fetch_is_linear_along_axis_segments() {
        let t = build_multiscale(&FeatureGrid::random(5, 3, 4), 1, 4).unwrap().scales.remove(0);
        // cell [0, 0.5] along x at fixed y, z
        let a = fetch(&t, &Vector3::new(0.0, 0.3, -0.2)).unwrap();
        let b = fetch(&t, &Vector3::new(0.5, 0.3, -0.2)).unwrap();
        let m = fetch(&t, &Vector3::new(0.2, 0.3, -0.2)).unwrap();
        for k in 0..a.len() {
            assert_relative_eq!(m[k], 0.6 * a[k] + 0.4 * b[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn fetch_is_lipschitz() {
        let grid = FeatureGrid::random(6, 2, 8);
        let t = Triplane::new([grid.clone(), grid.clone(), grid.clone()]).unwrap();
        let max = grid.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let spacing = 2.0 / 5.0;
        // each plane sample moves at most 2 * max / spacing per unit of
        // in-plane distance along each axis
        let lip = 3.0 * 2.0 * 2.0 * max / spacing * (3.0f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let q = (p + Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05))).map(|v: f64| v.clamp(-1.0, 1.0));
            let d: f64 = fetch(&t, &p)
                .unwrap()
                .iter()
                .zip(fetch(&t, &q).unwrap())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(d <= lip * (p - q).norm() + 1e-12);
        }
    }

    #[test]
    fn inject_examples() {
        let o = [1.0, -2.0, 0.5];
        assert_eq!(inject(&o, &[0.0; 4], 3).unwrap(), o.to_vec());
        let a = [0.3, -1.0, 2.0, 0.1];
        let b = [1.5, 0.2, -0.7, 0.9];
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (iab, ia, ib) = (inject(&o, &ab, 3).unwrap(), inject(&o, &a, 3).unwrap(), inject(&o, &b, 3).unwrap());
        for k in 0..3 {
            assert_relative_eq!(iab[k] - ia[k] - ib[k] + o[k], 0.0, epsilon = 1e-12);
        }
        let w = Linear::seeded(4, 3, 3, 0);
        let two_step: Vec<f64> = o.iter().zip(w.apply(&a)).map(|(x, y)| x + y).collect();
        assert_eq!(ia, two_step);
    }

    #[test]
    fn mixup_examples() {
        let f0 = [2.0, 0.0];
        let f1 = [0.0, 2.0];
        assert_eq!(mixup(&f0, &f1, 1.0).unwrap(), f0.to_vec());
        assert_eq!(mixup(&f0, &f1, 0.0).unwrap(), f1.to_vec());
        assert_eq!(mixup(&f0, &f1, 0.5).unwrap(), vec![1.0, 1.0]);
        assert!(mixup(&f0, &[1.0], 0.5).is_err());
        assert!(mixup(&f0, &f1, 1.5).is_err());
    }

    #[test]
    fn occupancy_features_follow_voxel_order() {
        let g = voxelize(&[Vector3::new(0.9, 0.0, 0.0), Vector3::new(-0.9, 0.0, 0.0)], 4).unwrap();
        let f = g.features(5, 1);
        assert_eq!(f.tokens(), 2);
        let map = Linear::seeded(4, 5, 1, 0);
        assert_eq!(f.token(0), map.apply(&[-0.75, 0.25, 0.25, 1.0]).as_slice());
    }
}
