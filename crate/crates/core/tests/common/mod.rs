#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use normsplat::{Camera, Gaussian3D, GaussianField, ParamMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn camera(size: usize) -> Camera {
    Camera::look_at(
        Vector3::new(0.4, -4.0, 0.7),
        Vector3::zeros(),
        Vector3::z(),
        size as f64 * 1.3,
        size,
        size,
    )
}

/// Camera at the origin looking down +z.
pub fn axis_camera(focal: f64, size: usize) -> Camera {
    let c = size as f64 / 2.0;
    Camera::from_pose(Matrix3::identity(), Vector3::zeros(), focal, focal, c, c, size, size)
}

pub fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_gaussian(rng: &mut ChaCha8Rng) -> Gaussian3D {
    let mut g = Gaussian3D::new(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
    g.rotation_raw = [0; 4].map(|_| rng.random_range(-1.0..1.0));
    g.scales_log = Vector3::from_fn(|_, _| rng.random_range(-4.0..-1.8));
    g.opacity_raw = rng.random_range(-2.0..4.0);
    for k in 0..4 {
        for c in 0..3 {
            g.sh[k][c] = rng.random_range(-1.0..1.0) / (k as f64 + 1.0);
        }
    }
    g.normal_raw = unit(rng) * rng.random_range(0.5..2.0);
    g
}

pub fn random_field(seed: u64, count: usize, mode: ParamMode) -> GaussianField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussians: Vec<Gaussian3D> = (0..count).map(|_| random_gaussian(&mut rng)).collect();
    if mode == ParamMode::Isotropic {
        for g in &mut gaussians {
            g.scales_log = Vector3::repeat(g.scales_log.mean());
        }
    }
    GaussianField::new(gaussians, mode, 1)
}
