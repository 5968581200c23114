//! Central finite-difference check of [`render_backward`].

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::buffer::Image;
use crate::camera::Camera;
use crate::gaussian::{layout, Gaussian3D, GaussianField, ParamGroup, ParamMode};
use crate::raster::{render, render_backward, render_on_branch, Branch, RenderMode, Splats};

/// Elements whose analytic gradient is below this are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-8;

/// Relative error every element above [`ABS_FLOOR`] must stay under.
pub const REL_TOLERANCE: f64 = 1e-5;

/// A random field, camera, and upstream gradient for one check.
#[derive(Debug, Clone)]
pub struct GradcheckScene {
    pub field: GaussianField,
    pub camera: Camera,
    pub render_mode: RenderMode,
    pub background: Vector3<f64>,
    pub upstream: Image,
}

impl GradcheckScene {
    pub fn random(seed: u64, size: usize, count: usize, param_mode: ParamMode, render_mode: RenderMode) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let camera = Camera::look_at(
            Vector3::new(0.3, -4.0, 0.8),
            Vector3::zeros(),
            Vector3::z(),
            size as f64 * 1.4,
            size,
            size,
        );
        let gaussians = (0..count)
            .map(|_| random_gaussian(&mut rng, param_mode))
            .collect();
        let field = GaussianField::new(gaussians, param_mode, 1);
        let background = Vector3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let mut upstream = Image::new(size, size);
        for v in upstream.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        Self {
            field,
            camera,
            render_mode,
            background,
            upstream,
        }
    }

    pub fn loss(&self, field: &GaussianField) -> f64 {
        self.weigh(&self.image(field))
    }

    fn image(&self, field: &GaussianField) -> Image {
        render(field, &self.camera, self.render_mode, self.background).payload
    }

    fn image_on_branch(&self, field: &GaussianField, branch: &Branch) -> Image {
        render_on_branch(field, &self.camera, self.render_mode, self.background, branch)
    }

    fn weigh(&self, img: &Image) -> f64 {
        img.data.iter().zip(self.upstream.data.iter()).map(|(a, b)| a * b).sum()
    }
}

fn random_gaussian(rng: &mut ChaCha8Rng, mode: ParamMode) -> Gaussian3D {
    let unit = |rng: &mut ChaCha8Rng| loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.2 && v.norm() <= 1.0 {
            break v.normalize();
        }
    };
    let position = Vector3::new(
        rng.random_range(-0.9..0.9),
        rng.random_range(-0.9..0.9),
        rng.random_range(-0.9..0.9),
    );
    let mut g = Gaussian3D::new(position);
    let q = unit(rng) * rng.random_range(0.5..2.0);
    g.rotation_raw = [rng.random_range(-1.0..1.0), q.x, q.y, q.z];
    g.scales_log = Vector3::new(
        rng.random_range(0.06f64..0.3).ln(),
        rng.random_range(0.06f64..0.3).ln(),
        rng.random_range(0.06f64..0.3).ln(),
    );
    if mode == ParamMode::Isotropic {
        g.scales_log = Vector3::repeat(g.scales_log.x);
    }
    g.opacity_raw = rng.random_range(-1.5..2.0);
    for c in 0..3 {
        g.sh[0][c] = rng.random_range(-0.9..0.9);
        for k in 1..4 {
            g.sh[k][c] = rng.random_range(-0.2..0.2);
        }
    }
    g.normal_raw = unit(rng) * rng.random_range(0.5..2.0);
    g
}

/// Worst mismatch between analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub elements: usize,
    /// Elements whose stencil crossed a compositing branch change and were
    /// differenced on the base point's branch instead.
    pub branch_replays: usize,
    /// Largest relative error over elements with `|analytic| >= ABS_FLOOR`.
    pub max_rel_error: f64,
    /// Largest absolute error over elements with `|analytic| < ABS_FLOOR`.
    pub max_abs_error_small: f64,
    pub worst: Option<Mismatch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub gaussian: usize,
    pub group: ParamGroup,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradcheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error < rel_tol && self.max_abs_error_small < ABS_FLOOR
    }
}

const STENCIL: [(f64, f64); 4] = [(2.0, -1.0), (1.0, 8.0), (-1.0, -8.0), (-2.0, 1.0)];

/// Compares [`render_backward`] to fourth-order central differences of step
/// `h` on every raw parameter.
///
/// The renderer is piecewise smooth: alpha thresholds, the opacity cap, early
/// termination and depth reordering switch between smooth branches. When a
/// stencil point lands on a different branch than the base point, the
/// element is differenced with [`render_on_branch`] on the base branch, whose
/// derivative at the base point is the renderer's.
pub fn check(scene: &GradcheckScene, h: f64) -> GradcheckReport {
    let analytic = render_backward(
        &scene.field,
        &scene.camera,
        scene.render_mode,
        scene.background,
        &scene.upstream,
    );
    let branch_of = |f: &GaussianField| Splats::prepare(f, &scene.camera, scene.render_mode).branch();
    let base_branch = branch_of(&scene.field);
    let base = scene.field.to_flat();
    let mut probe = scene.field.clone();
    let mut report = GradcheckReport {
        elements: base.len(),
        branch_replays: 0,
        max_rel_error: 0.0,
        max_abs_error_small: 0.0,
        worst: None,
    };
    let mut flat = base.clone();
    for i in 0..base.len() {
        let mut images = Vec::with_capacity(STENCIL.len());
        let mut crossed = false;
        for &(k, _) in &STENCIL {
            flat[i] = base[i] + k * h;
            probe.set_flat(&flat);
            images.push(scene.image(&probe));
            crossed |= branch_of(&probe) != base_branch;
        }
        if crossed {
            report.branch_replays += 1;
            images.clear();
            for &(k, _) in &STENCIL {
                flat[i] = base[i] + k * h;
                probe.set_flat(&flat);
                images.push(scene.image_on_branch(&probe, &base_branch));
            }
        }
        flat[i] = base[i];

        // Difference per pixel before weighting, so unaffected pixels cancel
        // exactly instead of adding rounding noise to the sum.
        let mut diff = Image::new(scene.upstream.width, scene.upstream.height);
        for (img, &(_, w)) in images.iter().zip(STENCIL.iter()) {
            for (d, v) in diff.data.iter_mut().zip(img.data.iter()) {
                *d += w * v;
            }
        }
        let numeric = scene.weigh(&diff) / (12.0 * h);
        let a = analytic.flat[i];
        let mismatch = || Mismatch {
            gaussian: i / layout::LEN,
            group: ParamGroup::of_offset(i % layout::LEN),
            offset: i % layout::LEN,
            analytic: a,
            numeric,
        };
        if a.abs() < ABS_FLOOR {
            let err = (a - numeric).abs();
            if err > report.max_abs_error_small {
                report.max_abs_error_small = err;
            }
        } else {
            let err = (a - numeric).abs() / a.abs().max(numeric.abs());
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(mismatch());
            }
        }
    }
    report
}
