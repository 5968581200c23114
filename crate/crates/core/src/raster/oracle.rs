use nalgebra::{Vector2, Vector3};

use super::project::project;
use super::{RenderMode, RenderOutput, ALPHA_CAP, ALPHA_MIN, TRANSMITTANCE_MIN};
use crate::buffer::Image;
use crate::camera::Camera;
use crate::gaussian::GaussianField;

/// Reference renderer: every pixel visits every non-culled fragment in exact
/// depth order. No tiling, no bounding boxes, no loop exit.
///
/// Fragments that would push transmittance below the stop threshold, and all
/// fragments behind them, are excluded, which is the same compositing rule
/// [`super::render`] applies.
pub fn oracle_render(
    field: &GaussianField,
    cam: &Camera,
    mode: RenderMode,
    background: Vector3<f64>,
) -> RenderOutput {
    let mut frags: Vec<_> = field
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, i, cam, field.param_mode, field.sh_degree, mode))
        .collect();
    frags.sort_by(|a, b| {
        a.view_depth
            .partial_cmp(&b.view_depth)
            .expect("finite depth")
            .then(a.gaussian_index.cmp(&b.gaussian_index))
    });
    let inverses: Vec<_> = frags
        .iter()
        .map(|f| f.cov2d.try_inverse().expect("positive-definite screen covariance"))
        .collect();

    let bg = if mode == RenderMode::Rgb {
        background
    } else {
        Vector3::zeros()
    };
    let (w, h) = (cam.width, cam.height);
    let mut payload = Image::new(w, h);
    let mut depth = vec![0.0; w * h];
    let mut transmittance = vec![1.0; w * h];

    for y in 0..h {
        for x in 0..w {
            let pix = Vector2::new(x as f64, y as f64);
            let mut color = Vector3::zeros();
            let mut z = 0.0;
            let mut t = 1.0;
            let mut saturated = false;
            for (f, inv) in frags.iter().zip(inverses.iter()) {
                let d = pix - f.mean2d;
                let density = (-0.5 * (d.transpose() * inv * d)[(0, 0)]).exp();
                let alpha = (f.alpha_scale * density).min(ALPHA_CAP);
                let included = !saturated && alpha >= ALPHA_MIN;
                if included && t * (1.0 - alpha) < TRANSMITTANCE_MIN {
                    saturated = true;
                }
                if included && !saturated {
                    color += f.payload * (alpha * t);
                    z += f.view_depth * alpha * t;
                    t *= 1.0 - alpha;
                }
            }
            payload.set(x, y, color + bg * t);
            depth[y * w + x] = z;
            transmittance[y * w + x] = t;
        }
    }

    RenderOutput {
        payload,
        alpha: transmittance.iter().map(|t| 1.0 - t).collect(),
        depth,
        transmittance,
    }
}
