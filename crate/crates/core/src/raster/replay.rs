use nalgebra::{Vector2, Vector3};

use super::project::project_unculled;
use super::tiled::Branch;
use super::{RenderMode, ALPHA_CAP};
use crate::buffer::Image;
use crate::camera::Camera;
use crate::gaussian::GaussianField;

/// Composites `field` along a fixed branch: each pixel blends exactly the
/// Gaussians listed for it, in the listed order, with no alpha thresholds.
///
/// On the parameter region where rendering takes this branch the result
/// equals [`super::render`]; elsewhere it is that region's smooth
/// continuation, so its derivatives are the renderer's derivatives.
pub fn render_on_branch(
    field: &GaussianField,
    cam: &Camera,
    mode: RenderMode,
    background: Vector3<f64>,
    branch: &Branch,
) -> Image {
    let frags: Vec<_> = field
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| project_unculled(g, i, cam, field.param_mode, field.sh_degree, mode))
        .collect();
    let bg = if mode == RenderMode::Rgb {
        background
    } else {
        Vector3::zeros()
    };
    let mut out = Image::new(branch.width, branch.height);
    for y in 0..branch.height {
        for x in 0..branch.width {
            let pix = Vector2::new(x as f64, y as f64);
            let mut t = 1.0;
            let mut acc = Vector3::zeros();
            for &(gi, capped) in &branch.pixels[y * branch.width + x] {
                let f = frags[gi as usize].as_ref().expect("branch Gaussian in front of the camera");
                let alpha = if capped {
                    ALPHA_CAP
                } else {
                    let d = pix - f.mean2d;
                    f.alpha_scale * (-0.5 * d.dot(&(f.conic * d))).exp()
                };
                acc += f.payload * (alpha * t);
                t *= 1.0 - alpha;
            }
            out.set(x, y, acc + bg * t);
        }
    }
    out
}
