use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{RenderMode, ALPHA_MIN, LOW_PASS, NEAR_PLANE};
use crate::camera::Camera;
use crate::gaussian::{Gaussian3D, ParamMode};
use crate::math;

/// A Gaussian projected onto the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatFragment {
    pub gaussian_index: usize,
    pub mean2d: Vector2<f64>,
    /// Screen covariance including the low-pass dilation.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub view_depth: f64,
    pub payload: Vector3<f64>,
    /// Logistic of the raw opacity.
    pub alpha_scale: f64,
    /// Half-widths of the bounding box outside of which `alpha < 1/255`.
    pub extent: Vector2<f64>,
}

/// Perspective Jacobian of `(fx x/z + cx, fy y/z + cy)` at camera point `t`.
pub(crate) fn projection_jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * t.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * t.y * iz * iz,
    )
}

pub(crate) fn view_direction(cam: &Camera, p: &Vector3<f64>) -> Vector3<f64> {
    (p - cam.center()).normalize()
}

pub(crate) fn payload_of(
    g: &Gaussian3D,
    cam: &Camera,
    t: &Vector3<f64>,
    sh_degree: u8,
    mode: RenderMode,
) -> Vector3<f64> {
    match mode {
        RenderMode::Rgb => math::sh_evaluate(&g.sh, &view_direction(cam, &g.position), sh_degree),
        RenderMode::Normal => g.normal(),
        RenderMode::Depth => Vector3::repeat(t.z),
    }
}

/// EWA projection of one Gaussian, or `None` when it is behind the near
/// plane or cannot reach `alpha >= 1/255` at any pixel.
pub fn project(
    g: &Gaussian3D,
    gaussian_index: usize,
    cam: &Camera,
    param_mode: ParamMode,
    sh_degree: u8,
    mode: RenderMode,
) -> Option<SplatFragment> {
    let f = project_unculled(g, gaussian_index, cam, param_mode, sh_degree, mode)?;
    if f.extent.x <= 0.0 {
        return None;
    }
    let (w_max, h_max) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
    if f.mean2d.x + f.extent.x < 0.0
        || f.mean2d.x - f.extent.x > w_max
        || f.mean2d.y + f.extent.y < 0.0
        || f.mean2d.y - f.extent.y > h_max
    {
        return None;
    }
    Some(f)
}

/// Projection without frustum or opacity culling; `None` only behind the
/// near plane. `extent` is zero when the Gaussian can never reach the
/// minimum alpha.
pub(crate) fn project_unculled(
    g: &Gaussian3D,
    gaussian_index: usize,
    cam: &Camera,
    param_mode: ParamMode,
    sh_degree: u8,
    mode: RenderMode,
) -> Option<SplatFragment> {
    let t = cam.to_camera(&g.position);
    if t.z <= NEAR_PLANE {
        return None;
    }
    let alpha_scale = g.opacity();

    let w: Matrix3<f64> = cam.rotation_matrix();
    let j = projection_jacobian(cam, &t);
    let view_cov = w * g.covariance(param_mode) * w.transpose();
    let mut cov2d = j * view_cov * j.transpose();
    cov2d[(0, 0)] += LOW_PASS;
    cov2d[(1, 1)] += LOW_PASS;
    let sym = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = sym;
    cov2d[(1, 0)] = sym;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - sym * sym;
    if !(det > 0.0) {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -sym, -sym, cov2d[(0, 0)]) / det;

    let mean2d = Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy);
    // alpha >= 1/255 requires d^T conic d <= reach
    let reach = 2.0 * (alpha_scale / ALPHA_MIN).ln();
    let extent = if reach > 0.0 {
        Vector2::new((reach * cov2d[(0, 0)]).sqrt(), (reach * cov2d[(1, 1)]).sqrt())
    } else {
        Vector2::zeros()
    };

    Some(SplatFragment {
        gaussian_index,
        mean2d,
        cov2d,
        conic,
        view_depth: t.z,
        payload: payload_of(g, cam, &t, sh_degree, mode),
        alpha_scale,
        extent,
    })
}

/// Projects every Gaussian of a field, in index order.
pub(crate) fn project_all(
    field: &crate::gaussian::GaussianField,
    cam: &Camera,
    mode: RenderMode,
) -> Vec<SplatFragment> {
    field
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, i, cam, field.param_mode, field.sh_degree, mode))
        .collect()
}

/// Front-to-back order: ascending depth, ties broken by Gaussian index.
pub(crate) fn depth_order(a: &SplatFragment, b: &SplatFragment) -> std::cmp::Ordering {
    a.view_depth
        .total_cmp(&b.view_depth)
        .then(a.gaussian_index.cmp(&b.gaussian_index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn axis_camera() -> Camera {
        Camera::from_pose(Matrix3::identity(), Vector3::zeros(), 100.0, 100.0, 32.0, 32.0, 64, 64)
    }

    #[test]
    fn on_axis_isotropic_gaussian() {
        let cam = axis_camera();
        let mut g = Gaussian3D::new(Vector3::new(0.0, 0.0, 1.0));
        g.scales_log = Vector3::repeat(0.01f64.ln());
        g.opacity_raw = 3.0;
        let f = project(&g, 0, &cam, ParamMode::Isotropic, 0, RenderMode::Rgb).unwrap();
        assert_relative_eq!(f.mean2d, Vector2::new(32.0, 32.0), epsilon = 1e-12);
        // J = diag(100, 100) at z = 1, sigma = 0.01 -> 1 px^2, plus 0.3.
        assert_relative_eq!(f.cov2d, Matrix2::new(1.3, 0.0, 0.0, 1.3), epsilon = 1e-9);
        assert_relative_eq!(f.view_depth, 1.0);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = axis_camera();
        let g = Gaussian3D::new(Vector3::new(0.0, 0.0, -1.0));
        assert!(project(&g, 0, &cam, ParamMode::Unconstrained, 0, RenderMode::Rgb).is_none());
    }

    #[test]
    fn pinhole_offset() {
        let cam = axis_camera();
        let g = Gaussian3D::new(Vector3::new(0.1, 0.0, 1.0));
        let f = project(&g, 0, &cam, ParamMode::Unconstrained, 0, RenderMode::Rgb).unwrap();
        assert_relative_eq!(f.mean2d, Vector2::new(32.0 + 0.1 * 100.0, 32.0), epsilon = 1e-12);
    }

    #[test]
    fn far_outside_frustum_is_culled() {
        let cam = axis_camera();
        let g = Gaussian3D::new(Vector3::new(5.0, 0.0, 1.0));
        assert!(project(&g, 0, &cam, ParamMode::Unconstrained, 0, RenderMode::Rgb).is_none());
    }

    #[test]
    fn faint_gaussian_is_culled() {
        let cam = axis_camera();
        let mut g = Gaussian3D::new(Vector3::new(0.0, 0.0, 1.0));
        g.opacity_raw = -8.0;
        assert!(project(&g, 0, &cam, ParamMode::Unconstrained, 0, RenderMode::Rgb).is_none());
    }
}
