use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::project::{projection_jacobian, view_direction};
use super::tiled::{Contribution, Splats};
use super::RenderMode;
use crate::buffer::Image;
use crate::camera::Camera;
use crate::gaussian::{layout, FieldGrad, GaussianField, ParamMode};
use crate::math;

/// Loss gradient with respect to one fragment's screen-space quantities.
#[derive(Debug, Clone, Copy, Default)]
struct FragmentGrad {
    mean2d: Vector2<f64>,
    /// `dL/dcov2d` as a symmetric matrix: `(xx, xy, yy)`.
    cov2d: [f64; 3],
    alpha_scale: f64,
    payload: Vector3<f64>,
}

impl FragmentGrad {
    fn add(&mut self, o: &FragmentGrad) {
        self.mean2d += o.mean2d;
        self.cov2d[0] += o.cov2d[0];
        self.cov2d[1] += o.cov2d[1];
        self.cov2d[2] += o.cov2d[2];
        self.alpha_scale += o.alpha_scale;
        self.payload += o.payload;
    }
}

impl Splats {
    /// Gradient of `sum(upstream * payload)` for the forward pass these
    /// splats produce, mapped back onto the stored parameters of `field`.
    ///
    /// `field` and `cam` must be the ones passed to [`Splats::prepare`].
    pub fn backward(
        &self,
        field: &GaussianField,
        cam: &Camera,
        background: Vector3<f64>,
        upstream: &Image,
    ) -> FieldGrad {
        assert_eq!((upstream.width, upstream.height), (self.width, self.height));
        let bg = if self.mode == RenderMode::Rgb {
            background
        } else {
            Vector3::zeros()
        };

        let per_tile: Vec<Vec<FragmentGrad>> = self
            .tiles
            .par_iter()
            .enumerate()
            .map(|(tile, list)| self.backward_tile(tile, list, &bg, upstream))
            .collect();

        // Fixed tile order keeps the reduction independent of thread count.
        let mut screen = vec![FragmentGrad::default(); self.fragments.len()];
        for (list, grads) in self.tiles.iter().zip(per_tile.iter()) {
            for (&id, g) in list.iter().zip(grads.iter()) {
                screen[id as usize].add(g);
            }
        }

        let per_fragment: Vec<(usize, [f64; layout::LEN])> = self
            .fragments
            .par_iter()
            .zip(screen.par_iter())
            .map(|(f, g)| (f.gaussian_index, self.chain_to_params(field, cam, f.gaussian_index, g)))
            .collect();

        let mut grad = FieldGrad::zeros(field.len());
        for (i, g) in per_fragment {
            grad.gaussian_mut(i).copy_from_slice(&g);
        }
        grad
    }

    fn backward_tile(
        &self,
        tile: usize,
        list: &[u32],
        bg: &Vector3<f64>,
        upstream: &Image,
    ) -> Vec<FragmentGrad> {
        let mut acc = vec![FragmentGrad::default(); list.len()];
        if list.is_empty() {
            return acc;
        }
        let (x0, x1, y0, y1) = self.tile_rect(tile);
        let mut contribs: Vec<Contribution> = Vec::with_capacity(list.len());
        for y in y0..y1 {
            for x in x0..x1 {
                let up = upstream.get(x, y);
                if up == Vector3::zeros() {
                    continue;
                }
                contribs.clear();
                let t_final = self.walk(list, x, y, |c| contribs.push(c));
                // Everything composited behind the current fragment.
                let mut behind = bg * t_final;
                for c in contribs.iter().rev() {
                    let f = &self.fragments[c.fragment as usize];
                    let g = &mut acc[c.slot as usize];
                    let w = c.alpha * c.transmittance;
                    g.payload += up * w;
                    let d_alpha = up.dot(&(f.payload * c.transmittance - behind / (1.0 - c.alpha)));
                    behind += f.payload * w;
                    if c.capped {
                        continue;
                    }
                    let gauss = c.alpha / f.alpha_scale;
                    g.alpha_scale += d_alpha * gauss;
                    // d alpha / d mean = alpha * conic * offset
                    let u = f.conic * c.offset;
                    let s = d_alpha * c.alpha;
                    g.mean2d += u * s;
                    g.cov2d[0] += 0.5 * s * u.x * u.x;
                    g.cov2d[1] += 0.5 * s * u.x * u.y;
                    g.cov2d[2] += 0.5 * s * u.y * u.y;
                }
            }
        }
        acc
    }

    fn chain_to_params(
        &self,
        field: &GaussianField,
        cam: &Camera,
        index: usize,
        sg: &FragmentGrad,
    ) -> [f64; layout::LEN] {
        let g = &field.gaussians[index];
        let mode = field.param_mode;
        let mut out = [0.0; layout::LEN];

        let w = cam.rotation_matrix();
        let t = cam.to_camera(&g.position);
        let rot = g.rotation(mode);
        let scales = g.scales(mode);
        let sigma = math::covariance_from(&rot, &scales);
        let view_cov = w * sigma * w.transpose();
        let j = projection_jacobian(cam, &t);
        let iz = 1.0 / t.z;

        let mut d_t = Vector3::zeros();
        d_t.x += sg.mean2d.x * cam.fx * iz;
        d_t.y += sg.mean2d.y * cam.fy * iz;
        d_t.z += -(sg.mean2d.x * cam.fx * t.x + sg.mean2d.y * cam.fy * t.y) * iz * iz;

        let g2 = Matrix2::new(sg.cov2d[0], sg.cov2d[1], sg.cov2d[1], sg.cov2d[2]);
        let d_view_cov = j.transpose() * g2 * j;
        let d_j = g2 * j * view_cov * 2.0;
        d_t.x += d_j[(0, 2)] * (-cam.fx * iz * iz);
        d_t.y += d_j[(1, 2)] * (-cam.fy * iz * iz);
        d_t.z += d_j[(0, 0)] * (-cam.fx * iz * iz)
            + d_j[(0, 2)] * (2.0 * cam.fx * t.x * iz * iz * iz)
            + d_j[(1, 1)] * (-cam.fy * iz * iz)
            + d_j[(1, 2)] * (2.0 * cam.fy * t.y * iz * iz * iz);

        let d_sigma: Matrix3<f64> = w.transpose() * d_view_cov * w;
        let (d_rot, d_scales) = math::covariance_backward(&rot, &scales, &d_sigma);

        let mut d_normal_raw = Vector3::zeros();
        match mode {
            ParamMode::Unconstrained => {
                let dq = math::quat_to_matrix_backward(&g.rotation_raw, &d_rot);
                out[layout::ROTATION].copy_from_slice(&dq);
            }
            ParamMode::Isotropic => {}
            ParamMode::NormalGuided => {
                let n = g.normal();
                let dn = math::normal_to_rotation_backward(&n, &d_rot);
                d_normal_raw += math::normalize_or_up_backward(&g.normal_raw, &dn);
            }
        }
        match mode {
            ParamMode::Isotropic => {
                let shared = d_scales.dot(&scales) / 3.0;
                out[layout::SCALES].fill(shared);
            }
            _ => {
                let d_log = d_scales.component_mul(&scales);
                out[layout::SCALES].copy_from_slice(d_log.as_slice());
            }
        }

        let a = sg.alpha_scale;
        let opacity = g.opacity();
        out[layout::OPACITY] = a * opacity * (1.0 - opacity);

        let mut d_pos = Vector3::zeros();
        match self.mode {
            RenderMode::Rgb => {
                let dir = view_direction(cam, &g.position);
                let (d_sh, d_dir) = math::sh_backward(&g.sh, &dir, field.sh_degree, &sg.payload);
                out[layout::SH_DC].copy_from_slice(&d_sh[0]);
                for k in 1..4 {
                    let base = layout::SH_REST.start + (k - 1) * 3;
                    out[base..base + 3].copy_from_slice(&d_sh[k]);
                }
                let dist = (g.position - cam.center()).norm();
                d_pos += (d_dir - dir * dir.dot(&d_dir)) / dist;
            }
            RenderMode::Normal => {
                d_normal_raw += math::normalize_or_up_backward(&g.normal_raw, &sg.payload);
            }
            RenderMode::Depth => {
                d_t.z += sg.payload.sum();
            }
        }

        d_pos += w.transpose() * d_t;
        out[layout::POSITION].copy_from_slice(d_pos.as_slice());
        out[layout::NORMAL].copy_from_slice(d_normal_raw.as_slice());
        out
    }
}
