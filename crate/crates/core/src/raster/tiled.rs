use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::project::{depth_order, project_all, SplatFragment};
use super::{RenderMode, RenderOutput, ALPHA_CAP, ALPHA_MIN, TILE_SIZE, TRANSMITTANCE_MIN};
use crate::buffer::Image;
use crate::camera::Camera;
use crate::gaussian::GaussianField;

/// One fragment's contribution at one pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    /// Index into [`Splats::fragments`].
    pub fragment: u32,
    /// Position within the tile's fragment list.
    pub slot: u32,
    pub alpha: f64,
    /// Transmittance in front of this fragment.
    pub transmittance: f64,
    /// `true` when `alpha` hit [`ALPHA_CAP`].
    pub capped: bool,
    /// Pixel offset from the splat mean.
    pub offset: Vector2<f64>,
}

/// Per-pixel list of `(gaussian_index, capped)` in compositing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branch {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vec<(u32, bool)>>,
}

/// Projected, depth-sorted and tile-binned fragments of one field/camera pair.
pub struct Splats {
    pub(crate) mode: RenderMode,
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) tiles_x: usize,
    pub(crate) fragments: Vec<SplatFragment>,
    pub(crate) tiles: Vec<Vec<u32>>,
}

struct TileOutput {
    payload: Vec<f64>,
    depth: Vec<f64>,
    transmittance: Vec<f64>,
}

impl Splats {
    pub fn prepare(field: &GaussianField, cam: &Camera, mode: RenderMode) -> Self {
        let mut fragments = project_all(field, cam, mode);
        fragments.sort_by(depth_order);

        let tiles_x = cam.width.div_ceil(TILE_SIZE);
        let tiles_y = cam.height.div_ceil(TILE_SIZE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (id, f) in fragments.iter().enumerate() {
            let Some((x0, x1, y0, y1)) = pixel_bounds(f, cam.width, cam.height) else {
                continue;
            };
            for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                    tiles[ty * tiles_x + tx].push(id as u32);
                }
            }
        }
        Self {
            mode,
            width: cam.width,
            height: cam.height,
            tiles_x,
            fragments,
            tiles,
        }
    }

    pub fn fragments(&self) -> &[SplatFragment] {
        &self.fragments
    }

    pub fn mode(&self) -> RenderMode {
        self.mode
    }

    pub(crate) fn tile_rect(&self, tile: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, (x0 + TILE_SIZE).min(self.width), y0, (y0 + TILE_SIZE).min(self.height))
    }

    /// Walks the front-to-back list at pixel `(x, y)`, calling `visit` for each
    /// contributing fragment; returns the final transmittance.
    #[inline]
    pub(crate) fn walk(
        &self,
        list: &[u32],
        x: usize,
        y: usize,
        mut visit: impl FnMut(Contribution),
    ) -> f64 {
        let pix = Vector2::new(x as f64, y as f64);
        let mut t = 1.0;
        for (slot, &id) in list.iter().enumerate() {
            let f = &self.fragments[id as usize];
            let d = pix - f.mean2d;
            let power = -0.5
                * (f.conic[(0, 0)] * d.x * d.x
                    + 2.0 * f.conic[(0, 1)] * d.x * d.y
                    + f.conic[(1, 1)] * d.y * d.y);
            let raw = f.alpha_scale * power.exp();
            let capped = raw > ALPHA_CAP;
            let alpha = if capped { ALPHA_CAP } else { raw };
            if alpha < ALPHA_MIN {
                continue;
            }
            let next = t * (1.0 - alpha);
            if next < TRANSMITTANCE_MIN {
                break;
            }
            visit(Contribution {
                fragment: id,
                slot: slot as u32,
                alpha,
                transmittance: t,
                capped,
                offset: d,
            });
            t = next;
        }
        t
    }

    /// The compositing branch taken at every pixel: which Gaussians
    /// contribute, in order, and whether each hit the alpha cap.
    pub fn branch(&self) -> Branch {
        let mut pixels = vec![Vec::new(); self.width * self.height];
        for (tile, list) in self.tiles.iter().enumerate() {
            let (x0, x1, y0, y1) = self.tile_rect(tile);
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = &mut pixels[y * self.width + x];
                    self.walk(list, x, y, |c| {
                        px.push((self.fragments[c.fragment as usize].gaussian_index as u32, c.capped));
                    });
                }
            }
        }
        Branch {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub fn forward(&self, background: Vector3<f64>) -> RenderOutput {
        let bg = if self.mode == RenderMode::Rgb {
            background
        } else {
            Vector3::zeros()
        };
        let outputs: Vec<TileOutput> = self
            .tiles
            .par_iter()
            .enumerate()
            .map(|(tile, list)| self.forward_tile(tile, list, &bg))
            .collect();

        let mut payload = Image::new(self.width, self.height);
        let mut depth = vec![0.0; self.width * self.height];
        let mut transmittance = vec![1.0; self.width * self.height];
        for (tile, out) in outputs.iter().enumerate() {
            let (x0, x1, y0, y1) = self.tile_rect(tile);
            let tw = x1 - x0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let k = (y - y0) * tw + (x - x0);
                    let p = y * self.width + x;
                    payload.data[p * 3..p * 3 + 3].copy_from_slice(&out.payload[k * 3..k * 3 + 3]);
                    depth[p] = out.depth[k];
                    transmittance[p] = out.transmittance[k];
                }
            }
        }
        let alpha = transmittance.iter().map(|t| 1.0 - t).collect();
        RenderOutput {
            payload,
            alpha,
            depth,
            transmittance,
        }
    }

    fn forward_tile(&self, tile: usize, list: &[u32], bg: &Vector3<f64>) -> TileOutput {
        let (x0, x1, y0, y1) = self.tile_rect(tile);
        let n = (x1 - x0) * (y1 - y0);
        let mut out = TileOutput {
            payload: vec![0.0; n * 3],
            depth: vec![0.0; n],
            transmittance: vec![1.0; n],
        };
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let mut acc = Vector3::zeros();
                let mut depth = 0.0;
                let t = self.walk(list, x, y, |c| {
                    let f = &self.fragments[c.fragment as usize];
                    let w = c.alpha * c.transmittance;
                    acc += f.payload * w;
                    depth += f.view_depth * w;
                });
                acc += bg * t;
                out.payload[k * 3..k * 3 + 3].copy_from_slice(acc.as_slice());
                out.depth[k] = depth;
                out.transmittance[k] = t;
                k += 1;
            }
        }
        out
    }
}

/// Inclusive pixel range a fragment can touch, clipped to the image.
fn pixel_bounds(f: &SplatFragment, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    const SLACK: f64 = 1e-6;
    let lo_x = (f.mean2d.x - f.extent.x - SLACK).ceil().max(0.0);
    let hi_x = (f.mean2d.x + f.extent.x + SLACK).floor().min((width - 1) as f64);
    let lo_y = (f.mean2d.y - f.extent.y - SLACK).ceil().max(0.0);
    let hi_y = (f.mean2d.y + f.extent.y + SLACK).floor().min((height - 1) as f64);
    if lo_x > hi_x || lo_y > hi_y {
        return None;
    }
    Some((lo_x as usize, hi_x as usize, lo_y as usize, hi_y as usize))
}
