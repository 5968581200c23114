//! CPU splatting: EWA projection, tiled front-to-back compositing, the
//! analytic backward pass, and a brute-force per-pixel reference renderer.

mod backward;
mod oracle;
mod project;
mod replay;
mod tiled;

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::buffer::Image;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{FieldGrad, GaussianField};

pub use oracle::oracle_render;
pub use project::{project, SplatFragment};
pub use replay::render_on_branch;
pub use tiled::{Branch, Splats};

pub const TILE_SIZE: usize = 16;
pub const ALPHA_CAP: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Screen-space dilation added to every projected covariance, in px^2.
pub const LOW_PASS: f64 = 0.3;
pub const NEAR_PLANE: f64 = 0.01;

/// What each Gaussian contributes to the composited image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RenderMode {
    Rgb,
    /// World-frame normals, composited without renormalization.
    Normal,
    /// Camera-space z, replicated across the three channels.
    Depth,
}

impl RenderMode {
    pub const ALL: [RenderMode; 3] = [RenderMode::Rgb, RenderMode::Normal, RenderMode::Depth];

    pub fn as_str(self) -> &'static str {
        match self {
            RenderMode::Rgb => "rgb",
            RenderMode::Normal => "normal",
            RenderMode::Depth => "depth",
        }
    }
}

impl fmt::Display for RenderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(RenderMode::Rgb),
            "normal" => Ok(RenderMode::Normal),
            "depth" => Ok(RenderMode::Depth),
            other => Err(Error::Unknown {
                kind: "render mode",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub payload: Image,
    /// Accumulated opacity, `1 - T_final`.
    pub alpha: Vec<f64>,
    /// Expected camera-space depth.
    pub depth: Vec<f64>,
    /// Transmittance left after the last contributing fragment.
    pub transmittance: Vec<f64>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.payload.width
    }

    pub fn height(&self) -> usize {
        self.payload.height
    }
}

/// Renders `field` from `cam`. The background only applies in RGB mode.
pub fn render(
    field: &GaussianField,
    cam: &Camera,
    mode: RenderMode,
    background: Vector3<f64>,
) -> RenderOutput {
    Splats::prepare(field, cam, mode).forward(background)
}

/// Gradient of `sum(upstream * render(field, cam, mode, background).payload)`
/// with respect to every stored parameter of `field`.
pub fn render_backward(
    field: &GaussianField,
    cam: &Camera,
    mode: RenderMode,
    background: Vector3<f64>,
    upstream: &Image,
) -> FieldGrad {
    Splats::prepare(field, cam, mode).backward(field, cam, background, upstream)
}
