//! Differentiable CPU Gaussian splatting with normal-guided rotations.

pub mod buffer;
pub mod camera;
pub mod cli;
pub mod error;
pub mod gaussian;
pub mod gradcheck;
pub mod io;
pub mod math;
pub mod optimize;
pub mod raster;
pub mod scene;
pub mod studies;
pub mod triplane;

pub use buffer::{Image, Rect};
pub use camera::{Camera, CameraRig};
pub use error::{Error, Result};
pub use gaussian::{FieldGrad, Gaussian3D, GaussianField, ParamGroup, ParamMode};
pub use raster::{oracle_render, render, render_backward, RenderMode, RenderOutput};
