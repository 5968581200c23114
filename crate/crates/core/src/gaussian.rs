use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, ShCoeffs};

/// How a Gaussian's rotation and scales are derived from its stored parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamMode {
    /// Free quaternion, three independent scales.
    Unconstrained,
    /// Identity rotation, one shared scale.
    Isotropic,
    /// Rotation derived from the normal, three independent scales.
    NormalGuided,
}

impl ParamMode {
    pub const ALL: [ParamMode; 3] = [
        ParamMode::Unconstrained,
        ParamMode::Isotropic,
        ParamMode::NormalGuided,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamMode::Unconstrained => "unconstrained",
            ParamMode::Isotropic => "isotropic",
            ParamMode::NormalGuided => "normal-guided",
        }
    }
}

impl fmt::Display for ParamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconstrained" => Ok(ParamMode::Unconstrained),
            "isotropic" => Ok(ParamMode::Isotropic),
            "normal-guided" | "normal_guided" | "normalguided" => Ok(ParamMode::NormalGuided),
            other => Err(Error::Unknown {
                kind: "parameter mode",
                value: other.to_string(),
            }),
        }
    }
}

/// One 3D Gaussian in stored (raw) form.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub position: Vector3<f64>,
    /// `(w, x, y, z)`, possibly unnormalized.
    pub rotation_raw: [f64; 4],
    pub scales_log: Vector3<f64>,
    pub opacity_raw: f64,
    pub sh: ShCoeffs,
    pub normal_raw: Vector3<f64>,
}

impl Gaussian3D {
    pub fn new(position: Vector3<f64>) -> Self {
        Self {
            position,
            rotation_raw: [1.0, 0.0, 0.0, 0.0],
            scales_log: Vector3::repeat(-3.0),
            opacity_raw: 0.0,
            sh: [[0.0; 3]; 4],
            normal_raw: Vector3::z(),
        }
    }

    pub fn opacity(&self) -> f64 {
        math::sigmoid(self.opacity_raw)
    }

    pub fn normal(&self) -> Vector3<f64> {
        math::normalize_or_up(&self.normal_raw)
    }

    pub fn rotation(&self, mode: ParamMode) -> Matrix3<f64> {
        match mode {
            ParamMode::Unconstrained => math::quat_to_matrix(&self.rotation_raw),
            ParamMode::Isotropic => Matrix3::identity(),
            ParamMode::NormalGuided => math::normal_to_rotation(&self.normal()),
        }
    }

    /// Per-axis standard deviations. Isotropic mode uses the exponentiated
    /// mean of the three log-scales on every axis.
    pub fn scales(&self, mode: ParamMode) -> Vector3<f64> {
        match mode {
            ParamMode::Isotropic => Vector3::repeat(self.isotropic_log_scale().exp()),
            _ => self.scales_log.map(f64::exp),
        }
    }

    fn isotropic_log_scale(&self) -> f64 {
        (self.scales_log.x + self.scales_log.y + self.scales_log.z) / 3.0
    }

    pub fn covariance(&self, mode: ParamMode) -> Matrix3<f64> {
        math::covariance_from(&self.rotation(mode), &self.scales(mode))
    }
}

/// Index ranges of one Gaussian's parameters inside its flat layout.
pub mod layout {
    use std::ops::Range;

    pub const POSITION: Range<usize> = 0..3;
    pub const ROTATION: Range<usize> = 3..7;
    pub const SCALES: Range<usize> = 7..10;
    pub const OPACITY: usize = 10;
    pub const SH_DC: Range<usize> = 11..14;
    pub const SH_REST: Range<usize> = 14..23;
    pub const NORMAL: Range<usize> = 23..26;
    pub const LEN: usize = 26;
}

/// Parameter groups, each with its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Position,
    Rotation,
    Scale,
    Opacity,
    ShDc,
    ShRest,
    Normal,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::Position,
        ParamGroup::Rotation,
        ParamGroup::Scale,
        ParamGroup::Opacity,
        ParamGroup::ShDc,
        ParamGroup::ShRest,
        ParamGroup::Normal,
    ];

    pub fn of_offset(offset: usize) -> ParamGroup {
        use layout::*;
        match offset {
            o if POSITION.contains(&o) => ParamGroup::Position,
            o if ROTATION.contains(&o) => ParamGroup::Rotation,
            o if SCALES.contains(&o) => ParamGroup::Scale,
            OPACITY => ParamGroup::Opacity,
            o if SH_DC.contains(&o) => ParamGroup::ShDc,
            o if SH_REST.contains(&o) => ParamGroup::ShRest,
            _ => ParamGroup::Normal,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Position => "position",
            ParamGroup::Rotation => "rotation",
            ParamGroup::Scale => "scale",
            ParamGroup::Opacity => "opacity",
            ParamGroup::ShDc => "sh_dc",
            ParamGroup::ShRest => "sh_rest",
            ParamGroup::Normal => "normal",
        }
    }
}

impl Gaussian3D {
    pub fn write_flat(&self, out: &mut [f64]) {
        use layout::*;
        out[POSITION].copy_from_slice(self.position.as_slice());
        out[ROTATION].copy_from_slice(&self.rotation_raw);
        out[SCALES].copy_from_slice(self.scales_log.as_slice());
        out[OPACITY] = self.opacity_raw;
        out[SH_DC].copy_from_slice(&self.sh[0]);
        for k in 1..4 {
            let base = SH_REST.start + (k - 1) * 3;
            out[base..base + 3].copy_from_slice(&self.sh[k]);
        }
        out[NORMAL].copy_from_slice(self.normal_raw.as_slice());
    }

    pub fn read_flat(flat: &[f64]) -> Self {
        use layout::*;
        let v3 = |r: std::ops::Range<usize>| Vector3::new(flat[r.start], flat[r.start + 1], flat[r.start + 2]);
        let mut sh = [[0.0; 3]; 4];
        sh[0].copy_from_slice(&flat[SH_DC]);
        for (k, coeffs) in sh.iter_mut().enumerate().skip(1) {
            let base = SH_REST.start + (k - 1) * 3;
            coeffs.copy_from_slice(&flat[base..base + 3]);
        }
        Self {
            position: v3(POSITION),
            rotation_raw: [flat[3], flat[4], flat[5], flat[6]],
            scales_log: v3(SCALES),
            opacity_raw: flat[OPACITY],
            sh,
            normal_raw: v3(NORMAL),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    pub gaussians: Vec<Gaussian3D>,
    pub param_mode: ParamMode,
    /// Active spherical-harmonic degree, 0 or 1.
    pub sh_degree: u8,
}

impl GaussianField {
    pub fn new(gaussians: Vec<Gaussian3D>, param_mode: ParamMode, sh_degree: u8) -> Self {
        Self {
            gaussians,
            param_mode,
            sh_degree: sh_degree.min(1),
        }
    }

    pub fn empty(param_mode: ParamMode) -> Self {
        Self::new(Vec::new(), param_mode, 0)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = vec![0.0; self.len() * layout::LEN];
        for (g, chunk) in self.gaussians.iter().zip(flat.chunks_mut(layout::LEN)) {
            g.write_flat(chunk);
        }
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len() * layout::LEN);
        for (g, chunk) in self.gaussians.iter_mut().zip(flat.chunks(layout::LEN)) {
            *g = Gaussian3D::read_flat(chunk);
        }
    }

    /// Checks the finite-ness and mode invariants of every Gaussian.
    pub fn validate(&self) -> Result<()> {
        for g in &self.gaussians {
            let mut flat = [0.0; layout::LEN];
            g.write_flat(&mut flat);
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("gaussian parameters"));
            }
            if self.param_mode == ParamMode::Isotropic
                && (g.scales_log.x != g.scales_log.y || g.scales_log.y != g.scales_log.z)
            {
                return Err(Error::invalid("isotropic field with unequal per-axis scales"));
            }
        }
        Ok(())
    }
}

/// Gradient with respect to every stored parameter of a field, in the same
/// flat layout as [`GaussianField::to_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad {
    pub flat: Vec<f64>,
}

impl FieldGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            flat: vec![0.0; n * layout::LEN],
        }
    }

    pub fn gaussian(&self, i: usize) -> &[f64] {
        &self.flat[i * layout::LEN..(i + 1) * layout::LEN]
    }

    pub fn gaussian_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.flat[i * layout::LEN..(i + 1) * layout::LEN]
    }

    pub fn max_abs(&self) -> f64 {
        self.flat.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
