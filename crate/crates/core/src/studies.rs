//! Parameter-instability and rotation-representation studies.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian3D, GaussianField, ParamMode};
use crate::math::{self, SH_C0};
use crate::optimize::{fit, fit_from, random_quaternion, FitConfig, FitResult, INITIAL_OPACITY};
use crate::scene::{nearest_neighbor_distances, Scene};

/// Values of one parameter kind across `m` refits, `n` locations and `c`
/// channels, stored as `values[(i * n + j) * c + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSamples {
    pub m: usize,
    pub n: usize,
    pub c: usize,
    pub values: Vec<f64>,
}

fn population_std(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let (sum, count) = xs.clone().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if count == 0 {
        return 0.0;
    }
    let mean = sum / count as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / count as f64;
    var.sqrt()
}

/// Mean per-(location, channel) population standard deviation across refits,
/// divided by the population standard deviation of all values.
pub fn instability_score(samples: &ParamSamples) -> Result<f64> {
    let ParamSamples { m, n, c, values } = samples;
    let (m, n, c) = (*m, *n, *c);
    if m < 2 {
        return Err(Error::invalid("instability score needs at least two refits"));
    }
    if values.len() != m * n * c || values.is_empty() {
        return Err(Error::Shape {
            expected: format!("{m}x{n}x{c} values"),
            actual: values.len().to_string(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("instability samples"));
    }
    let mut local = 0.0;
    for j in 0..n {
        for k in 0..c {
            local += population_std((0..m).map(|i| values[(i * n + j) * c + k]));
        }
    }
    local /= (n * c) as f64;
    if local == 0.0 {
        return Ok(0.0);
    }
    let global = population_std(values.iter().copied());
    if global < 1e-12 {
        return Err(Error::invalid("local spread without global spread"));
    }
    Ok(local / global)
}

/// Parameter kinds compared by the instability study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Rotation,
    Scale,
    Opacity,
    ShDc,
    ShRest,
}

impl ParamKind {
    pub const ALL: [ParamKind; 5] = [
        ParamKind::Rotation,
        ParamKind::Scale,
        ParamKind::Opacity,
        ParamKind::ShDc,
        ParamKind::ShRest,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ParamKind::Rotation => "rotation",
            ParamKind::Scale => "scale",
            ParamKind::Opacity => "opacity",
            ParamKind::ShDc => "sh_dc",
            ParamKind::ShRest => "sh_rest",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            ParamKind::Rotation => 4,
            ParamKind::Scale | ParamKind::ShDc => 3,
            ParamKind::Opacity => 1,
            ParamKind::ShRest => 9,
        }
    }

    /// Values in the space the renderer consumes: sign-canonical unit
    /// quaternions, linear scales, logistic opacity, raw SH.
    pub fn activated(self, g: &Gaussian3D) -> Vec<f64> {
        match self {
            ParamKind::Rotation => math::quat_canonical(&math::quat_normalize(&g.rotation_raw)).to_vec(),
            ParamKind::Scale => g.scales_log.map(f64::exp).as_slice().to_vec(),
            ParamKind::Opacity => vec![g.opacity()],
            ParamKind::ShDc => g.sh[0].to_vec(),
            ParamKind::ShRest => g.sh[1..].iter().flatten().copied().collect(),
        }
    }

    /// Stored values: raw quaternion, log scales, pre-logistic opacity.
    pub fn raw(self, g: &Gaussian3D) -> Vec<f64> {
        match self {
            ParamKind::Rotation => g.rotation_raw.to_vec(),
            ParamKind::Scale => g.scales_log.as_slice().to_vec(),
            ParamKind::Opacity => vec![g.opacity_raw],
            _ => self.activated(g),
        }
    }

    pub fn samples(self, fields: &[GaussianField], raw: bool) -> ParamSamples {
        let n = fields.first().map_or(0, GaussianField::len);
        let mut values = Vec::with_capacity(fields.len() * n * self.channels());
        for f in fields {
            for g in &f.gaussians {
                values.extend(if raw { self.raw(g) } else { self.activated(g) });
            }
        }
        ParamSamples {
            m: fields.len(),
            n,
            c: self.channels(),
            values,
        }
    }
}

/// One report row: a label and one value per report column.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub scene: String,
    pub seed_set_hash: String,
    /// Names of the value columns between `label` and `scene`.
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl StudyReport {
    pub fn value(&self, label: &str, column: &str) -> Option<f64> {
        let ci = self.columns.iter().position(|c| c == column)?;
        self.rows.iter().find(|r| r.label == label).map(|r| r.values[ci])
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("label,{},scene,seed_set_hash\n", self.columns.join(","));
        for r in &self.rows {
            let vals: Vec<String> = r.values.iter().map(|v| format!("{v:.9}")).collect();
            out.push_str(&format!("{},{},{},{}\n", r.label, vals.join(","), self.scene, self.seed_set_hash));
        }
        out
    }
}

/// Short hex digest identifying a set of seeds and the configuration that
/// produced a report.
pub fn seed_set_hash(seeds: &[u64], config: &FitConfig) -> String {
    let mut h = Sha256::new();
    for s in seeds {
        h.update(s.to_le_bytes());
    }
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Refits every non-position parameter at the locations of `base`, from a
/// seeded random initialization, in unconstrained mode with frozen positions.
pub fn refit_fixed_locations(scene: &Scene, base: &GaussianField, seed: u64, config: &FitConfig) -> Result<FitResult> {
    if base.len() != scene.points.len() {
        return Err(Error::Shape {
            expected: format!("{} Gaussians", scene.points.len()),
            actual: base.len().to_string(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<Vector3<f64>> = base.gaussians.iter().map(|g| g.position).collect();
    let nn = nearest_neighbor_distances(&positions);
    let gaussians = base
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut g = Gaussian3D::new(b.position);
            g.rotation_raw = random_quaternion(&mut rng);
            let s0 = (nn[i].max(1e-6) / 2.0).ln();
            g.scales_log = Vector3::from_fn(|_, _| s0 + rng.random_range(-0.3..0.3));
            g.opacity_raw = math::logit(INITIAL_OPACITY) + rng.random_range(-0.5..0.5);
            for c in 0..3 {
                let color = scene.colors.as_ref().map_or(0.5, |cs| cs[i][c]);
                g.sh[0][c] = (color - 0.5) / SH_C0 + rng.random_range(-0.3..0.3);
                for k in 1..4 {
                    g.sh[k][c] = rng.random_range(-0.05..0.05);
                }
            }
            g.normal_raw = b.normal_raw;
            g
        })
        .collect();
    let init = GaussianField::new(gaussians, ParamMode::Unconstrained, 0);
    let mut cfg = config.clone();
    cfg.param_mode = ParamMode::Unconstrained;
    cfg.freeze_positions = true;
    cfg.seed = seed;
    fit_from(scene, &cfg, init)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstabilityConfig {
    pub seeds: Vec<u64>,
    /// Configuration of the base fit and of every refit.
    pub fit: FitConfig,
}

impl InstabilityConfig {
    pub fn new(trials: usize, iterations: usize, seed: u64) -> Self {
        Self {
            seeds: (0..trials as u64).map(|i| seed.wrapping_mul(1000).wrapping_add(i + 1)).collect(),
            fit: FitConfig::new(ParamMode::Unconstrained, iterations),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.len() < 2 {
            return Err(Error::invalid("the instability study needs at least two refits"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::invalid("refit seeds must be distinct"));
        }
        self.fit.validate()
    }
}

/// Outcome of the instability study: the report plus the fits behind it.
#[derive(Debug, Clone)]
pub struct InstabilityStudy {
    pub report: StudyReport,
    pub base: FitResult,
    pub refits: Vec<FitResult>,
}

/// Fits a base field, refits it at fixed locations once per seed, and
/// reports the instability score of every parameter kind. Columns: `value`
/// (activated space) and `raw_value` (stored space).
pub fn run_instability_study(scene: &Scene, config: &InstabilityConfig) -> Result<InstabilityStudy> {
    config.validate()?;
    scene.validate()?;
    let mut base_cfg = config.fit.clone();
    base_cfg.param_mode = ParamMode::Unconstrained;
    let base = fit(scene, &base_cfg)?;
    let refits: Vec<FitResult> = config
        .seeds
        .par_iter()
        .map(|s| refit_fixed_locations(scene, &base.field, *s, &config.fit))
        .collect::<Result<_>>()?;
    let fields: Vec<GaussianField> = refits.iter().map(|r| r.field.clone()).collect();
    let rows = ParamKind::ALL
        .iter()
        .map(|kind| {
            Ok(ReportRow {
                label: kind.label().to_string(),
                values: vec![
                    instability_score(&kind.samples(&fields, false))?,
                    instability_score(&kind.samples(&fields, true))?,
                ],
            })
        })
        .collect::<Result<_>>()?;
    Ok(InstabilityStudy {
        report: StudyReport {
            scene: scene.id.clone(),
            seed_set_hash: seed_set_hash(&config.seeds, &config.fit),
            columns: vec!["value".into(), "raw_value".into()],
            rows,
        },
        base,
        refits,
    })
}

/// Published reference PSNR of each mode on real scenes, in dB.
pub fn reference_psnr(mode: ParamMode) -> f64 {
    match mode {
        ParamMode::Unconstrained => 29.16,
        ParamMode::Isotropic => 26.30,
        ParamMode::NormalGuided => 28.70,
    }
}

#[derive(Debug, Clone)]
pub struct RotationStudy {
    /// Rows per mode with columns `psnr`, `ssim`, `reference_psnr`.
    pub report: StudyReport,
    pub fits: Vec<(ParamMode, FitResult)>,
}

impl RotationStudy {
    pub fn psnr(&self, mode: ParamMode) -> f64 {
        self.report.value(mode.as_str(), "psnr").expect("every mode is reported")
    }

    /// `PSNR(U) >= PSNR(NG) > PSNR(I)`.
    pub fn ordering_holds(&self) -> bool {
        let (u, i, n) = (
            self.psnr(ParamMode::Unconstrained),
            self.psnr(ParamMode::Isotropic),
            self.psnr(ParamMode::NormalGuided),
        );
        u >= n && n > i
    }

    /// The normal-guided drop is at most half of the isotropic drop.
    pub fn gap_holds(&self) -> bool {
        let (u, i, n) = (
            self.psnr(ParamMode::Unconstrained),
            self.psnr(ParamMode::Isotropic),
            self.psnr(ParamMode::NormalGuided),
        );
        u - n <= 0.5 * (u - i)
    }
}

/// Fits the scene once per rotation parameterization with the same
/// locations, initialization seed and budget, and evaluates each on the
/// held-out views.
pub fn run_rotation_study(scene: &Scene, config: &FitConfig) -> Result<RotationStudy> {
    scene.validate()?;
    if config.holdout_every < 2 {
        return Err(Error::invalid("the rotation study needs held-out views"));
    }
    let fits: Vec<(ParamMode, FitResult)> = ParamMode::ALL
        .par_iter()
        .map(|mode| {
            let mut cfg = config.clone();
            cfg.param_mode = *mode;
            cfg.freeze_positions = true;
            fit(scene, &cfg).map(|r| (*mode, r))
        })
        .collect::<Result<_>>()?;
    let rows = fits
        .iter()
        .map(|(mode, r)| ReportRow {
            label: mode.as_str().to_string(),
            values: vec![r.eval.psnr, r.eval.ssim, reference_psnr(*mode)],
        })
        .collect();
    Ok(RotationStudy {
        report: StudyReport {
            scene: scene.id.clone(),
            seed_set_hash: seed_set_hash(&[config.seed], config),
            columns: vec!["psnr".into(), "ssim".into(), "reference_psnr".into()],
            rows,
        },
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn samples(m: usize, n: usize, c: usize, values: Vec<f64>) -> ParamSamples {
        ParamSamples { m, n, c, values }
    }

    #[test]
    fn identical_refits_score_zero() {
        let v = vec![1.0, 5.0, -2.0, 1.0, 5.0, -2.0];
        assert_eq!(instability_score(&samples(2, 3, 1, v)).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_examples() {
        assert_relative_eq!(instability_score(&samples(2, 1, 1, vec![1.0, 3.0])).unwrap(), 1.0);
        // refit-major layout: refit 0 = (0, 10), refit 1 = (2, 12)
        let s = instability_score(&samples(2, 2, 1, vec![0.0, 10.0, 2.0, 12.0])).unwrap();
        assert_relative_eq!(s, 1.0 / 26f64.sqrt(), epsilon = 1e-12);
        assert!((s - 0.19612).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(instability_score(&samples(1, 2, 1, vec![0.0, 1.0])).is_err());
        assert!(instability_score(&samples(2, 1, 1, vec![0.0, f64::NAN])).is_err());
        assert!(instability_score(&samples(2, 2, 1, vec![0.0, 1.0])).is_err());
    }

    #[test]
    fn all_equal_input_scores_zero() {
        assert_eq!(instability_score(&samples(3, 2, 2, vec![4.0; 12])).unwrap(), 0.0);
    }

    #[test]
    fn canonical_rotation_samples_ignore_quaternion_sign() {
        let mut a = Gaussian3D::new(Vector3::zeros());
        a.rotation_raw = [0.5, 0.5, -0.5, 0.5];
        let mut b = a.clone();
        b.rotation_raw = [-0.5, -0.5, 0.5, -0.5];
        let fields = vec![
            GaussianField::new(vec![a], ParamMode::Unconstrained, 0),
            GaussianField::new(vec![b], ParamMode::Unconstrained, 0),
        ];
        let s = ParamKind::Rotation.samples(&fields, false);
        assert_eq!(instability_score(&s).unwrap(), 0.0);
        assert!(instability_score(&ParamKind::Rotation.samples(&fields, true)).unwrap() > 0.0);
    }

    #[test]
    fn report_csv_schema() {
        let r = StudyReport {
            scene: "s".into(),
            seed_set_hash: "abc".into(),
            columns: vec!["value".into()],
            rows: vec![ReportRow {
                label: "x".into(),
                values: vec![0.5],
            }],
        };
        assert_eq!(r.to_csv(), "label,value,scene,seed_set_hash\nx,0.500000000,s,abc\n");
        assert_eq!(r.value("x", "value"), Some(0.5));
    }

    #[test]
    fn seed_hash_depends_on_seeds() {
        let cfg = FitConfig::new(ParamMode::Unconstrained, 10);
        assert_ne!(seed_set_hash(&[1, 2], &cfg), seed_set_hash(&[1, 3], &cfg));
        assert_eq!(seed_set_hash(&[1, 2], &cfg), seed_set_hash(&[1, 2], &cfg));
    }
}
