use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState, LearningRates};
use super::loss::{photometric_loss, psnr, psnr_from_mse, ssim_value};
use crate::buffer::Image;
use crate::error::{Error, Result};
use crate::gaussian::{layout, Gaussian3D, GaussianField, ParamGroup, ParamMode};
use crate::math::{self, SH_C0};
use crate::raster::{render, RenderMode, Splats};
use crate::scene::{nearest_neighbor_distances, Scene};

/// Opacity every fit starts from.
pub const INITIAL_OPACITY: f64 = 0.1;

/// Starting opacity of the auxiliary field fitted to normal maps.
pub const NORMAL_STAGE_OPACITY: f64 = 0.5;

/// The normal-stage learning rate decays exponentially to this fraction of
/// its initial value.
pub const NORMAL_LR_FINAL_RATIO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub param_mode: ParamMode,
    /// Photometric iterations (stage B in normal-guided mode).
    pub iterations: usize,
    /// Normal-map iterations of the auxiliary field; normal-guided mode only.
    pub normal_iterations: usize,
    pub learning_rates: LearningRates,
    /// Weight of the `1 - SSIM` term.
    pub ssim_weight: f64,
    /// Iteration at which the active SH degree goes from 0 to 1.
    pub sh_degree_step: usize,
    pub seed: u64,
    pub freeze_positions: bool,
    /// Every `holdout_every`-th view is reserved for evaluation; 0 trains
    /// and evaluates on all views.
    pub holdout_every: usize,
}

impl FitConfig {
    pub fn new(param_mode: ParamMode, iterations: usize) -> Self {
        Self {
            param_mode,
            iterations,
            normal_iterations: iterations,
            learning_rates: LearningRates::default(),
            ssim_weight: 0.2,
            sh_degree_step: iterations / 2,
            seed: 0,
            freeze_positions: false,
            holdout_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be positive"));
        }
        if self.param_mode == ParamMode::NormalGuided && self.normal_iterations == 0 {
            return Err(Error::invalid("normal-guided fits need normal iterations"));
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return Err(Error::invalid("ssim weight must lie in [0, 1]"));
        }
        let lr = &self.learning_rates;
        let rates = [lr.position, lr.sh, lr.opacity, lr.scales, lr.rotation, lr.normal];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::invalid("learning rates must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Metrics of one optimization step, measured on the view it trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub loss: f64,
    pub psnr: f64,
}

/// Mean metrics over a set of views, measured on their evaluation crops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub views: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub field: GaussianField,
    /// The isotropic normal field of a normal-guided fit.
    pub normal_field: Option<GaussianField>,
    pub metrics: Vec<IterationMetrics>,
    pub normal_metrics: Vec<IterationMetrics>,
    /// Mean photometric loss over the training views before and after.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub eval: EvalMetrics,
}

impl FitResult {
    /// CSV rows `iteration,loss,psnr`.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("iteration,loss,psnr\n");
        for m in &self.metrics {
            out.push_str(&format!("{},{:.9},{:.6}\n", m.iteration, m.loss, m.psnr));
        }
        out
    }
}

/// Initial Gaussians at the scene points: isotropic scales of half the
/// nearest-neighbor distance, low opacity, DC color from the point colors,
/// identity rotation, and a random unit normal.
pub fn initial_field(scene: &Scene, param_mode: ParamMode, seed: u64) -> GaussianField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nn = nearest_neighbor_distances(&scene.points);
    let gaussians = scene
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut g = Gaussian3D::new(*p);
            g.scales_log = Vector3::repeat((nn[i].max(1e-6) / 2.0).ln());
            g.opacity_raw = math::logit(INITIAL_OPACITY);
            if let Some(colors) = &scene.colors {
                for c in 0..3 {
                    g.sh[0][c] = (colors[i][c] - 0.5) / SH_C0;
                }
            }
            g.normal_raw = random_unit(&mut rng);
            g
        })
        .collect();
    GaussianField::new(gaussians, param_mode, 0)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Uniformly random rotation as a `(w, x, y, z)` quaternion.
pub(crate) fn random_quaternion(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let q: UnitQuaternion<f64> = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ));
    [q.w, q.i, q.j, q.k]
}

/// Fits a field to `scene` from the default initialization.
pub fn fit(scene: &Scene, config: &FitConfig) -> Result<FitResult> {
    let init = initial_field(scene, config.param_mode, config.seed);
    fit_from(scene, config, init)
}

/// Fits starting from `init`, whose positions must match the scene points
/// one to one.
pub fn fit_from(scene: &Scene, config: &FitConfig, init: GaussianField) -> Result<FitResult> {
    scene.validate()?;
    config.validate()?;
    if init.len() != scene.points.len() {
        return Err(Error::Shape {
            expected: format!("{} Gaussians", scene.points.len()),
            actual: init.len().to_string(),
        });
    }
    let (train, held_out) = scene.split(config.holdout_every);
    if train.is_empty() {
        return Err(Error::invalid("no training views left after the hold-out split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f17);

    let mut field = init;
    field.param_mode = config.param_mode;
    if config.param_mode == ParamMode::Isotropic {
        for g in &mut field.gaussians {
            g.scales_log = Vector3::repeat(g.scales_log.mean());
            g.rotation_raw = [1.0, 0.0, 0.0, 0.0];
        }
    }
    let mut normal_field = None;
    let mut normal_metrics = Vec::new();
    if config.param_mode == ParamMode::NormalGuided {
        let mut aux = field.clone();
        aux.param_mode = ParamMode::Isotropic;
        aux.sh_degree = 0;
        for g in &mut aux.gaussians {
            g.scales_log = Vector3::repeat(g.scales_log.mean());
            g.opacity_raw = math::logit(NORMAL_STAGE_OPACITY);
        }
        normal_metrics = fit_normals(scene, config, &train, &mut aux, &mut rng)?;
        for (g, a) in field.gaussians.iter_mut().zip(&aux.gaussians) {
            g.normal_raw = a.normal_raw;
        }
        normal_field = Some(aux);
    }

    field.sh_degree = 0;
    let initial_loss = mean_loss(scene, &field, &train, config.ssim_weight)?;
    let metrics = fit_rgb(scene, config, &train, &mut field, &mut rng)?;
    let final_loss = mean_loss(scene, &field, &train, config.ssim_weight)?;
    let eval_views = if held_out.is_empty() { &train } else { &held_out };
    let eval = evaluate(scene, &field, eval_views)?;
    Ok(FitResult {
        field,
        normal_field,
        metrics,
        normal_metrics,
        initial_loss,
        final_loss,
        eval,
    })
}

fn trainable_rgb(mode: ParamMode, freeze_positions: bool) -> impl Fn(ParamGroup) -> bool {
    move |g| match g {
        ParamGroup::Position => !freeze_positions,
        ParamGroup::Rotation => mode == ParamMode::Unconstrained,
        ParamGroup::Normal => false,
        _ => true,
    }
}

/// Cycles through `views` in a fresh random order every epoch.
struct ViewSchedule {
    views: Vec<usize>,
    order: Vec<usize>,
    next: usize,
}

impl ViewSchedule {
    fn new(views: &[usize]) -> Self {
        Self {
            views: views.to_vec(),
            order: Vec::new(),
            next: 0,
        }
    }

    fn pick(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.next == self.order.len() {
            self.order = self.views.clone();
            self.order.shuffle(rng);
            self.next = 0;
        }
        self.next += 1;
        self.order[self.next - 1]
    }
}

fn fit_rgb(
    scene: &Scene,
    config: &FitConfig,
    train: &[usize],
    field: &mut GaussianField,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<IterationMetrics>> {
    let lr_all = config
        .learning_rates
        .expand(field.len(), trainable_rgb(config.param_mode, config.freeze_positions));
    let lr_dc_only: Vec<f64> = lr_all
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let group = ParamGroup::of_offset(i % crate::gaussian::layout::LEN);
            if group == ParamGroup::ShRest {
                0.0
            } else {
                *r
            }
        })
        .collect();
    let mut state = AdamState::new(lr_all.len());
    let mut params = field.to_flat();
    let mut schedule = ViewSchedule::new(train);
    let mut metrics = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        if it == config.sh_degree_step {
            field.sh_degree = 1;
        }
        let view = schedule.pick(rng);
        let cam = &scene.rig.cameras[view];
        let splats = Splats::prepare(field, cam, RenderMode::Rgb);
        let out = splats.forward(scene.background);
        let target = &scene.gt_rgb[view];
        let (loss, grad_img) = photometric_loss(&out.payload, target, config.ssim_weight)?;
        metrics.push(IterationMetrics {
            iteration: it,
            loss,
            psnr: psnr(&out.payload, target)?,
        });
        let grad = splats.backward(field, cam, scene.background, &grad_img);
        let lr = if field.sh_degree == 0 { &lr_dc_only } else { &lr_all };
        adam_step(&mut params, &grad.flat, &mut state, lr);
        field.set_flat(&params);
    }
    Ok(metrics)
}

/// Encodes a normal image as `0.5 n + 0.5`.
pub fn encode_normals(img: &Image) -> Image {
    img.map(|v| 0.5 * v + 0.5)
}

fn fit_normals(
    scene: &Scene,
    config: &FitConfig,
    train: &[usize],
    aux: &mut GaussianField,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<IterationMetrics>> {
    let base_lr = config.learning_rates.expand(aux.len(), |g| {
        matches!(g, ParamGroup::Normal | ParamGroup::Scale | ParamGroup::Opacity)
    });
    let is_normal: Vec<bool> = (0..base_lr.len())
        .map(|i| ParamGroup::of_offset(i % layout::LEN) == ParamGroup::Normal)
        .collect();
    let mut lr = base_lr.clone();
    let masks: Vec<Vec<f64>> = (0..scene.views()).map(|i| scene.normal_mask(i)).collect();
    let targets: Vec<Image> = scene.gt_normal.iter().map(encode_normals).collect();
    let mut state = AdamState::new(lr.len());
    let mut params = aux.to_flat();
    let mut schedule = ViewSchedule::new(train);
    let mut metrics = Vec::with_capacity(config.normal_iterations);
    for it in 0..config.normal_iterations {
        let decay = NORMAL_LR_FINAL_RATIO.powf(it as f64 / config.normal_iterations as f64);
        for ((l, b), n) in lr.iter_mut().zip(&base_lr).zip(&is_normal) {
            *l = if *n { b * decay } else { *b };
        }
        let view = schedule.pick(rng);
        let cam = &scene.rig.cameras[view];
        let splats = Splats::prepare(aux, cam, RenderMode::Normal);
        let out = splats.forward(Vector3::zeros());
        let mask = &masks[view];
        let mut masked = out.payload;
        for (px, m) in masked.data.chunks_mut(3).zip(mask) {
            px.iter_mut().for_each(|v| *v *= m);
        }
        let pred = encode_normals(&masked);
        let (loss, grad_enc) = photometric_loss(&pred, &targets[view], config.ssim_weight)?;
        metrics.push(IterationMetrics {
            iteration: it,
            loss,
            psnr: psnr(&pred, &targets[view])?,
        });
        let mut upstream = grad_enc;
        for (px, m) in upstream.data.chunks_mut(3).zip(mask) {
            px.iter_mut().for_each(|v| *v *= 0.5 * m);
        }
        let grad = splats.backward(aux, cam, Vector3::zeros(), &upstream);
        adam_step(&mut params, &grad.flat, &mut state, &lr);
        aux.set_flat(&params);
    }
    Ok(metrics)
}

fn mean_loss(scene: &Scene, field: &GaussianField, views: &[usize], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for &v in views {
        let out = render(field, &scene.rig.cameras[v], RenderMode::Rgb, scene.background);
        total += photometric_loss(&out.payload, &scene.gt_rgb[v], lambda)?.0;
    }
    Ok(total / views.len() as f64)
}

/// Mean PSNR and SSIM of `field` against the ground truth of `views`, each
/// measured on the view's evaluation crop.
pub fn evaluate(scene: &Scene, field: &GaussianField, views: &[usize]) -> Result<EvalMetrics> {
    let (mut p, mut s) = (0.0, 0.0);
    for &v in views {
        let crop = scene.eval_crop(v);
        let out = render(field, &scene.rig.cameras[v], RenderMode::Rgb, scene.background);
        let a = out.payload.crop(&crop);
        let b = scene.gt_rgb[v].crop(&crop);
        p += psnr_from_mse(super::loss::mse(&a, &b)?);
        s += ssim_value(&a, &b)?;
    }
    let n = views.len().max(1) as f64;
    Ok(EvalMetrics {
        psnr: p / n,
        ssim: s / n,
        views: views.len(),
    })
}

/// Angle in degrees between each Gaussian's normal and `reference`, for
/// Gaussians whose opacity exceeds `min_opacity`.
pub fn normal_errors_deg(field: &GaussianField, reference: &[Vector3<f64>], min_opacity: f64) -> Vec<f64> {
    field
        .gaussians
        .iter()
        .zip(reference)
        .filter(|(g, _)| g.opacity() > min_opacity)
        .map(|(g, r)| g.normal().dot(&r.normalize()).clamp(-1.0, 1.0).acos().to_degrees())
        .collect()
}
