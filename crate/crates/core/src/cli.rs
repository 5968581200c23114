//! Command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use crate::buffer::Image;
use crate::gaussian::ParamMode;
use crate::gradcheck::{self, GradcheckScene};
use crate::io::{self, atomic_write};
use crate::optimize::{self, FitConfig};
use crate::raster::{render, RenderMode};
use crate::scene::{self, Preset, SceneConfig};
use crate::studies::{self, InstabilityConfig};
use crate::triplane;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "normsplat", version, about = "CPU Gaussian splatting with normal-guided rotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthetic scene generation.
    #[command(subcommand)]
    Scene(SceneCommand),
    /// Render one view of a fitted field.
    Render(RenderArgs),
    /// Fit a Gaussian field to a scene.
    Fit(FitArgs),
    /// Compare analytic and finite-difference gradients on random fields.
    Gradcheck(GradcheckArgs),
    /// Parameter studies.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Triplane feature operations.
    #[command(subcommand)]
    Triplane(TriplaneCommand),
    /// PSNR between two images.
    Psnr(PsnrArgs),
}

#[derive(Debug, Subcommand)]
enum SceneCommand {
    /// Write a preset scene (manifest, point cloud, ground-truth images).
    Gen(SceneGenArgs),
}

#[derive(Debug, Args)]
struct SceneGenArgs {
    #[arg(long, default_value = "sphere")]
    preset: Preset,
    #[arg(long, default_value_t = 24)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Scene manifest providing the cameras.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    field: PathBuf,
    #[arg(long, default_value_t = 0)]
    camera_index: usize,
    #[arg(long, default_value = "rgb")]
    mode: RenderMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value = "unconstrained")]
    mode: ParamMode,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    /// Normal-map iterations in normal-guided mode; defaults to --iters.
    #[arg(long)]
    normal_iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hold out every n-th view for evaluation (0 = none).
    #[arg(long, default_value_t = 0)]
    holdout_every: usize,
    #[arg(long)]
    freeze_positions: bool,
    /// Output PLY path.
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration CSV (iteration, loss, psnr).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image side in pixels.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 24)]
    gaussians: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
}

#[derive(Debug, Subcommand)]
enum StudyCommand {
    /// Instability score of every parameter kind across seeded refits.
    Instability(InstabilityArgs),
    /// Held-out quality of the three rotation parameterizations.
    Rotation(RotationArgs),
}

#[derive(Debug, Args)]
struct InstabilityArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 8)]
    trials: usize,
    #[arg(long, default_value_t = 1500)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RotationArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    holdout_every: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum TriplaneCommand {
    /// Randomized property checks of fetch, attention and mixup.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    cases: usize,
    /// Also write a default multiscale stack built from a seeded feature map.
    #[arg(long)]
    stack_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PsnrArgs {
    a: PathBuf,
    b: PathBuf,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Scene(SceneCommand::Gen(a)) => scene_gen(a),
        Command::Render(a) => render_view(a),
        Command::Fit(a) => fit(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Study(StudyCommand::Instability(a)) => study_instability(a),
        Command::Study(StudyCommand::Rotation(a)) => study_rotation(a),
        Command::Triplane(TriplaneCommand::Selftest(a)) => triplane_selftest(a),
        Command::Psnr(a) => psnr(a),
    }
}

fn load_scene(path: &Path) -> anyhow::Result<scene::Scene> {
    io::load_scene(path).with_context(|| format!("loading scene {}", path.display()))
}

fn scene_gen(a: SceneGenArgs) -> anyhow::Result<()> {
    let config = SceneConfig {
        preset: a.preset,
        views: a.views,
        resolution: a.resolution,
        points: a.points,
        seed: a.seed,
    };
    let scene = scene::generate(&config)?;
    let manifest = io::save_scene(&a.out, &scene)?;
    println!("{}", manifest.display());
    Ok(())
}

fn render_view(a: RenderArgs) -> anyhow::Result<()> {
    let manifest = io::read_manifest(&a.scene)?;
    let field = io::load_field(&a.field).with_context(|| format!("loading field {}", a.field.display()))?;
    let Some(view) = manifest.views.get(a.camera_index) else {
        bail!("camera index {} out of range (scene has {} views)", a.camera_index, manifest.views.len());
    };
    let background = Vector3::from(manifest.background);
    let out = render(&field, &view.camera, a.mode, background);
    match a.mode {
        RenderMode::Rgb => io::save_rgb(&a.out, &out.payload)?,
        RenderMode::Normal => io::save_normal(&a.out, &out.payload)?,
        RenderMode::Depth => {
            let max = out.payload.data.iter().copied().fold(0.0, f64::max);
            let scaled = if max > 0.0 { out.payload.map(|d| d / max) } else { out.payload };
            io::save_rgb(&a.out, &scaled)?;
            println!("depth scale {max}");
        }
    }
    Ok(())
}

fn fit(a: FitArgs) -> anyhow::Result<()> {
    let scene = load_scene(&a.scene)?;
    let mut config = FitConfig::new(a.mode, a.iters);
    config.normal_iterations = a.normal_iters.unwrap_or(a.iters);
    config.seed = a.seed;
    config.holdout_every = a.holdout_every;
    config.freeze_positions = a.freeze_positions;
    let result = optimize::fit(&scene, &config)?;
    io::save_field(&a.out, &result.field)?;
    if let Some(path) = &a.metrics {
        atomic_write(path, result.metrics_csv().as_bytes())?;
    }
    println!(
        "loss {:.6} -> {:.6}; eval psnr {:.3} dB, ssim {:.5} over {} view(s)",
        result.initial_loss, result.final_loss, result.eval.psnr, result.eval.ssim, result.eval.views
    );
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    if a.size == 0 || a.gaussians == 0 || !(a.step > 0.0) {
        bail!("--size, --gaussians and --step must be positive");
    }
    let mut failed = 0;
    for param_mode in ParamMode::ALL {
        for render_mode in RenderMode::ALL {
            let scene = GradcheckScene::random(a.seed, a.size, a.gaussians, param_mode, render_mode);
            let report = gradcheck::check(&scene, a.step);
            let ok = report.passes(gradcheck::REL_TOLERANCE);
            failed += usize::from(!ok);
            println!(
                "{} {param_mode} {render_mode}: max_rel {:.3e}, max_abs_small {:.3e}, elements {}, replays {}",
                if ok { "PASS" } else { "FAIL" },
                report.max_rel_error,
                report.max_abs_error_small,
                report.elements,
                report.branch_replays
            );
        }
    }
    if failed > 0 {
        bail!("{failed} gradient check(s) failed");
    }
    Ok(())
}

fn study_instability(a: InstabilityArgs) -> anyhow::Result<()> {
    let scene = load_scene(&a.scene)?;
    let config = InstabilityConfig::new(a.trials, a.iters, a.seed);
    let study = studies::run_instability_study(&scene, &config)?;
    atomic_write(&a.out, study.report.to_csv().as_bytes())?;
    print!("{}", study.report.to_csv());
    Ok(())
}

fn study_rotation(a: RotationArgs) -> anyhow::Result<()> {
    let scene = load_scene(&a.scene)?;
    let mut config = FitConfig::new(ParamMode::Unconstrained, a.iters);
    config.seed = a.seed;
    config.holdout_every = a.holdout_every;
    let study = studies::run_rotation_study(&scene, &config)?;
    atomic_write(&a.out, study.report.to_csv().as_bytes())?;
    print!("{}", study.report.to_csv());
    println!(
        "ordering U >= NG > I: {}; NG gap <= half the isotropic gap: {}",
        study.ordering_holds(),
        study.gap_holds()
    );
    Ok(())
}

fn triplane_selftest(a: SelftestArgs) -> anyhow::Result<()> {
    let report = triplane::selftest(a.seed, a.cases)?;
    print!("{}", report.to_text());
    if let Some(path) = &a.stack_out {
        let base = triplane::FeatureGrid::random(32, 64, a.seed);
        let stack = triplane::build_multiscale(&base, 4, a.seed)?;
        triplane::save_stack(path, &stack)?;
    }
    if !report.passed() {
        bail!("triplane selftest failed");
    }
    Ok(())
}

fn psnr(a: PsnrArgs) -> anyhow::Result<()> {
    let load = |p: &Path| -> anyhow::Result<Image> {
        io::load_rgb(p).with_context(|| format!("loading {}", p.display()))
    };
    let value = optimize::psnr(&load(&a.a)?, &load(&a.b)?)?;
    println!("{value:.4}");
    Ok(())
}
