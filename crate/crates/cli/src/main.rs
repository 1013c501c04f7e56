//! `ecmpr`: scene simulation, registration and benchmarking.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or parse error,
//! 3 registration did not converge (the result is still written).

mod io;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ecmpr::articulated::{
    builtin, ecmpr_articulated, forward_kinematics, ArticulatedConfig, ArticulatedModel, ArticulatedResult, InitSigma,
    PoseParams, BUILTIN_MODELS,
};
use ecmpr::bench::articulated::{bent_chain_pose, flexion_trajectory, gen_articulated_scene, mean_joint_error};
use ecmpr::bench::batch::{run_batch, Algorithm, BatchSpec, Sweep};
use ecmpr::bench::metrics::{compute_metrics, correct_match_pct, Outcome};
use ecmpr::bench::scene::{gen_rigid_scene, NoiseModel, RigidSceneSpec, RotationSpec, TranslationSpec};
use ecmpr::geometry::Point3;
use ecmpr::mixture::{CovarianceMode, MixtureConfig};
use ecmpr::rigid::ecmpr_rigid;
use nalgebra::Vector3;
use serde_json::json;

use crate::io::*;

#[derive(Parser)]
#[command(name = "ecmpr", version, about = "Robust rigid and articulated point registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene file.
    #[command(subcommand)]
    Simulate(Simulate),
    /// Register a model to observations.
    #[command(subcommand)]
    Register(Register),
    /// Run seeded batches of rigid trials and write CSV, JSON and plot columns.
    Benchmark(BenchmarkArgs),
    /// Write a built-in articulated model as a model file.
    Model(ModelArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// One of the built-in model names.
    name: String,
    /// Output file; standard output when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Simulate {
    Rigid(SimRigidArgs),
    Articulated(SimArticulatedArgs),
}

#[derive(Subcommand)]
enum Register {
    Rigid(RegRigidArgs),
    Articulated(RegArticulatedArgs),
}

#[derive(Args)]
struct SimRigidArgs {
    #[arg(long, default_value_t = 15)]
    n_model: usize,
    #[arg(long, default_value_t = 15)]
    n_inliers: usize,
    #[arg(long, default_value_t = 10)]
    n_outliers: usize,
    /// Ground-truth rotation angle in degrees.
    #[arg(long, default_value_t = 25.0)]
    rotation_deg: f64,
    /// Rotation axis `x,y,z`; random when absent.
    #[arg(long, value_parser = parse_triple)]
    axis: Option<Vector3<f64>>,
    /// Translation `x,y,z`; random when absent.
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    translation: Option<Vector3<f64>>,
    /// `none`, `isotropic:s`, `anisotropic:s` or `anisotropic:s1,s2,s3`, as
    /// fractions of the inlier bounding-box diagonal.
    #[arg(long, default_value = "none", value_parser = parse_noise)]
    noise: NoiseModel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Trajectory {
    /// Every frame at the rest pose.
    Rest,
    /// One flexion cycle over the frames.
    Flexion,
    /// The fixed bent pose of the 4-part chain.
    Bent,
}

#[derive(Args)]
struct SimArticulatedArgs {
    /// Built-in model name or model file.
    #[arg(long, default_value = "chain4")]
    model: String,
    #[arg(long, value_enum, default_value_t = Trajectory::Flexion)]
    trajectory: Trajectory,
    /// Number of frames along the trajectory.
    #[arg(long, default_value_t = 1)]
    frames: usize,
    /// Noise as for rigid scenes, relative to the posed model's diagonal.
    #[arg(long, default_value = "none", value_parser = parse_noise)]
    noise: NoiseModel,
    /// Outliers per model point.
    #[arg(long, default_value_t = 0.3)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RegCommon {
    /// Scene file (model, data and optional ground truth).
    #[arg(long, conflicts_with = "data")]
    scene: Option<PathBuf>,
    /// Observations: JSON array of triples or `x,y,z` CSV.
    #[arg(long, requires = "model")]
    data: Option<PathBuf>,
    /// `per-component`, `common` or `isotropic`; chosen by scene size when absent.
    #[arg(long, value_parser = parse_mode)]
    covariance: Option<CovarianceMode>,
    /// Radius of the inlier sphere; 5% of the data diagonal when absent.
    #[arg(long)]
    outlier_radius: Option<f64>,
    /// Initial standard deviation of every component.
    #[arg(long)]
    init_sigma: Option<f64>,
    /// ECM iteration cap per registration.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Result file; standard output when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RegRigidArgs {
    #[command(flatten)]
    common: RegCommon,
    /// Model points: JSON array of triples or `x,y,z` CSV.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct RegArticulatedArgs {
    #[command(flatten)]
    common: RegCommon,
    /// Built-in model name or model file.
    #[arg(long)]
    model: Option<String>,
    /// Initial standard deviation of each part as a multiple of the part's
    /// own bounding-box diagonal.
    #[arg(long, conflicts_with = "init_sigma")]
    init_sigma_scale: Option<f64>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Rotation sweep `start:end:step` in degrees.
    #[arg(long, value_parser = parse_sweep)]
    sweep_rotation: Option<Sweep>,
    /// Trials per sweep point.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Comma-separated: ecmpr-anisotropic (ecmpr-aniso), ecmpr-isotropic
    /// (ecmpr-iso), trimmed-icp (icp).
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm)]
    algorithms: Option<Vec<Algorithm>>,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    /// Noise of every trial scene.
    #[arg(long, default_value = "anisotropic:0.1", value_parser = parse_noise)]
    noise: NoiseModel,
    #[arg(long, default_value_t = 15)]
    n_model: usize,
    #[arg(long, default_value_t = 15)]
    n_inliers: usize,
    #[arg(long, default_value_t = 10)]
    n_outliers: usize,
    /// Leave the time column empty so outputs depend only on the seed.
    #[arg(long)]
    omit_timing: bool,
    /// Output directory.
    #[arg(short, long)]
    output: PathBuf,
}

fn parse_triple(s: &str) -> Result<Vector3<f64>, String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    match v.as_slice() {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(format!("expected x,y,z, got '{s}'")),
    }
}

fn parse_noise(s: &str) -> Result<NoiseModel, String> {
    NoiseModel::from_str(s).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> Result<CovarianceMode, String> {
    CovarianceMode::from_str(s).map_err(|e| e.to_string())
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    Algorithm::from_str(s).map_err(|e| e.to_string())
}

fn parse_sweep(s: &str) -> Result<Sweep, String> {
    let v: Vec<f64> = s.split(':').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    match v.as_slice() {
        [a, b, step] => Sweep::rotation(*a, *b, *step).map_err(|e| e.to_string()),
        _ => Err(format!("expected start:end:step, got '{s}'")),
    }
}

/// Outcome of a command that ran to completion.
enum Done {
    Ok,
    NotConverged,
}

fn usage(msg: impl std::fmt::Display) -> IoError {
    IoError::Parse(msg.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let outcome = match cli.command {
        Command::Simulate(Simulate::Rigid(a)) => simulate_rigid(a),
        Command::Simulate(Simulate::Articulated(a)) => simulate_articulated(a),
        Command::Register(Register::Rigid(a)) => register_rigid(a),
        Command::Register(Register::Articulated(a)) => register_articulated(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Model(a) => export_model(a),
    };
    match outcome {
        Ok(Done::Ok) => ExitCode::SUCCESS,
        Ok(Done::NotConverged) => {
            eprintln!("warning: registration did not converge");
            ExitCode::from(3)
        }
        Err(IoError::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(IoError::Parse(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

/// Caps the worker pool at `ECMPR_THREADS` when set.
fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("ECMPR_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or(format!("ECMPR_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn emit<T: serde::Serialize>(output: &Option<PathBuf>, value: &T) -> IoResult<()> {
    match output {
        Some(path) => write_json(path, value),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(usage)?;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(IoError::Io(format!("cannot write to stdout: {e}"))),
                _ => Ok(()),
            }
        }
    }
}

/// Summary lines go to stderr when the document itself is on stdout.
fn report(output: &Option<PathBuf>, line: &str) {
    if output.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn simulate_rigid(a: SimRigidArgs) -> IoResult<Done> {
    let spec = RigidSceneSpec {
        n_model: a.n_model,
        n_inliers: a.n_inliers,
        n_outliers: a.n_outliers,
        rotation: match a.axis {
            Some(axis) => RotationSpec::AxisAngle { axis, angle_deg: a.rotation_deg },
            None => RotationSpec::RandomAxis { angle_deg: a.rotation_deg },
        },
        translation: a.translation.map_or(TranslationSpec::Random, TranslationSpec::Fixed),
        noise: a.noise,
        seed: a.seed,
        stream: 0,
    };
    let scene = gen_rigid_scene(&spec).map_err(usage)?;
    let file = SceneFile {
        model: to_triples(&scene.model),
        data: to_triples(&scene.data),
        ground_truth: Some(TransformFile::from_transform(&scene.ground_truth)),
        labels: Some(labels_to_strings(&scene.labels)),
        meta: json!({ "generator": "rigid", "spec": spec, "noise": spec.noise.to_string(), "seed": a.seed }),
    };
    emit(&a.output, &file)?;
    report(
        &a.output,
        &format!(
            "rigid scene: {} model points, {} inliers, {} outliers, noise {}, seed {}",
            a.n_model, a.n_inliers, a.n_outliers, a.noise, a.seed
        ),
    );
    Ok(Done::Ok)
}

fn load_model(name_or_path: &str) -> IoResult<ArticulatedModel> {
    if let Some(m) = builtin(name_or_path) {
        return Ok(m);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(usage(format!(
            "model '{name_or_path}' is neither a built-in ({}) nor an existing file",
            BUILTIN_MODELS.join(", ")
        )));
    }
    read_json::<ModelFile>(path)?.to_model()
}

fn export_model(a: ModelArgs) -> IoResult<Done> {
    let model = builtin(&a.name)
        .ok_or_else(|| usage(format!("unknown model '{}' (built-ins: {})", a.name, BUILTIN_MODELS.join(", "))))?;
    emit(&a.output, &ModelFile::from_model(&model))?;
    report(&a.output, &format!("model {}: {} parts, {} points, {} degrees of freedom", a.name, model.n_parts(), model.n_points(), model.n_dof()));
    Ok(Done::Ok)
}

fn simulate_articulated(a: SimArticulatedArgs) -> IoResult<Done> {
    let model = load_model(&a.model)?;
    if a.frames == 0 {
        return Err(usage("--frames must be at least 1"));
    }
    let trajectory: Vec<PoseParams> = match a.trajectory {
        Trajectory::Rest => vec![model.rest_pose(); a.frames],
        Trajectory::Flexion => flexion_trajectory(&model, a.frames),
        Trajectory::Bent => {
            let pose = bent_chain_pose();
            pose.check(&model).map_err(|e| usage(format!("the bent trajectory needs the 4-part chain: {e}")))?;
            vec![pose; a.frames]
        }
    };
    let frames = gen_articulated_scene(&model, &trajectory, a.noise, a.outlier_fraction, a.seed).map_err(usage)?;
    let file = ArticulatedSceneFile {
        model: ModelFile::from_model(&model),
        frames: frames
            .iter()
            .map(|f| FrameFile {
                data: to_triples(&f.data),
                ground_truth: Some(PoseFile::from_pose(&f.pose)),
                labels: Some(labels_to_strings(&f.labels)),
            })
            .collect(),
        meta: json!({
            "generator": "articulated",
            "model": a.model,
            "trajectory": a.trajectory.to_possible_value().map(|v| v.get_name().to_owned()),
            "noise": a.noise.to_string(),
            "outlier_fraction": a.outlier_fraction,
            "seed": a.seed,
        }),
    };
    emit(&a.output, &file)?;
    report(
        &a.output,
        &format!(
            "articulated scene: {} parts, {} frames, {} points per frame, noise {}, seed {}",
            model.n_parts(),
            frames.len(),
            frames[0].data.len(),
            a.noise,
            a.seed
        ),
    );
    Ok(Done::Ok)
}

fn apply_overrides(mut cfg: MixtureConfig, c: &RegCommon) -> MixtureConfig {
    if let Some(mode) = c.covariance {
        cfg = cfg.with_mode(mode);
    }
    if let Some(r) = c.outlier_radius {
        cfg = cfg.with_outlier_radius(r);
    }
    if let Some(s) = c.init_sigma {
        cfg = cfg.with_init_sigma(s);
    }
    if let Some(n) = c.max_iters {
        cfg = cfg.with_max_iterations(n);
    }
    cfg
}

fn register_rigid(a: RegRigidArgs) -> IoResult<Done> {
    let c = &a.common;
    let (model, data, truth, labels) = match (&c.scene, &c.data, &a.model) {
        (Some(path), None, None) => {
            let scene: SceneFile = read_json(path)?;
            let truth = scene.ground_truth.map(|g| g.to_transform("ground_truth")).transpose()?;
            let labels = scene.labels.as_deref().map(|l| parse_labels(l, "labels")).transpose()?;
            (to_points(&scene.model, "model")?, to_points(&scene.data, "data")?, truth, labels)
        }
        (None, Some(d), Some(m)) => (read_points(m)?, read_points(d)?, None, None),
        _ => return Err(usage("give either --scene or both --data and --model")),
    };
    if let Some(l) = &labels {
        if l.len() != data.len() {
            return Err(usage(format!("labels: {} entries for {} data points", l.len(), data.len())));
        }
    }
    let cfg = apply_overrides(MixtureConfig::for_data(&data, model.len()), c);
    let start = Instant::now();
    let res = ecmpr_rigid(&data, &model, &cfg).map_err(usage)?;
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;

    let metrics = truth.map(|t| {
        let outcome = Outcome { transform: &res.transform, assignment: &res.assignment, iterations: res.iterations, wall_time_ms };
        compute_metrics(&outcome, &data, &model, &t, labels.as_deref().unwrap_or(&[]))
    });
    let mean_outlier = res
        .posteriors()
        .map(|p| (0..p.n_data()).map(|j| p.outlier(j)).sum::<f64>() / p.n_data().max(1) as f64)
        .unwrap_or(f64::NAN);
    let n_inliers = res.assignment.n_inliers();
    let file = ResultFile::Rigid(RigidResultFile {
        transform: TransformFile::from_transform(&res.transform),
        assignments: labels_to_strings(res.assignment.labels()),
        posteriors: PosteriorSummary { n_inliers, n_outliers: data.len() - n_inliers, mean_outlier_posterior: mean_outlier },
        iterations: res.iterations,
        converged: res.converged,
        log_likelihood_trace: res.log_likelihood_trace.clone(),
        metrics,
        config: json!({ "mixture": cfg, "scene": c.scene, "data": c.data, "model": a.model }),
    });
    emit(&c.output, &file)?;
    let mut line = format!("iterations {} converged {} inliers {}/{}", res.iterations, res.converged, n_inliers, data.len());
    if let Some(m) = metrics {
        let matches = if labels.is_some() { format!("{:.1}", m.correct_match_pct) } else { "n/a".into() };
        line = format!(
            "rot_err_pct {:.1} / trans_err_pct {:.1} / match_pct {} | {line}",
            m.rotation_error_pct, m.translation_error_pct, matches
        );
    }
    report(&c.output, &line);
    Ok(if res.converged { Done::Ok } else { Done::NotConverged })
}

struct Frame {
    data: Vec<Point3>,
    truth: Option<PoseParams>,
    labels: Option<Vec<ecmpr::mixture::Label>>,
}

/// Absolute angle difference folded into [0, π].
fn angle_gap(a: f64, b: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let d = (a - b).rem_euclid(two_pi);
    d.min(two_pi - d)
}

fn frame_metrics(res: &ArticulatedResult, f: &Frame) -> Option<FrameMetrics> {
    let truth = f.truth.as_ref()?;
    let max_joint =
        res.pose.joints.iter().flatten().zip(truth.joints.iter().flatten()).map(|(a, b)| angle_gap(*a, *b)).fold(0.0, f64::max);
    Some(FrameMetrics {
        root_rotation_error_deg: res.pose.root.rotation.angle_to(&truth.root.rotation).to_degrees(),
        root_translation_error: (res.pose.root.translation - truth.root.translation).norm(),
        mean_joint_error_deg: mean_joint_error(&res.pose, truth).to_degrees(),
        max_joint_error_deg: max_joint.to_degrees(),
        correct_match_pct: f.labels.as_ref().map(|l| correct_match_pct(&res.assignment, l)),
    })
}

fn register_articulated(a: RegArticulatedArgs) -> IoResult<Done> {
    let c = &a.common;
    let (model, frames) = match (&c.scene, &c.data, &a.model) {
        (Some(path), None, None) => {
            let scene: ArticulatedSceneFile = read_json(path)?;
            let model = scene.model.to_model()?;
            let frames = scene
                .frames
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    let field = format!("frames[{k}]");
                    Ok(Frame {
                        data: to_points(&f.data, &format!("{field}.data"))?,
                        truth: f.ground_truth.as_ref().map(|g| g.to_pose(&format!("{field}.ground_truth"))).transpose()?,
                        labels: f.labels.as_deref().map(|l| parse_labels(l, &format!("{field}.labels"))).transpose()?,
                    })
                })
                .collect::<IoResult<Vec<_>>>()?;
            (model, frames)
        }
        (None, Some(d), Some(m)) => (load_model(m)?, vec![Frame { data: read_points(d)?, truth: None, labels: None }]),
        _ => return Err(usage("give either --scene or both --data and --model")),
    };
    if frames.is_empty() {
        return Err(usage("frames: the scene has no frames"));
    }
    for (k, f) in frames.iter().enumerate() {
        if let Some(t) = &f.truth {
            t.check(&model).map_err(|e| usage(format!("frames[{k}].ground_truth: {e}")))?;
        }
    }

    let mut cfg = ArticulatedConfig::for_data(&frames[0].data, &model);
    cfg.mixture = apply_overrides(cfg.mixture, c);
    if let Some(s) = c.init_sigma {
        cfg = cfg.with_init_sigma(InitSigma::Absolute(s));
    }
    if let Some(k) = a.init_sigma_scale {
        cfg = cfg.with_init_sigma(InitSigma::PartScaled(k));
    }
    cfg.validate().map_err(usage)?;

    // frame by frame from the rest pose, each warm-started from the last
    let mut pose = model.rest_pose();
    let mut results = Vec::with_capacity(frames.len());
    let mut all_converged = true;
    for f in &frames {
        let res = ecmpr_articulated(&f.data, &model, &cfg, &pose).map_err(usage)?;
        pose = res.pose.clone();
        all_converged &= res.converged();
        let transforms = forward_kinematics(&model, &res.pose).map_err(usage)?;
        results.push(FrameResultFile {
            pose: PoseFile::from_pose(&res.pose),
            transforms: transforms.0.iter().map(matrix4_rows).collect(),
            assignments: labels_to_strings(res.assignment.labels()),
            parts: model
                .parts()
                .iter()
                .zip(&res.parts)
                .map(|(p, r)| PartResultFile {
                    name: p.name.clone(),
                    registered: r.registered,
                    iterations: r.iterations,
                    converged: r.converged,
                    n_inliers: r.n_inliers,
                    log_likelihood_trace: r.log_likelihood_trace.clone(),
                })
                .collect(),
            converged: res.converged(),
            metrics: frame_metrics(&res, f),
        });
    }
    let file = ResultFile::Articulated(ArticulatedResultFile {
        frames: results.clone(),
        config: json!({ "articulated": cfg, "scene": c.scene, "data": c.data, "model": a.model }),
    });
    emit(&c.output, &file)?;
    let scored: Vec<&FrameMetrics> = results.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let mut line = format!("{} frames, {} parts", results.len(), model.n_parts());
    if !scored.is_empty() {
        let mean = scored.iter().map(|m| m.mean_joint_error_deg).sum::<f64>() / scored.len() as f64;
        let worst = scored.iter().map(|m| m.max_joint_error_deg).fold(0.0, f64::max);
        let root = scored.iter().map(|m| m.root_rotation_error_deg).fold(0.0, f64::max);
        line = format!("mean_joint_err_deg {mean:.3} / max_joint_err_deg {worst:.3} / max_root_rot_err_deg {root:.3} | {line}");
    }
    report(&c.output, &line);
    Ok(if all_converged { Done::Ok } else { Done::NotConverged })
}

fn benchmark(a: BenchmarkArgs) -> IoResult<Done> {
    let mut base = RigidSceneSpec::standard(a.noise, a.master_seed);
    base.n_model = a.n_model;
    base.n_inliers = a.n_inliers;
    base.n_outliers = a.n_outliers;
    let spec = BatchSpec {
        base,
        sweep: a.sweep_rotation.clone().unwrap_or(Sweep::Single),
        n_trials: a.trials,
        algorithms: a.algorithms.clone().unwrap_or_else(|| Algorithm::ALL.to_vec()),
    };
    let batch = run_batch(&spec).map_err(usage)?;
    std::fs::create_dir_all(&a.output).map_err(|e| IoError::Io(format!("cannot create {}: {e}", a.output.display())))?;
    write_text(&a.output.join("trials.csv"), &batch.to_csv(!a.omit_timing))?;
    let mut aggregates = serde_json::to_value(&batch.aggregates).map_err(usage)?;
    if a.omit_timing {
        if let Some(list) = aggregates.as_array_mut() {
            for agg in list {
                for key in ["mean", "std"] {
                    if let Some(s) = agg.get_mut(key).and_then(|s| s.as_object_mut()) {
                        s.remove("wall_time_ms");
                    }
                }
            }
        }
    }
    write_json(&a.output.join("summary.json"), &json!({ "spec": spec, "aggregates": aggregates }))?;
    write_text(&a.output.join("curves.dat"), &batch.to_columns())?;
    for agg in &batch.aggregates {
        println!(
            "{:>7.1} {:<18} match {:6.2} ± {:5.2}  rot_err {:6.2} ± {:5.2}  trans_err {:7.2}",
            agg.sweep_value,
            agg.algorithm.name(),
            agg.mean.correct_match_pct,
            agg.std.correct_match_pct,
            agg.mean.rotation_error_pct,
            agg.std.rotation_error_pct,
            agg.mean.translation_error_pct
        );
    }
    println!("wrote trials.csv, summary.json and curves.dat to {}", a.output.display());
    Ok(Done::Ok)
}
