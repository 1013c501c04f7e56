//! Seeded trial batches over a parameter sweep.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::icp::{icp_trimmed, IcpConfig};
use super::metrics::{compute_metrics, Metrics, Outcome};
use super::scene::{gen_rigid_scene, RigidScene, RigidSceneSpec, RotationSpec};
use super::stats::{mean, std_dev};
use crate::error::{Error, Result};
use crate::mixture::{CovarianceMode, MixtureConfig};
use crate::rigid::ecmpr_rigid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Full covariances (common or per-component by scene size).
    EcmprAnisotropic,
    EcmprIsotropic,
    TrimmedIcp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::EcmprAnisotropic, Algorithm::EcmprIsotropic, Algorithm::TrimmedIcp];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::EcmprAnisotropic => "ecmpr-anisotropic",
            Algorithm::EcmprIsotropic => "ecmpr-isotropic",
            Algorithm::TrimmedIcp => "trimmed-icp",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ecmpr-aniso" => return Ok(Algorithm::EcmprAnisotropic),
            "ecmpr-iso" => return Ok(Algorithm::EcmprIsotropic),
            "icp" => return Ok(Algorithm::TrimmedIcp),
            _ => {}
        }
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown algorithm '{s}'")))
    }
}

/// The swept scene parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    /// The base scene only; rows carry sweep value 0.
    Single,
    /// Ground-truth rotation angles in degrees, about a random axis.
    RotationDeg(Vec<f64>),
}

impl Sweep {
    /// 0°..=180° in steps of `step`.
    pub fn rotation_range(step: f64) -> Result<Self> {
        Self::rotation(0.0, 180.0, step)
    }

    /// `start`, `start + step`, … up to `end` inclusive, in degrees.
    pub fn rotation(start: f64, end: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !start.is_finite() || !end.is_finite() || end < start {
            return Err(Error::InvalidConfig(format!("invalid sweep {start}:{end}:{step}")));
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        Ok(Sweep::RotationDeg((0..=n).map(|k| start + k as f64 * step).collect()))
    }

    fn values(&self) -> Vec<f64> {
        match self {
            Sweep::Single => vec![0.0],
            Sweep::RotationDeg(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    /// Scene template; its seed is the master seed.
    pub base: RigidSceneSpec,
    pub sweep: Sweep,
    pub n_trials: usize,
    pub algorithms: Vec<Algorithm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub sweep_value: f64,
    pub algorithm: Algorithm,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sweep_value: f64,
    pub algorithm: Algorithm,
    pub n: usize,
    pub mean: Summary,
    pub std: Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rotation_error_pct: f64,
    pub translation_error_pct: f64,
    pub correct_match_pct: f64,
    pub minimization_error: f64,
    pub iterations: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialBatch {
    pub rows: Vec<TrialRow>,
    pub aggregates: Vec<Aggregate>,
}

/// Runs `algorithm` on a scene and scores it against the generator labels.
pub fn run_trial(scene: &RigidScene, algorithm: Algorithm, seed: u64) -> Result<Metrics> {
    let start = Instant::now();
    match algorithm {
        Algorithm::EcmprAnisotropic | Algorithm::EcmprIsotropic => {
            let mut cfg = MixtureConfig::for_data(&scene.data, scene.model.len());
            if algorithm == Algorithm::EcmprIsotropic {
                cfg = cfg.with_mode(CovarianceMode::Isotropic);
            }
            let res = ecmpr_rigid(&scene.data, &scene.model, &cfg)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            let out = Outcome { transform: &res.transform, assignment: &res.assignment, iterations: res.iterations, wall_time_ms: ms };
            Ok(compute_metrics(&out, &scene.data, &scene.model, &scene.ground_truth, &scene.labels))
        }
        Algorithm::TrimmedIcp => {
            let n_out = scene.labels.iter().filter(|l| l.component().is_none()).count();
            let trim = n_out as f64 / scene.data.len().max(1) as f64;
            let res = icp_trimmed(&scene.data, &scene.model, &IcpConfig::for_data(&scene.data, trim, seed))?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            let out = Outcome { transform: &res.transform, assignment: &res.assignment, iterations: res.iterations, wall_time_ms: ms };
            Ok(compute_metrics(&out, &scene.data, &scene.model, &scene.ground_truth, &scene.labels))
        }
    }
}

fn summarize(rows: &[&TrialRow], f: impl Fn(&[f64]) -> f64) -> Summary {
    let col = |g: fn(&Metrics) -> f64| f(&rows.iter().map(|r| g(&r.metrics)).collect::<Vec<_>>());
    Summary {
        rotation_error_pct: col(|m| m.rotation_error_pct),
        translation_error_pct: col(|m| m.translation_error_pct),
        correct_match_pct: col(|m| m.correct_match_pct),
        minimization_error: col(|m| m.minimization_error),
        iterations: col(|m| m.iterations as f64),
        wall_time_ms: col(|m| m.wall_time_ms),
    }
}

/// Aggregates per (sweep value, algorithm), in first-appearance order.
pub fn aggregate(rows: &[TrialRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(f64, Algorithm)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|k| k.0 == r.sweep_value && k.1 == r.algorithm) {
            keys.push((r.sweep_value, r.algorithm));
        }
    }
    keys.into_iter()
        .map(|(v, a)| {
            let group: Vec<&TrialRow> = rows.iter().filter(|r| r.sweep_value == v && r.algorithm == a).collect();
            Aggregate { sweep_value: v, algorithm: a, n: group.len(), mean: summarize(&group, mean), std: summarize(&group, std_dev) }
        })
        .collect()
}

/// Every (sweep point, trial) pair gets its own RNG stream of the master
/// seed, so results do not depend on scheduling. Trials run in parallel.
pub fn run_batch(spec: &BatchSpec) -> Result<TrialBatch> {
    if spec.n_trials == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    if spec.algorithms.is_empty() {
        return Err(Error::InvalidConfig("need at least one algorithm".into()));
    }
    spec.base.validate()?;
    let values = spec.sweep.values();
    let jobs: Vec<(usize, usize)> = (0..values.len()).flat_map(|k| (0..spec.n_trials).map(move |t| (k, t))).collect();
    let per_job: Vec<Vec<TrialRow>> = jobs
        .par_iter()
        .map(|&(k, t)| {
            let mut scene_spec = spec.base;
            scene_spec.stream = (k * spec.n_trials + t) as u64;
            if let Sweep::RotationDeg(_) = spec.sweep {
                scene_spec.rotation = RotationSpec::RandomAxis { angle_deg: values[k] };
            }
            let scene = gen_rigid_scene(&scene_spec)?;
            spec.algorithms
                .iter()
                .map(|&a| {
                    let metrics = run_trial(&scene, a, spec.base.seed ^ scene_spec.stream)?;
                    Ok(TrialRow { trial: t, sweep_value: values[k], algorithm: a, metrics })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<TrialRow> = per_job.into_iter().flatten().collect();
    let aggregates = aggregate(&rows);
    Ok(TrialBatch { rows, aggregates })
}

pub const CSV_HEADER: &str = "trial,sweep_value,algorithm,rot_err_pct,trans_err_pct,match_pct,iters,time_ms";

impl TrialBatch {
    /// One row per trial. With `timing` off the time column is left empty so
    /// the output depends only on the seed.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let m = &r.metrics;
            let time = if timing { format!("{:.3}", m.wall_time_ms) } else { String::new() };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.trial, r.sweep_value, r.algorithm, m.rotation_error_pct, m.translation_error_pct, m.correct_match_pct, m.iterations, time
            );
        }
        out
    }

    /// Whitespace-separated columns for plotting mean ± std curves.
    pub fn to_columns(&self) -> String {
        let mut out = String::from(
            "# sweep_value algorithm n match_mean match_std rot_mean rot_std trans_mean trans_std iters_mean\n",
        );
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {} {} {}",
                a.sweep_value,
                a.algorithm,
                a.n,
                a.mean.correct_match_pct,
                a.std.correct_match_pct,
                a.mean.rotation_error_pct,
                a.std.rotation_error_pct,
                a.mean.translation_error_pct,
                a.std.translation_error_pct,
                a.mean.iterations
            );
        }
        out
    }

    pub fn aggregate_for(&self, sweep_value: f64, algorithm: Algorithm) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.sweep_value == sweep_value && a.algorithm == algorithm)
    }
}
