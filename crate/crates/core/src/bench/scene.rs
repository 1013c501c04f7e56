//! Seeded synthetic scenes.
//!
//! All randomness comes from `ChaCha8Rng`, seeded with `seed_from_u64` and
//! split into independent streams with `set_stream`, so a (seed, stream)
//! pair reproduces the same scene on every platform.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Point3, RigidTransform, Rotation};
use crate::mixture::Label;

/// Per-axis noise standard deviations, as fractions of the bounding-box
/// diagonal of the clean inliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "sigma", rename_all = "kebab-case")]
pub enum NoiseModel {
    None,
    Isotropic(f64),
    Anisotropic([f64; 3]),
}

/// Ratios used by the one-number `anisotropic:s` shorthand.
pub const ANISOTROPY_PROFILE: [f64; 3] = [1.0, 0.55, 0.1];

impl NoiseModel {
    pub fn sigmas(&self) -> [f64; 3] {
        match *self {
            NoiseModel::None => [0.0; 3],
            NoiseModel::Isotropic(s) => [s; 3],
            NoiseModel::Anisotropic(s) => s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas().iter().all(|s| (0.0..=1.0).contains(s)) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("noise fractions must lie in [0, 1], got {self}")))
        }
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseModel::None => write!(f, "none"),
            NoiseModel::Isotropic(s) => write!(f, "isotropic:{s}"),
            NoiseModel::Anisotropic([a, b, c]) => write!(f, "anisotropic:{a},{b},{c}"),
        }
    }
}

impl FromStr for NoiseModel {
    type Err = Error;

    /// `none`, `isotropic:σ`, `anisotropic:s` (scaled [`ANISOTROPY_PROFILE`])
    /// or `anisotropic:σ1,σ2,σ3`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unrecognized noise model '{s}'"));
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        let noise = match s.split_once(':') {
            None if s == "none" => NoiseModel::None,
            Some(("isotropic", v)) => NoiseModel::Isotropic(num(v)?),
            Some(("anisotropic", v)) => {
                let parts: Vec<f64> = v.split(',').map(num).collect::<Result<_>>()?;
                match parts.as_slice() {
                    [s] => NoiseModel::Anisotropic(ANISOTROPY_PROFILE.map(|p| p * s)),
                    [a, b, c] => NoiseModel::Anisotropic([*a, *b, *c]),
                    _ => return Err(bad()),
                }
            }
            _ => return Err(bad()),
        };
        noise.validate()?;
        Ok(noise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationSpec {
    AxisAngle { axis: Vector3<f64>, angle_deg: f64 },
    /// Given angle about a random axis.
    RandomAxis { angle_deg: f64 },
    /// Random axis and a uniform angle in [0°, 180°].
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TranslationSpec {
    Fixed(Vector3<f64>),
    /// Random direction, length uniform in [0.5, 1].
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidSceneSpec {
    pub n_model: usize,
    pub n_inliers: usize,
    pub n_outliers: usize,
    pub rotation: RotationSpec,
    pub translation: TranslationSpec,
    pub noise: NoiseModel,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

impl RigidSceneSpec {
    /// 15 model points, 15 inliers rotated 25° about a random axis, 10
    /// outliers, random translation.
    pub fn standard(noise: NoiseModel, seed: u64) -> Self {
        RigidSceneSpec {
            n_model: 15,
            n_inliers: 15,
            n_outliers: 10,
            rotation: RotationSpec::RandomAxis { angle_deg: 25.0 },
            translation: TranslationSpec::Random,
            noise,
            seed,
            stream: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inliers > self.n_model {
            return Err(Error::InvalidConfig(format!(
                "{} inliers requested from {} model points",
                self.n_inliers, self.n_model
            )));
        }
        if let RotationSpec::AxisAngle { axis, .. } = self.rotation {
            if !(axis.norm() > 0.0) {
                return Err(Error::InvalidConfig("rotation axis must be non-zero".into()));
            }
        }
        self.noise.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidScene {
    pub model: Vec<Point3>,
    pub data: Vec<Point3>,
    pub ground_truth: RigidTransform,
    pub labels: Vec<Label>,
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_axis(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from(UnitSphere.sample(rng))
}

/// Adds zero-mean Gaussian noise with per-axis standard deviations.
pub(crate) fn add_noise(rng: &mut ChaCha8Rng, p: &Point3, sigma: &Vector3<f64>) -> Point3 {
    let z: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    p + z.component_mul(sigma)
}

pub(crate) fn uniform_in(rng: &mut ChaCha8Rng, bb: &BoundingBox) -> Point3 {
    Point3::from_fn(|k, _| {
        let (lo, hi) = (bb.min[k], bb.max[k]);
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    })
}

/// Model in the unit cube; the first `n_inliers` model points are moved by
/// the ground truth and perturbed; outliers are uniform over the bounding
/// box of the inlier observations. Inliers come first in `data`.
pub fn gen_rigid_scene(spec: &RigidSceneSpec) -> Result<RigidScene> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, spec.stream);
    let model: Vec<Point3> = (0..spec.n_model).map(|_| Point3::from_fn(|_, _| rng.random::<f64>())).collect();

    let rotation = match spec.rotation {
        RotationSpec::AxisAngle { axis, angle_deg } => Rotation::from_axis_angle(&axis, angle_deg.to_radians()),
        RotationSpec::RandomAxis { angle_deg } => Rotation::from_axis_angle(&random_axis(&mut rng), angle_deg.to_radians()),
        RotationSpec::Random => {
            let axis = random_axis(&mut rng);
            Rotation::from_axis_angle(&axis, rng.random_range(0.0..=std::f64::consts::PI))
        }
    };
    let translation = match spec.translation {
        TranslationSpec::Fixed(t) => t,
        TranslationSpec::Random => random_axis(&mut rng) * rng.random_range(0.5..=1.0),
    };
    let truth = RigidTransform::new(rotation, translation);

    let clean: Vec<Point3> = model[..spec.n_inliers].iter().map(|x| truth.apply(x)).collect();
    let reference = BoundingBox::of(&clean)
        .filter(|b| b.diagonal() > 0.0)
        .or_else(|| BoundingBox::of(&truth.apply_all(&model)))
        .unwrap_or(BoundingBox { min: Point3::zeros(), max: Point3::repeat(1.0) });
    let sigma = Vector3::from(spec.noise.sigmas()) * reference.diagonal();
    let mut data: Vec<Point3> = clean.iter().map(|p| add_noise(&mut rng, p, &sigma)).collect();
    let span = BoundingBox::of(&data).filter(|b| b.volume() > 0.0).unwrap_or(reference);
    for _ in 0..spec.n_outliers {
        data.push(uniform_in(&mut rng, &span));
    }
    let labels = (0..spec.n_inliers).map(Label::Inlier).chain((0..spec.n_outliers).map(|_| Label::Outlier)).collect();
    Ok(RigidScene { model, data, ground_truth: truth, labels })
}
