//! Gaussian mixture with a uniform outlier class: posteriors (E-step),
//! virtual observations, MAP classification, and the observed-data
//! log-likelihood.
//!
//! Component `i` is a Gaussian centred on the transformed model point μ_i
//! with covariance Σ_i. The extra class `n` (zero-based) is the uniform
//! outlier component. Its contribution to the posterior denominator is the
//! constant `1.5·√(2π)·r⁻³`, where `r` is the radius of the small sphere
//! that fixes the inlier prior.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Covariance3, Point3};

/// Components whose total posterior mass falls below this are unsupported.
pub const MIN_SUPPORT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    /// One full covariance per model point.
    PerComponent,
    /// A single full covariance pooled over all components.
    Common,
    /// Spherical variances σ_i²·I, pooled into one below [`SMALL_SCENE`] data points.
    Isotropic,
}

impl std::str::FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-component" => Ok(CovarianceMode::PerComponent),
            "common" => Ok(CovarianceMode::Common),
            "isotropic" => Ok(CovarianceMode::Isotropic),
            other => Err(Error::Parse(format!(
                "covariance mode `{other}` (expected per-component, common, or isotropic)"
            ))),
        }
    }
}

impl std::fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovarianceMode::PerComponent => "per-component",
            CovarianceMode::Common => "common",
            CovarianceMode::Isotropic => "isotropic",
        })
    }
}

/// Scenes with fewer data points than this default to a common covariance.
pub const SMALL_SCENE: usize = 50;

/// Parameters of the mixture and of the ECM iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    /// Radius `r` of the sphere defining the inlier prior.
    pub outlier_radius: f64,
    /// Volume `V` of the working space (used by the log-likelihood only).
    pub working_volume: f64,
    /// Initial spherical standard deviation.
    pub init_sigma: f64,
    /// Variance added to every estimated covariance.
    pub fatten_epsilon: f64,
    /// Convergence threshold on ‖R_new − R_old‖²_F.
    pub convergence_eps: f64,
    pub max_iterations: usize,
    pub covariance_mode: CovarianceMode,
}

impl MixtureConfig {
    /// Data-driven defaults for registering `n_components` model points
    /// against `data`.
    ///
    /// r = 0.05·diag, V = 1.1·bbox volume (floored at 10·n·v so the inlier
    /// spheres stay small against the working volume), init σ = diag,
    /// ε = 1e-6·diag², 1e-6 rotation threshold, 200 iterations, common
    /// covariance below [`SMALL_SCENE`] data points.
    pub fn for_data(data: &[Point3], n_components: usize) -> Self {
        let bb = BoundingBox::of(data);
        let mut diag = bb.map(|b| b.diagonal()).unwrap_or(0.0);
        if !(diag > 0.0) {
            diag = 1.0;
        }
        let r = 0.05 * diag;
        let v = sphere_volume(r);
        let vol = 1.1 * bb.map(|b| b.volume()).unwrap_or(0.0);
        let working_volume = vol.max(10.0 * n_components.max(1) as f64 * v);
        MixtureConfig {
            outlier_radius: r,
            working_volume,
            init_sigma: diag,
            fatten_epsilon: 1e-6 * diag * diag,
            convergence_eps: 1e-6,
            max_iterations: 200,
            covariance_mode: if data.len() < SMALL_SCENE {
                CovarianceMode::Common
            } else {
                CovarianceMode::PerComponent
            },
        }
    }

    pub fn with_mode(mut self, mode: CovarianceMode) -> Self {
        self.covariance_mode = mode;
        self
    }

    pub fn with_init_sigma(mut self, sigma: f64) -> Self {
        self.init_sigma = sigma;
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_outlier_radius(mut self, r: f64) -> Self {
        self.outlier_radius = r;
        self
    }

    /// Checks the invariants for a mixture with `n` Gaussian components.
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.outlier_radius > 0.0 && self.outlier_radius.is_finite()) {
            return bad(format!("outlier radius must be > 0, got {}", self.outlier_radius));
        }
        let nv = n as f64 * sphere_volume(self.outlier_radius);
        if !(self.working_volume > nv && self.working_volume.is_finite()) {
            return bad(format!(
                "working volume {} must exceed n·v = {nv}",
                self.working_volume
            ));
        }
        if !(self.init_sigma > 0.0 && self.init_sigma.is_finite()) {
            return bad(format!("init sigma must be > 0, got {}", self.init_sigma));
        }
        if !(self.fatten_epsilon >= 0.0 && self.fatten_epsilon.is_finite()) {
            return bad(format!("fatten epsilon must be >= 0, got {}", self.fatten_epsilon));
        }
        if !(self.convergence_eps >= 0.0) {
            return bad("convergence epsilon must be >= 0".into());
        }
        if self.max_iterations < 1 {
            return bad("max iterations must be >= 1".into());
        }
        Ok(())
    }
}

pub fn sphere_volume(r: f64) -> f64 {
    4.0 * PI * r.powi(3) / 3.0
}

/// The outlier term `1.5·√(2π)·r⁻³` of the 3-D posterior denominator.
pub fn outlier_constant(r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidConfig(format!("outlier radius must be > 0, got {r}")));
    }
    Ok(1.5 * (2.0 * PI).sqrt() * r.powi(-3))
}

/// Responsibilities α_ji; column `n` holds the outlier class.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    alpha: DMatrix<f64>,
}

impl Posteriors {
    /// Wraps a responsibility matrix after checking its rows.
    pub fn from_matrix(alpha: DMatrix<f64>) -> Result<Self> {
        if alpha.ncols() < 2 {
            return Err(Error::DimensionMismatch("posteriors need at least two columns".into()));
        }
        for (j, row) in alpha.row_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("posterior row {j} is not a distribution")));
            }
        }
        Ok(Posteriors { alpha })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn n_data(&self) -> usize {
        self.alpha.nrows()
    }

    /// Number of Gaussian components (excluding the outlier class).
    pub fn n_components(&self) -> usize {
        self.alpha.ncols() - 1
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.alpha[(j, i)]
    }

    pub fn outlier(&self, j: usize) -> f64 {
        self.alpha[(j, self.n_components())]
    }
}

/// Posterior-weighted mean of the data attached to each component.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualObservations {
    pub points: Vec<Point3>,
    pub weights: Vec<f64>,
    /// `false` when λ_i < [`MIN_SUPPORT`]; the point then holds the previous
    /// model position.
    pub supported: Vec<bool>,
}

impl VirtualObservations {
    pub fn any_supported(&self) -> bool {
        self.supported.iter().any(|&s| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Inlier(usize),
    Outlier,
}

impl Label {
    pub fn component(&self) -> Option<usize> {
        match self {
            Label::Inlier(i) => Some(*i),
            Label::Outlier => None,
        }
    }
}

/// One label per data point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment(pub Vec<Label>);

impl Assignment {
    pub fn labels(&self) -> &[Label] {
        &self.0
    }

    pub fn n_inliers(&self) -> usize {
        self.0.iter().filter(|l| matches!(l, Label::Inlier(_))).count()
    }
}

fn check_shapes(data: &[Point3], model: &[Point3], covs: &[Covariance3]) -> Result<()> {
    if model.is_empty() || data.is_empty() {
        return Err(Error::DimensionMismatch("need at least one data and one model point".into()));
    }
    if model.len() != covs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} model points but {} covariances",
            model.len(),
            covs.len()
        )));
    }
    Ok(())
}

/// Per-component log weights −½·log|Σ_i| − ½·‖Y − μ_i‖²_Σi for one data point.
fn component_log_terms(y: &Point3, model: &[Point3], covs: &[Covariance3], out: &mut [f64]) {
    for ((o, mu), c) in out.iter_mut().zip(model).zip(covs) {
        *o = -0.5 * c.log_det() - 0.5 * c.mahalanobis_sq(y, mu);
    }
}

/// Evaluates the posteriors, computed row-wise in log space with a max shift.
///
/// The outlier weight is the constant `1.5·√(2π)·r⁻³` scaled by the outlier
/// prior (V − n·v)/V, which makes α the exact Bayes posterior of the mixture
/// scored by [`observed_log_likelihood`]. When V ≤ n·v the outlier class
/// gets zero weight.
pub fn e_step(
    data: &[Point3],
    transformed_model: &[Point3],
    covariances: &[Covariance3],
    config: &MixtureConfig,
) -> Result<Posteriors> {
    check_shapes(data, transformed_model, covariances)?;
    let n = transformed_model.len();
    let vol = config.working_volume;
    let p_out = ((vol - n as f64 * sphere_volume(config.outlier_radius)) / vol).max(0.0);
    let log_out = outlier_constant(config.outlier_radius)?.ln() + p_out.ln();
    let mut alpha = DMatrix::zeros(data.len(), n + 1);
    let mut logs = vec![0.0; n + 1];
    for (j, y) in data.iter().enumerate() {
        component_log_terms(y, transformed_model, covariances, &mut logs[..n]);
        logs[n] = log_out;
        let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logs.iter_mut() {
            *l = (*l - shift).exp();
            total += *l;
        }
        for (i, l) in logs.iter().enumerate() {
            alpha[(j, i)] = l / total;
        }
    }
    Ok(Posteriors { alpha })
}

/// λ_i = Σ_j α_ji and W_i = Σ_j α_ji·Y_j / λ_i. Components with negligible
/// mass are flagged and keep `previous[i]`.
pub fn virtual_observations(
    data: &[Point3],
    post: &Posteriors,
    previous: &[Point3],
) -> Result<VirtualObservations> {
    let n = post.n_components();
    if post.n_data() != data.len() || previous.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "posteriors are {}×{} but got {} data and {} model points",
            post.n_data(),
            n + 1,
            data.len(),
            previous.len()
        )));
    }
    let mut points = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut supported = Vec::with_capacity(n);
    for i in 0..n {
        let col = post.alpha.column(i);
        let lambda: f64 = col.iter().sum();
        let ok = lambda >= MIN_SUPPORT;
        let w = if ok {
            let s = data.iter().zip(col.iter()).fold(Point3::zeros(), |acc, (y, a)| acc + y * *a);
            s / lambda
        } else {
            previous[i]
        };
        points.push(w);
        weights.push(lambda);
        supported.push(ok);
    }
    Ok(VirtualObservations { points, weights, supported })
}

/// Arg-max over each row; ties go to the lowest component index and the
/// outlier class loses every tie.
pub fn map_classify(post: &Posteriors) -> Assignment {
    let n = post.n_components();
    let labels = post
        .alpha
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for i in 1..n {
                if row[i] > row[best] {
                    best = i;
                }
            }
            if row[n] > row[best] {
                Label::Outlier
            } else {
                Label::Inlier(best)
            }
        })
        .collect();
    Assignment(labels)
}

/// Σ_j log(Σ_i p_in·𝒩(Y_j | μ_i, Σ_i) + p_out/V) with p_in = v/V and
/// p_out = (V − n·v)/V.
pub fn observed_log_likelihood(
    data: &[Point3],
    transformed_model: &[Point3],
    covariances: &[Covariance3],
    config: &MixtureConfig,
) -> Result<f64> {
    check_shapes(data, transformed_model, covariances)?;
    config.validate(transformed_model.len())?;
    let n = transformed_model.len();
    let vol = config.working_volume;
    let v = sphere_volume(config.outlier_radius);
    let log_pin = (v / vol).ln() - 1.5 * (2.0 * PI).ln();
    let log_out = ((vol - n as f64 * v) / vol).ln() - vol.ln();
    let mut logs = vec![0.0; n + 1];
    let mut total = 0.0;
    for y in data {
        component_log_terms(y, transformed_model, covariances, &mut logs[..n]);
        for l in logs[..n].iter_mut() {
            *l += log_pin;
        }
        logs[n] = log_out;
        total += log_sum_exp(&logs);
    }
    Ok(total)
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
