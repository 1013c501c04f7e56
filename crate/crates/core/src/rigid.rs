//! ECM registration of a rigid point set against data with outliers.
//!
//! Each iteration runs one E-step followed by three conditional
//! maximizations: rotation (translation profiled out), translation, then
//! covariances. The rotation step uses the relaxation in [`crate::sdp`]
//! unless the covariances are isotropic, where the weighted Procrustes
//! solution is exact.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_to_rotation, BoundingBox, Covariance3, Point3, RigidTransform, Rotation};
use crate::mixture::{
    e_step, map_classify, observed_log_likelihood, virtual_observations, Assignment, CovarianceMode, MixtureConfig,
    Posteriors, MIN_SUPPORT, SMALL_SCENE,
};
use crate::sdp::{
    build_constraints, build_problem, build_problem_fixed_translation, extract_rotation, refine_rotation, solve_sdp,
    QuadraticRotationProblem,
};

/// Covariances in one of the three parameterizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceEstimate {
    PerComponent(Vec<Covariance3>),
    Common(Covariance3),
    /// σ_i² per component.
    Isotropic(Vec<f64>),
}

impl CovarianceEstimate {
    /// One covariance per component.
    pub fn expand(&self, n: usize) -> Result<Vec<Covariance3>> {
        match self {
            CovarianceEstimate::PerComponent(v) => {
                if v.len() != n {
                    return Err(Error::DimensionMismatch(format!("{} covariances for {n} components", v.len())));
                }
                Ok(v.clone())
            }
            CovarianceEstimate::Common(c) => Ok(vec![c.clone(); n]),
            CovarianceEstimate::Isotropic(s) => {
                if s.len() != n {
                    return Err(Error::DimensionMismatch(format!("{} variances for {n} components", s.len())));
                }
                s.iter().map(|&v| Covariance3::isotropic(v)).collect()
            }
        }
    }

    /// Smallest eigenvalue over all stored matrices.
    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            CovarianceEstimate::PerComponent(v) => v.iter().map(|c| c.min_eigenvalue()).fold(f64::INFINITY, f64::min),
            CovarianceEstimate::Common(c) => c.min_eigenvalue(),
            CovarianceEstimate::Isotropic(s) => s.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Output of a registration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidResult {
    pub transform: RigidTransform,
    pub covariances: CovarianceEstimate,
    #[serde(skip)]
    pub posteriors: Option<Posteriors>,
    pub assignment: Assignment,
    pub iterations: usize,
    pub final_log_likelihood: f64,
    /// Observed-data log-likelihood at the start of every iteration, then at
    /// the returned parameters.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    /// Iterations whose relaxation failed and fell back to the closed form.
    pub relaxation_fallbacks: usize,
}

impl RigidResult {
    pub fn posteriors(&self) -> Option<&Posteriors> {
        self.posteriors.as_ref()
    }
}

/// t* = (Σλ_iΣ_i⁻¹)⁻¹ Σλ_iΣ_i⁻¹(W_i − R X_i).
pub fn optimal_translation(
    w: &[Point3],
    lambda: &[f64],
    covs: &[Covariance3],
    r: &Rotation,
    x: &[Point3],
) -> Result<Vector3<f64>> {
    let n = x.len();
    if w.len() != n || lambda.len() != n || covs.len() != n {
        return Err(Error::DimensionMismatch("translation inputs differ in length".into()));
    }
    let mut info = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (((wi, &li), ci), xi) in w.iter().zip(lambda).zip(covs).zip(x) {
        if li <= 0.0 {
            continue;
        }
        let s = ci.inverse() * li;
        info += s;
        rhs += s * (wi - r.matrix() * xi);
    }
    Ok(crate::sdp::invert_information(&info)? * rhs)
}

/// Σ + εI as a covariance.
pub fn fatten(sigma: &Matrix3<f64>, eps: f64) -> Result<Covariance3> {
    Covariance3::new(0.5 * (sigma + sigma.transpose()) + Matrix3::identity() * eps)
}

/// Unnormalized scatter Σ_j α_ji (Y_j − μ_i)(Y_j − μ_i)ᵀ and mass λ_i.
fn scatters(data: &[Point3], post: &Posteriors, model: &[Point3]) -> Vec<(Matrix3<f64>, f64)> {
    (0..model.len())
        .map(|i| {
            let mut s = Matrix3::zeros();
            let mut lambda = 0.0;
            for (j, y) in data.iter().enumerate() {
                let a = post.get(j, i);
                if a > 0.0 {
                    let d = y - model[i];
                    s += d * d.transpose() * a;
                    lambda += a;
                }
            }
            (s, lambda)
        })
        .collect()
}

fn check_post(data: &[Point3], post: &Posteriors, model: &[Point3]) -> Result<()> {
    if post.n_data() != data.len() || post.n_components() != model.len() {
        return Err(Error::DimensionMismatch(format!(
            "posteriors are {}×{} for {} data and {} model points",
            post.n_data(),
            post.n_components() + 1,
            data.len(),
            model.len()
        )));
    }
    Ok(())
}

/// Weighted empirical covariances, fattened by ε. Components without
/// support get εI.
pub fn update_covariances(
    data: &[Point3],
    post: &Posteriors,
    transformed_model: &[Point3],
    mode: CovarianceMode,
    eps: f64,
) -> Result<CovarianceEstimate> {
    check_post(data, post, transformed_model)?;
    let sc = scatters(data, post, transformed_model);
    let per_component = || -> Vec<Matrix3<f64>> {
        sc.iter().map(|(s, l)| if *l >= MIN_SUPPORT { s / *l } else { Matrix3::zeros() }).collect()
    };
    match mode {
        CovarianceMode::PerComponent => {
            Ok(CovarianceEstimate::PerComponent(per_component().iter().map(|s| fatten(s, eps)).collect::<Result<_>>()?))
        }
        CovarianceMode::Common => {
            let (s, l) = sc.iter().fold((Matrix3::zeros(), 0.0), |(a, b), (s, l)| (a + s, b + l));
            let pooled = if l >= MIN_SUPPORT { s / l } else { Matrix3::zeros() };
            Ok(CovarianceEstimate::Common(fatten(&pooled, eps)?))
        }
        CovarianceMode::Isotropic => Ok(CovarianceEstimate::Isotropic(
            per_component().iter().map(|s| s.trace() / 3.0 + eps).collect(),
        )),
    }
}

/// Pooled isotropic variance trace(Σ_common)/3 + ε.
fn pooled_isotropic(data: &[Point3], post: &Posteriors, model: &[Point3], eps: f64) -> f64 {
    let (s, l) = scatters(data, post, model).iter().fold((0.0, 0.0), |(a, b), (s, l)| (a + s.trace(), b + l));
    if l >= MIN_SUPPORT {
        s / (3.0 * l) + eps
    } else {
        eps
    }
}

/// Weighted Procrustes with weights λ_i/σ_i² and a free translation.
pub fn rotation_isotropic(w: &[Point3], lambda: &[f64], sigma2: &[f64], x: &[Point3]) -> Result<Rotation> {
    let n = x.len();
    if w.len() != n || lambda.len() != n || sigma2.len() != n {
        return Err(Error::DimensionMismatch("rotation inputs differ in length".into()));
    }
    let weights: Vec<f64> = lambda.iter().zip(sigma2).map(|(l, s)| if *l > 0.0 { l / s } else { 0.0 }).collect();
    let total: f64 = weights.iter().sum();
    if weights.iter().filter(|&&v| v > 0.0).count() < 3 || !(total > 0.0) {
        return Err(Error::DegenerateGeometry);
    }
    let wbar = w.iter().zip(&weights).fold(Vector3::zeros(), |a, (p, k)| a + p * *k) / total;
    let xbar = x.iter().zip(&weights).fold(Vector3::zeros(), |a, (p, k)| a + p * *k) / total;
    let mut h = Matrix3::zeros();
    let mut xs = Matrix3::zeros();
    for ((wi, xi), k) in w.iter().zip(x).zip(&weights) {
        let dx = xi - xbar;
        h += (wi - wbar) * dx.transpose() * *k;
        xs += dx * dx.transpose() * *k;
    }
    // the model support must span at least a plane
    let sv = xs.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[1] > 1e-12 * sv[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateGeometry);
    }
    project_to_rotation(&h).map_err(|_| Error::DegenerateGeometry)
}

/// Weighted Procrustes with the translation held at `t0`.
fn rotation_isotropic_fixed(
    w: &[Point3],
    lambda: &[f64],
    sigma2: &[f64],
    x: &[Point3],
    t0: &Vector3<f64>,
) -> Result<Rotation> {
    let mut h = Matrix3::zeros();
    for (((wi, l), s), xi) in w.iter().zip(lambda).zip(sigma2).zip(x) {
        if *l > 0.0 {
            h += (wi - t0) * xi.transpose() * (l / s);
        }
    }
    project_to_rotation(&h).map_err(|_| Error::DegenerateGeometry)
}

/// How the translation is handled by the driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum TranslationMode {
    Free,
    /// Held at the given offset; only the rotation is estimated.
    Fixed(Vector3<f64>),
}

/// Starting point of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidInit {
    pub transform: RigidTransform,
}

impl Default for RigidInit {
    fn default() -> Self {
        RigidInit { transform: RigidTransform::identity() }
    }
}

/// Registers `model` to `data` from R = I, t = 0 and Σ_i = init_sigma²·I.
pub fn ecmpr_rigid(data: &[Point3], model: &[Point3], config: &MixtureConfig) -> Result<RigidResult> {
    ecmpr_rigid_from(data, model, config, RigidInit::default())
}

/// As [`ecmpr_rigid`] but starting from a given pose.
pub fn ecmpr_rigid_from(data: &[Point3], model: &[Point3], config: &MixtureConfig, init: RigidInit) -> Result<RigidResult> {
    run(data, model, config, init.transform, TranslationMode::Free)
}

/// Expected complete-data term −½[λ log|Σ| + tr(Σ⁻¹S)] for one covariance.
fn q_term(c: &Covariance3, scatter: &Matrix3<f64>, lambda: f64) -> f64 {
    -0.5 * (lambda * c.log_det() + c.inverse().component_mul(scatter).sum())
}

/// Isotropic mode pools a single σ² for small scenes, like the anisotropic
/// default does.
fn isotropic_is_pooled(m: usize) -> bool {
    m < SMALL_SCENE
}

/// New covariances, keeping the previous value wherever the fattened
/// estimate would lower the expected complete-data log-likelihood (or the
/// component has no support).
fn covariance_step(
    data: &[Point3],
    post: &Posteriors,
    model: &[Point3],
    config: &MixtureConfig,
    previous: &CovarianceEstimate,
) -> Result<CovarianceEstimate> {
    let eps = config.fatten_epsilon;
    let sc = scatters(data, post, model);
    match (config.covariance_mode, previous) {
        (CovarianceMode::PerComponent, CovarianceEstimate::PerComponent(prev)) => {
            let CovarianceEstimate::PerComponent(cand) =
                update_covariances(data, post, model, CovarianceMode::PerComponent, eps)?
            else {
                unreachable!()
            };
            let out = cand
                .into_iter()
                .zip(prev)
                .zip(&sc)
                .map(|((new, old), (s, l))| {
                    if *l >= MIN_SUPPORT && q_term(&new, s, *l) >= q_term(old, s, *l) {
                        new
                    } else {
                        old.clone()
                    }
                })
                .collect();
            Ok(CovarianceEstimate::PerComponent(out))
        }
        (CovarianceMode::Common, CovarianceEstimate::Common(old)) => {
            let (s, l) = sc.iter().fold((Matrix3::zeros(), 0.0), |(a, b), (s, l)| (a + s, b + l));
            let new = match update_covariances(data, post, model, CovarianceMode::Common, eps)? {
                CovarianceEstimate::Common(c) => c,
                _ => unreachable!(),
            };
            let keep_new = l >= MIN_SUPPORT && q_term(&new, &s, l) >= q_term(old, &s, l);
            Ok(CovarianceEstimate::Common(if keep_new { new } else { old.clone() }))
        }
        (CovarianceMode::Isotropic, CovarianceEstimate::Isotropic(prev)) => {
            let q_iso = |var: f64, s: &Matrix3<f64>, l: f64| -0.5 * (3.0 * l * var.ln() + s.trace() / var);
            if isotropic_is_pooled(data.len()) {
                let (s, l) = sc.iter().fold((Matrix3::zeros(), 0.0), |(a, b), (s, l)| (a + s, b + l));
                let new = pooled_isotropic(data, post, model, eps);
                let old = prev[0];
                let v = if l >= MIN_SUPPORT && q_iso(new, &s, l) >= q_iso(old, &s, l) { new } else { old };
                Ok(CovarianceEstimate::Isotropic(vec![v; model.len()]))
            } else {
                let cand = match update_covariances(data, post, model, CovarianceMode::Isotropic, eps)? {
                    CovarianceEstimate::Isotropic(v) => v,
                    _ => unreachable!(),
                };
                let out = cand
                    .into_iter()
                    .zip(prev)
                    .zip(&sc)
                    .map(|((new, &old), (s, l))| {
                        if *l >= MIN_SUPPORT && q_iso(new, s, *l) >= q_iso(old, s, *l) {
                            new
                        } else {
                            old
                        }
                    })
                    .collect();
                Ok(CovarianceEstimate::Isotropic(out))
            }
        }
        _ => Err(Error::InvalidConfig("covariance mode changed during a run".into())),
    }
}

fn initial_covariances(config: &MixtureConfig, n: usize) -> Result<CovarianceEstimate> {
    let var = config.init_sigma * config.init_sigma;
    Ok(match config.covariance_mode {
        CovarianceMode::PerComponent => CovarianceEstimate::PerComponent(vec![Covariance3::isotropic(var)?; n]),
        CovarianceMode::Common => CovarianceEstimate::Common(Covariance3::isotropic(var)?),
        CovarianceMode::Isotropic => CovarianceEstimate::Isotropic(vec![var; n]),
    })
}

/// Outcome of one rotation CM-step.
struct RotationStep {
    rotation: Rotation,
    fell_back: bool,
}

/// Rotation CM-step. The candidate from the relaxation (or the closed form)
/// is refined and kept only if it does not raise the quadratic criterion
/// relative to `previous`.
fn rotation_step(
    prob: &QuadraticRotationProblem,
    previous: &Rotation,
    closed_form: impl Fn() -> Result<Rotation>,
    isotropic: bool,
) -> RotationStep {
    if prob.is_degenerate() {
        return RotationStep { rotation: *previous, fell_back: false };
    }
    let mut fell_back = false;
    let start = if isotropic {
        closed_form().ok()
    } else {
        match solve_sdp(prob, &build_constraints()).and_then(|sol| extract_rotation(&sol)) {
            Ok(r) => Some(r),
            Err(_) => {
                fell_back = true;
                closed_form().ok()
            }
        }
    };
    let f_prev = prob.objective(previous);
    let mut best = (*previous, f_prev);
    let candidates = start.into_iter().map(|r| if isotropic { r } else { refine_rotation(&r, prob) });
    for cand in candidates.chain(std::iter::once(refine_rotation(previous, prob))) {
        let f = prob.objective(&cand);
        if f < best.1 {
            best = (cand, f);
        }
    }
    RotationStep { rotation: best.0, fell_back }
}

pub(crate) fn run(
    data: &[Point3],
    model: &[Point3],
    config: &MixtureConfig,
    init: RigidTransform,
    translation: TranslationMode,
) -> Result<RigidResult> {
    let n = model.len();
    if n < 3 {
        return Err(Error::InvalidConfig(format!("need at least 3 model points, got {n}")));
    }
    if data.is_empty() {
        return Err(Error::InvalidConfig("need at least one data point".into()));
    }
    config.validate(n)?;

    let scale = BoundingBox::of(data).map(|b| b.diagonal()).filter(|d| *d > 0.0).unwrap_or(1.0);
    let mut rot = init.rotation;
    let mut t = match translation {
        TranslationMode::Free => init.translation,
        TranslationMode::Fixed(t0) => t0,
    };
    let mut covs = initial_covariances(config, n)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut fallbacks = 0;
    let mut ever_supported = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let moved: Vec<Point3> = model.iter().map(|x| rot.matrix() * x + t).collect();
        let full = covs.expand(n)?;
        let post = e_step(data, &moved, &full, config)?;
        trace.push(observed_log_likelihood(data, &moved, &full, config)?);
        let vo = virtual_observations(data, &post, &moved)?;
        let lambda: Vec<f64> = vo.weights.iter().zip(&vo.supported).map(|(l, s)| if *s { *l } else { 0.0 }).collect();

        let prev_rot = rot;
        let prev_t = t;
        if vo.any_supported() {
            ever_supported = true;
            let isotropic = matches!(covs, CovarianceEstimate::Isotropic(_));
            let sigma2: Vec<f64> = full.iter().map(|c| c.mean_variance()).collect();
            let prob = match translation {
                TranslationMode::Free => build_problem(&vo.points, &lambda, &full, model),
                TranslationMode::Fixed(t0) => build_problem_fixed_translation(&vo.points, &lambda, &full, model, &t0),
            };
            match prob {
                Ok(prob) => {
                    let closed = || match translation {
                        TranslationMode::Free => rotation_isotropic(&vo.points, &lambda, &sigma2, model),
                        TranslationMode::Fixed(t0) => {
                            rotation_isotropic_fixed(&vo.points, &lambda, &sigma2, model, &t0)
                        }
                    };
                    let step = rotation_step(&prob, &rot, closed, isotropic);
                    fallbacks += step.fell_back as usize;
                    rot = step.rotation;
                }
                Err(Error::NoSupport) => {}
                Err(e) => return Err(e),
            }
            if translation == TranslationMode::Free {
                match optimal_translation(&vo.points, &lambda, &full, &rot, model) {
                    Ok(new_t) => t = new_t,
                    Err(Error::NoSupport) => {}
                    Err(e) => return Err(e),
                }
            }
            let moved: Vec<Point3> = model.iter().map(|x| rot.matrix() * x + t).collect();
            covs = covariance_step(data, &post, &moved, config, &covs)?;
        }

        // the pose test alone can fire before the covariances have adapted,
        // so the likelihood must also have settled
        let d_rot = (rot.matrix() - prev_rot.matrix()).norm_squared();
        let d_t = (t - prev_t).norm_squared() / (scale * scale);
        let settled = match trace.as_slice() {
            [.., a, b] => (b - a).abs() <= config.convergence_eps * b.abs().max(1.0),
            _ => false,
        };
        if d_rot < config.convergence_eps && d_t < config.convergence_eps && settled {
            converged = true;
            break;
        }
    }

    let moved: Vec<Point3> = model.iter().map(|x| rot.matrix() * x + t).collect();
    let full = covs.expand(n)?;
    let post = e_step(data, &moved, &full, config)?;
    let final_ll = observed_log_likelihood(data, &moved, &full, config)?;
    trace.push(final_ll);
    let assignment = map_classify(&post);
    if !ever_supported && assignment.n_inliers() == 0 {
        return Err(Error::NoSupport);
    }
    Ok(RigidResult {
        transform: RigidTransform::new(rot, t),
        covariances: covs,
        posteriors: Some(post),
        assignment,
        iterations,
        final_log_likelihood: final_ll,
        log_likelihood_trace: trace,
        converged,
        relaxation_fallbacks: fallbacks,
    })
}
