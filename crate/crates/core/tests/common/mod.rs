//! Randomized property suites shared by the `properties` and `acceptance`
//! targets. Each suite runs a fixed number of cases from a deterministic
//! RNG, so a failure reproduces exactly.

use ecmpr::articulated::{builtin, forward_kinematics, ArticulatedModel, PoseParams, BUILTIN_MODELS};
use ecmpr::bench::articulated::gen_articulated_scene;
use ecmpr::bench::scene::{gen_rigid_scene, NoiseModel, RigidSceneSpec, RotationSpec, TranslationSpec};
use ecmpr::geometry::{compose, Covariance3, Homogeneous4, Point3, RigidTransform, Rotation};
use ecmpr::mixture::{e_step, MixtureConfig};
use ecmpr::rigid::optimal_translation;
use ecmpr::sdp::{build_constraints, build_problem, vec3x3};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub struct SuiteReport {
    pub name: &'static str,
    pub cases: u32,
    pub outcome: Result<(), String>,
}

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run<S: Strategy>(
    name: &'static str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> SuiteReport {
    let outcome = runner(cases).run(&strategy, test).map_err(|e| e.to_string());
    SuiteReport { name, cases, outcome }
}

fn point(scale: f64) -> impl Strategy<Value = Point3> {
    prop::array::uniform3(-scale..scale).prop_map(Point3::from)
}

fn rotation() -> impl Strategy<Value = Rotation> {
    prop::array::uniform3(-3.0f64..3.0).prop_map(|w| Rotation::from_rotation_vector(&Vector3::from(w)))
}

fn covariance() -> impl Strategy<Value = Covariance3> {
    (prop::array::uniform3(0.05f64..3.0), rotation()).prop_map(|(d, r)| {
        let m = r.matrix() * Matrix3::from_diagonal(&Vector3::from(d)) * r.matrix().transpose();
        Covariance3::new(0.5 * (m + m.transpose())).unwrap()
    })
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

/// Every posterior row is a distribution over the components and the
/// outlier class.
pub fn posterior_normalization() -> SuiteReport {
    let strategy = (
        prop::collection::vec(point(5.0), 1..15),
        prop::collection::vec((point(5.0), covariance()), 1..10),
        0.05f64..3.0,
    );
    run("posterior normalization", 250, strategy, |(data, comps, r)| {
        let (mu, covs): (Vec<_>, Vec<_>) = comps.into_iter().unzip();
        let mut all = data.clone();
        all.extend(mu.iter().copied());
        let cfg = MixtureConfig::for_data(&all, mu.len()).with_outlier_radius(r);
        let cfg = MixtureConfig { working_volume: cfg.working_volume.max(1e3 * mu.len() as f64 * r.powi(3)), ..cfg };
        let post = e_step(&data, &mu, &covs, &cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for j in 0..data.len() {
            let row: f64 = (0..mu.len()).map(|i| post.get(j, i)).sum::<f64>() + post.outlier(j);
            check((row - 1.0).abs() < 1e-12, || format!("row {j} sums to {row}"))?;
            for i in 0..=mu.len() {
                let a = post.matrix()[(j, i)];
                check((0.0..=1.0).contains(&a), || format!("posterior ({j}, {i}) = {a}"))?;
            }
        }
        Ok(())
    })
}

/// rᵀΔ_kl r = (RRᵀ)_kl for any 3×3 R, hence δ_kl for rotations.
pub fn delta_identities() -> SuiteReport {
    let strategy = (prop::array::uniform9(-2.0f64..2.0), rotation());
    run("orthonormality constraint identities", 250, strategy, |(entries, rot)| {
        let cons = build_constraints();
        let m = Matrix3::from_row_slice(&entries);
        let rm = vec3x3(&m);
        let rr = vec3x3(rot.matrix());
        let gram = m * m.transpose();
        for (idx, &(k, l)) in cons.pairs.iter().enumerate() {
            let d = &cons.deltas[idx];
            let general = rm.dot(&(d * rm));
            check((general - gram[(k, l)]).abs() < 1e-12, || format!("Δ_{k}{l}: {general} vs {}", gram[(k, l)]))?;
            let on_rotation = rr.dot(&(d * rr));
            check((on_rotation - cons.targets[idx]).abs() < 1e-12, || format!("rotation gives {on_rotation} for Δ_{k}{l}"))?;
            check((d - d.transpose()).norm() == 0.0, || format!("Δ_{k}{l} is not symmetric"))?;
        }
        Ok(())
    })
}

/// ½(rᵀAr + 2bᵀr) equals the translation-optimized criterion
/// ½Σλ_i‖W_i − R X_i − t*‖²_Σi up to a constant: differences between two
/// rotations agree.
pub fn kronecker_objective_identity() -> SuiteReport {
    let strategy = (prop::collection::vec((point(2.0), point(2.0), 0.05f64..2.0, covariance()), 3..12), rotation(), rotation());
    run("quadratic form equals the criterion", 200, strategy, |(terms, r1, r2)| {
        let w: Vec<Point3> = terms.iter().map(|t| t.0).collect();
        let x: Vec<Point3> = terms.iter().map(|t| t.1).collect();
        let lambda: Vec<f64> = terms.iter().map(|t| t.2).collect();
        let covs: Vec<Covariance3> = terms.iter().map(|t| t.3).collect();
        let prob = build_problem(&w, &lambda, &covs, &x).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let criterion = |r: &Rotation| -> Result<f64, TestCaseError> {
            let t = optimal_translation(&w, &lambda, &covs, r, &x).map_err(|e| TestCaseError::fail(e.to_string()))?;
            Ok(0.5
                * terms
                    .iter()
                    .map(|(wi, xi, li, ci)| li * ci.mahalanobis_sq(wi, &(r.apply(xi) + t)))
                    .sum::<f64>())
        };
        let direct = criterion(&r1)? - criterion(&r2)?;
        let quadratic = prob.objective(&r1) - prob.objective(&r2);
        let scale = 1.0 + criterion(&r1)?.abs() + criterion(&r2)?.abs();
        check((direct - quadratic).abs() < 1e-9 * scale, || format!("criterion difference {direct} vs quadratic {quadratic}"))
    })
}

fn random_pose(model: &ArticulatedModel) -> impl Strategy<Value = PoseParams> {
    let dofs: Vec<usize> = model.rest_pose().joints.iter().map(|j| j.len()).collect();
    let joints = dofs.into_iter().map(|d| prop::collection::vec(-3.0f64..3.0, d)).collect::<Vec<_>>();
    (rotation(), point(3.0), joints).prop_map(|(r, t, joints)| PoseParams { root: RigidTransform::new(r, t), joints })
}

/// T_p = T_parent · F_p · J_p(θ) for every jointed part, and T_root is the
/// root transform.
pub fn forward_kinematics_recomposition() -> SuiteReport {
    let strategy = (0..BUILTIN_MODELS.len()).prop_flat_map(|k| {
        let model = builtin(BUILTIN_MODELS[k]).unwrap();
        (Just(k), random_pose(&model))
    });
    run("forward kinematics recomposition", 200, strategy, |(k, pose)| {
        let model = builtin(BUILTIN_MODELS[k]).unwrap();
        let t = forward_kinematics(&model, &pose).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let root_residual = (t.get(0).matrix() - pose.root.to_homogeneous().matrix()).abs().max();
        check(root_residual < 1e-12, || format!("root residual {root_residual}"))?;
        for (p, part) in model.parts().iter().enumerate() {
            let (Some(q), Some(joint)) = (part.parent, &part.joint) else { continue };
            let expected = compose(&compose(t.get(q), &joint.fixed_frame), &Homogeneous4::from_rotation(&joint.rotation(&pose.joints[p])));
            let residual = (t.get(p).matrix() - expected.matrix()).abs().max();
            check(residual < 1e-12, || format!("{} part {p}: residual {residual}", BUILTIN_MODELS[k]))?;
        }
        Ok(())
    })
}

fn noise() -> impl Strategy<Value = NoiseModel> {
    prop_oneof![
        Just(NoiseModel::None),
        (0.0f64..0.3).prop_map(NoiseModel::Isotropic),
        prop::array::uniform3(0.0f64..0.3).prop_map(NoiseModel::Anisotropic),
    ]
}

/// Generators are pure functions of their seed and label every point.
pub fn generator_determinism() -> SuiteReport {
    let rigid = (1usize..25, 0usize..25, 0usize..15, 0.0f64..180.0, noise(), any::<u64>(), any::<u64>()).prop_map(
        |(n_model, n_in, n_out, angle, noise, seed, stream)| RigidSceneSpec {
            n_model,
            n_inliers: n_in.min(n_model),
            n_outliers: n_out,
            rotation: RotationSpec::RandomAxis { angle_deg: angle },
            translation: TranslationSpec::Random,
            noise,
            seed,
            stream,
        },
    );
    let strategy = (rigid, 0..BUILTIN_MODELS.len(), noise(), 0.0f64..0.6, any::<u64>());
    run("generator determinism", 150, strategy, |(spec, k, art_noise, fraction, seed)| {
        let a = gen_rigid_scene(&spec).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = gen_rigid_scene(&spec).map_err(|e| TestCaseError::fail(e.to_string()))?;
        check(a == b, || "rigid scene differs between runs".into())?;
        check(a.data.len() == spec.n_inliers + spec.n_outliers && a.labels.len() == a.data.len(), || "wrong counts".into())?;
        let model = builtin(BUILTIN_MODELS[k]).unwrap();
        let poses = vec![model.rest_pose(); 2];
        let f1 = gen_articulated_scene(&model, &poses, art_noise, fraction, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let f2 = gen_articulated_scene(&model, &poses, art_noise, fraction, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
        check(f1 == f2, || "articulated frames differ between runs".into())?;
        let n_out = (fraction * model.n_points() as f64).round() as usize;
        check(f1[0].data.len() == model.n_points() + n_out, || "wrong articulated counts".into())
    })
}

pub fn all_suites() -> Vec<SuiteReport> {
    vec![
        posterior_normalization(),
        delta_identities(),
        kronecker_objective_identity(),
        forward_kinematics_recomposition(),
        generator_determinism(),
    ]
}
