//! JSON file formats and point-cloud import.
//!
//! Matrices are nested row-major arrays. Numbers are written in the
//! shortest form that parses back to the same `f64`, so write-then-read
//! is exact.

use std::fs;
use std::path::Path;

use ecmpr::articulated::{ArticulatedModel, JointSpec, Part, PoseParams};
use ecmpr::geometry::{Homogeneous4, Point3, RigidTransform, Rotation};
use ecmpr::mixture::Label;
use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Failures of file handling, split the way exit codes are.
#[derive(Debug)]
pub enum IoError {
    /// The file could not be read or written.
    Io(String),
    /// The content is malformed; the message names the offending field.
    Parse(String),
}

impl std::fmt::Display for IoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IoError::Io(m) | IoError::Parse(m) => f.write_str(m),
        }
    }
}

pub type IoResult<T> = std::result::Result<T, IoError>;

pub type Triple = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformFile {
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    pub t: Triple,
}

impl TransformFile {
    pub fn from_transform(tf: &RigidTransform) -> Self {
        let m = tf.rotation.matrix();
        TransformFile { r: std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])), t: tf.translation.into() }
    }

    pub fn to_transform(&self, field: &str) -> IoResult<RigidTransform> {
        let m = Matrix3::from_fn(|i, j| self.r[i][j]);
        let rotation = Rotation::try_from_matrix(m).map_err(|e| IoError::Parse(format!("{field}.R: {e}")))?;
        Ok(RigidTransform::new(rotation, Vector3::from(self.t)))
    }
}

pub fn matrix4_rows(h: &Homogeneous4) -> [[f64; 4]; 4] {
    let m = h.matrix();
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn homogeneous_from_rows(rows: &[[f64; 4]; 4], field: &str) -> IoResult<Homogeneous4> {
    Homogeneous4::try_from_matrix(Matrix4::from_fn(|i, j| rows[i][j])).map_err(|e| IoError::Parse(format!("{field}: {e}")))
}

pub fn to_triples(points: &[Point3]) -> Vec<Triple> {
    points.iter().map(|p| (*p).into()).collect()
}

pub fn to_points(triples: &[Triple], field: &str) -> IoResult<Vec<Point3>> {
    triples
        .iter()
        .enumerate()
        .map(|(k, t)| {
            if t.iter().all(|v| v.is_finite()) {
                Ok(Point3::from(*t))
            } else {
                Err(IoError::Parse(format!("{field}[{k}] has a non-finite coordinate")))
            }
        })
        .collect()
}

/// `inlier:i` or `outlier`.
pub fn label_to_string(l: &Label) -> String {
    match l {
        Label::Inlier(i) => format!("inlier:{i}"),
        Label::Outlier => "outlier".into(),
    }
}

pub fn parse_label(s: &str, field: &str) -> IoResult<Label> {
    if s == "outlier" {
        return Ok(Label::Outlier);
    }
    s.strip_prefix("inlier:")
        .and_then(|i| i.parse().ok())
        .map(Label::Inlier)
        .ok_or_else(|| IoError::Parse(format!("{field}: expected 'inlier:<index>' or 'outlier', got '{s}'")))
}

pub fn labels_to_strings(labels: &[Label]) -> Vec<String> {
    labels.iter().map(label_to_string).collect()
}

pub fn parse_labels(labels: &[String], field: &str) -> IoResult<Vec<Label>> {
    labels.iter().enumerate().map(|(k, s)| parse_label(s, &format!("{field}[{k}]"))).collect()
}

/// Rigid scene: model, observations and optional ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub model: Vec<Triple>,
    pub data: Vec<Triple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<TransformFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFile {
    /// Fixed transform from the parent frame to the joint frame.
    pub fixed_frame: [[f64; 4]; 4],
    /// Rotation axes, applied in this order.
    pub axes: Vec<Triple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartFile {
    pub name: String,
    #[serde(default)]
    pub parent: Option<usize>,
    #[serde(default)]
    pub joint: Option<JointFile>,
    pub model_points: Vec<Triple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub parts: Vec<PartFile>,
}

impl ModelFile {
    pub fn from_model(model: &ArticulatedModel) -> Self {
        let parts = model
            .parts()
            .iter()
            .map(|p| PartFile {
                name: p.name.clone(),
                parent: p.parent,
                joint: p.joint.as_ref().map(|j| JointFile {
                    fixed_frame: matrix4_rows(&j.fixed_frame),
                    axes: j.axes().iter().map(|a| (*a).into()).collect(),
                }),
                model_points: to_triples(&p.points),
            })
            .collect();
        ModelFile { parts }
    }

    pub fn to_model(&self) -> IoResult<ArticulatedModel> {
        let parts = self
            .parts
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let joint = match &p.joint {
                    None => None,
                    Some(j) => {
                        let frame = homogeneous_from_rows(&j.fixed_frame, &format!("parts[{k}].joint.fixed_frame"))?;
                        let axes = j.axes.iter().map(|a| Vector3::from(*a)).collect();
                        Some(
                            JointSpec::new(frame, axes)
                                .map_err(|e| IoError::Parse(format!("parts[{k}].joint.axes: {e}")))?,
                        )
                    }
                };
                Ok(Part {
                    name: p.name.clone(),
                    parent: p.parent,
                    joint,
                    points: to_points(&p.model_points, &format!("parts[{k}].model_points"))?,
                })
            })
            .collect::<IoResult<Vec<_>>>()?;
        ArticulatedModel::new(parts).map_err(|e| IoError::Parse(format!("parts: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub root: TransformFile,
    /// Joint angles in radians, one list per part in axis order.
    pub joints_rad: Vec<Vec<f64>>,
}

impl PoseFile {
    pub fn from_pose(pose: &PoseParams) -> Self {
        PoseFile { root: TransformFile::from_transform(&pose.root), joints_rad: pose.joints.clone() }
    }

    pub fn to_pose(&self, field: &str) -> IoResult<PoseParams> {
        Ok(PoseParams { root: self.root.to_transform(&format!("{field}.root"))?, joints: self.joints_rad.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFile {
    pub data: Vec<Triple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PoseFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

/// Articulated scene: the model and one or more frames of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedSceneFile {
    pub model: ModelFile,
    pub frames: Vec<FrameFile>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_inliers: usize,
    pub n_outliers: usize,
    /// Mean outlier posterior over the data points.
    pub mean_outlier_posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidResultFile {
    pub transform: TransformFile,
    pub assignments: Vec<String>,
    pub posteriors: PosteriorSummary,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<ecmpr::bench::metrics::Metrics>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartResultFile {
    pub name: String,
    pub registered: bool,
    pub iterations: usize,
    pub converged: bool,
    pub n_inliers: usize,
    pub log_likelihood_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub root_rotation_error_deg: f64,
    pub root_translation_error: f64,
    pub mean_joint_error_deg: f64,
    pub max_joint_error_deg: f64,
    pub correct_match_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResultFile {
    pub pose: PoseFile,
    /// World transform of every part.
    pub transforms: Vec<[[f64; 4]; 4]>,
    pub assignments: Vec<String>,
    pub parts: Vec<PartResultFile>,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<FrameMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedResultFile {
    pub frames: Vec<FrameResultFile>,
    pub config: serde_json::Value,
}

/// Either kind of result, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResultFile {
    Rigid(RigidResultFile),
    Articulated(ArticulatedResultFile),
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> IoResult<T> {
    let text = fs::read_to_string(path).map_err(|e| IoError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| IoError::Parse(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> IoResult<()> {
    fs::write(path, text).map_err(|e| IoError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Points from a JSON array of triples, or from CSV with one `x,y,z` per
/// line and no header (chosen by the `.csv` extension).
pub fn read_points(path: &Path) -> IoResult<Vec<Point3>> {
    let field = path.display().to_string();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let text = fs::read_to_string(path).map_err(|e| IoError::Io(format!("cannot read {field}: {e}")))?;
        parse_csv_points(&text, &field)
    } else {
        let triples: Vec<Triple> = read_json(path)?;
        to_points(&triples, &field)
    }
}

pub fn parse_csv_points(text: &str, field: &str) -> IoResult<Vec<Point3>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| IoError::Parse(format!("{field} line {}: expected three numbers", k + 1)))?;
        match values.as_slice() {
            [x, y, z] if values.iter().all(|v| v.is_finite()) => out.push(Point3::new(*x, *y, *z)),
            _ => return Err(IoError::Parse(format!("{field} line {}: expected three finite numbers", k + 1))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ecmpr::articulated::{builtin, BUILTIN_MODELS};
    use proptest::prelude::*;

    fn round_trip<T: Serialize + DeserializeOwned>(v: &T) -> T {
        serde_json::from_str(&serde_json::to_string(v).unwrap()).unwrap()
    }

    #[test]
    fn builtin_models_round_trip() {
        for name in BUILTIN_MODELS {
            let model = builtin(name).unwrap();
            let file = ModelFile::from_model(&model);
            let back = round_trip(&file);
            assert_eq!(back, file);
            assert_eq!(back.to_model().unwrap(), model);
        }
    }

    #[test]
    fn labels_parse() {
        assert_eq!(parse_label("inlier:4", "l").unwrap(), Label::Inlier(4));
        assert_eq!(parse_label("outlier", "l").unwrap(), Label::Outlier);
        let err = parse_label("inlier:x", "labels[3]").unwrap_err();
        assert!(err.to_string().contains("labels[3]"));
    }

    #[test]
    fn csv_points() {
        let pts = parse_csv_points("1,2,3\n\n4.5, -1e-3 ,0\n", "f").unwrap();
        assert_eq!(pts, vec![Point3::new(1.0, 2.0, 3.0), Point3::new(4.5, -1e-3, 0.0)]);
        let err = parse_csv_points("1,2\n", "pts.csv").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn rotation_is_checked() {
        let tf = TransformFile { r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]], t: [0.0; 3] };
        assert!(tf.to_transform("ground_truth").unwrap_err().to_string().contains("ground_truth.R"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn scene_files_round_trip_exactly(
            pts in prop::collection::vec(prop::array::uniform3(-1e6f64..1e6), 1..20),
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -3.0f64..3.0,
            t in prop::array::uniform3(-1e3f64..1e3),
        ) {
            prop_assume!(Vector3::from(axis).norm() > 1e-3);
            let tf = RigidTransform::new(Rotation::from_axis_angle(&Vector3::from(axis), angle), Vector3::from(t));
            let file = SceneFile {
                model: pts.clone(),
                data: pts,
                ground_truth: Some(TransformFile::from_transform(&tf)),
                labels: Some(vec!["outlier".into()]),
                meta: serde_json::json!({"seed": 3}),
            };
            let back: SceneFile = round_trip(&file);
            prop_assert_eq!(&back, &file);
            let tf_back = back.ground_truth.unwrap().to_transform("ground_truth").unwrap();
            prop_assert_eq!(tf_back, tf);
        }
    }
}
