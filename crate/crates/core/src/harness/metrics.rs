use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{SceneRun, SyntheticScene};
use crate::eval::{evaluate_mesh, EvalError};
use crate::graph::{AssignmentError, ParamKind, ParamValue, ParameterAssignment, ShapeGraph, Unit};
use crate::objective::{mesh_chamfer, ChamferError};

/// Surface samples per mesh for the mesh-to-mesh Chamfer metric.
pub const METRIC_SAMPLES: usize = 10000;
const METRIC_SEED: u64 = 0x6d65_7472_6963;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("scene was generated from graph {scene:?}, not {graph:?}")]
    GraphMismatch { scene: String, graph: String },
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Chamfer(#[from] ChamferError),
}

/// Recovery quality of one assignment against its scene's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Absolute error per continuous parameter, in cm for lengths and
    /// degrees for angles.
    pub continuous: IndexMap<String, f64>,
    pub rotation_deg: f64,
    pub translation_cm: f64,
    /// Whether each discrete parameter was recovered exactly.
    pub discrete: IndexMap<String, bool>,
    /// Symmetric squared Chamfer distance between the two meshes, m².
    pub chamfer_m2: f64,
    pub vertices: usize,
    pub faces: usize,
}

/// Angle difference in degrees folded into `[0, 180]`.
pub fn wrap_degrees(d: f64) -> f64 {
    let x = d.rem_euclid(360.0);
    x.min(360.0 - x)
}

fn display_scale(unit: Unit) -> f64 {
    match unit {
        Unit::Meter => 100.0,
        Unit::Radian => 180.0 / std::f64::consts::PI,
        Unit::Count | Unit::Flag => 1.0,
    }
}

pub fn evaluate_recovery(graph: &ShapeGraph, scene: &SyntheticScene, recovered: &ParameterAssignment) -> Result<MetricsReport, MetricsError> {
    if scene.graph != graph.name {
        return Err(MetricsError::GraphMismatch {
            scene: scene.graph.clone(),
            graph: graph.name.clone(),
        });
    }
    recovered.validate(graph)?;
    let truth = &scene.ground_truth;
    let mut continuous = IndexMap::new();
    let mut discrete = IndexMap::new();
    for p in &graph.parameters {
        let (a, b) = (truth.get(&p.name), recovered.get(&p.name));
        match p.kind() {
            ParamKind::Float => {
                let d = (a.map_or(f64::NAN, ParamValue::as_f64) - b.map_or(f64::NAN, ParamValue::as_f64)).abs();
                continuous.insert(p.name.clone(), d * display_scale(p.unit));
            }
            _ => {
                discrete.insert(p.name.clone(), a == b);
            }
        }
    }
    let rotation_deg = wrap_degrees((truth.pose.rotation - recovered.pose.rotation).to_degrees());
    let t = (0..3)
        .map(|k| (truth.pose.translation[k] - recovered.pose.translation[k]).powi(2))
        .sum::<f64>()
        .sqrt();
    let gt_mesh = evaluate_mesh(graph, truth, None)?;
    let mesh = evaluate_mesh(graph, recovered, None)?;
    let chamfer_m2 = mesh_chamfer(&gt_mesh, &mesh, METRIC_SAMPLES, METRIC_SEED)?;
    Ok(MetricsReport {
        continuous,
        rotation_deg,
        translation_cm: t * 100.0,
        discrete,
        chamfer_m2,
        vertices: mesh.vertices.len(),
        faces: mesh.faces.len(),
    })
}

/// Variant-level summary over scenes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenes: usize,
    pub continuous_mae: IndexMap<String, f64>,
    pub rotation_mae_deg: f64,
    pub translation_mae_cm: f64,
    /// Percent of scenes recovering each discrete parameter exactly.
    pub discrete_accuracy: IndexMap<String, f64>,
    pub chamfer_mean_m2: f64,
    pub mean_vertices: f64,
    /// Median evaluations to reach the success threshold; runs that never
    /// reach it count as infinitely long. `None` when that median is infinite.
    pub median_evaluations_to_tau: Option<f64>,
    pub reached_tau: usize,
    pub total_evaluations: u64,
    pub mean_loss: f64,
}

/// Mean that does not depend on the order of `values`.
fn stable_mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median with `None` read as +∞; `None` if the median itself is infinite.
pub fn median_censored(values: &[Option<u64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.map_or(f64::INFINITY, |n| n as f64)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
    m.is_finite().then_some(m)
}

pub fn aggregate(runs: &[SceneRun]) -> Aggregate {
    let Some(first) = runs.first() else {
        return Aggregate::default();
    };
    let continuous_mae = first
        .metrics
        .continuous
        .keys()
        .map(|k| (k.clone(), stable_mean(runs.iter().map(|r| r.metrics.continuous[k]).collect())))
        .collect();
    let discrete_accuracy = first
        .metrics
        .discrete
        .keys()
        .map(|k| {
            let hits = runs.iter().filter(|r| r.metrics.discrete[k]).count();
            (k.clone(), 100.0 * hits as f64 / runs.len() as f64)
        })
        .collect();
    let to_tau: Vec<Option<u64>> = runs.iter().map(|r| r.evaluations_to_tau).collect();
    Aggregate {
        scenes: runs.len(),
        continuous_mae,
        rotation_mae_deg: stable_mean(runs.iter().map(|r| r.metrics.rotation_deg).collect()),
        translation_mae_cm: stable_mean(runs.iter().map(|r| r.metrics.translation_cm).collect()),
        discrete_accuracy,
        chamfer_mean_m2: stable_mean(runs.iter().map(|r| r.metrics.chamfer_m2).collect()),
        mean_vertices: stable_mean(runs.iter().map(|r| r.metrics.vertices as f64).collect()),
        median_evaluations_to_tau: median_censored(&to_tau),
        reached_tau: to_tau.iter().filter(|x| x.is_some()).count(),
        total_evaluations: runs.iter().map(|r| r.evaluations).sum(),
        mean_loss: stable_mean(runs.iter().map(|r| r.loss).collect()),
    }
}
