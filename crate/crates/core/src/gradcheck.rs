//! Finite-difference audit of the reverse-mode Chamfer gradients.
//!
//! Each trial draws a target shape and a probe assignment, freezes the probe's
//! surface samples and nearest-neighbor pairing, and compares every analytic
//! derivative with a central difference of the same frozen loss.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{backward, evaluate, evaluate_mesh, EvalError, NodeCache};
use crate::graph::{ParamRange, ParamValue, ParameterAssignment, ShapeGraph};
use crate::objective::{chamfer, chamfer_frozen, chamfer_paired, sample_surface, ChamferError, PointIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub trials: usize,
    /// Central-difference half step.
    pub step: f64,
    pub surface_samples: usize,
    pub target_points: usize,
    pub tolerance: f64,
    /// Magnitude below which a derivative counts as zero when forming the
    /// relative error.
    pub zero_floor: f64,
    /// Also difference the resampled loss, for information only.
    pub resampled: bool,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            trials: 20,
            step: 1e-4,
            surface_samples: 2048,
            target_points: 2048,
            tolerance: 1e-3,
            zero_floor: 1e-8,
            resampled: false,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Chamfer(#[from] ChamferError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    /// Parameter name, or `pose.rotation` / `pose.translation.{x,y,z}`.
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// Central difference of the loss with fresh samples and pairing at each
    /// side; kinks make this noisy.
    pub resampled_numeric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub probe: ParameterAssignment,
    pub loss: f64,
    pub checks: Vec<DerivativeCheck>,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub graph: String,
    pub config: GradCheckConfig,
    pub trials: Vec<TrialReport>,
    pub max_rel_error: f64,
    /// Largest relative gap between the analytic derivative and the
    /// resampled difference, when that was computed.
    pub max_resampled_rel_error: Option<f64>,
    pub passed: bool,
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(b.abs()).max(floor)
}

/// A random assignment whose continuous values sit at least `margin` inside
/// their ranges, with a random up-axis rotation and a small offset.
fn interior_assignment(graph: &ShapeGraph, rng: &mut ChaCha8Rng, margin: f64) -> ParameterAssignment {
    let mut a = graph.random_assignment(rng);
    for p in graph.continuous_parameters() {
        if let ParamRange::Float { min, max } = p.range {
            let m = margin.min((max - min) / 4.0);
            a.set(p.name.clone(), ParamValue::Float(rng.gen_range(min + m..=max - m)));
        }
    }
    a.pose.rotation = rng.gen_range(0.0..TAU);
    a.pose.translation = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];
    a
}

fn nudged(a: &ParameterAssignment, coord: usize, names: &[String], delta: f64) -> ParameterAssignment {
    let mut out = a.clone();
    if coord < names.len() {
        let x = a.get(&names[coord]).map_or(0.0, ParamValue::as_f64);
        out.set(names[coord].clone(), ParamValue::Float(x + delta));
    } else if coord == names.len() {
        out.pose.rotation += delta;
    } else {
        out.pose.translation[coord - names.len() - 1] += delta;
    }
    out
}

pub fn gradient_check(graph: &ShapeGraph, config: &GradCheckConfig) -> Result<GradCheckReport, GradCheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let names: Vec<String> = graph.continuous_parameters().map(|p| p.name.clone()).collect();
    let labels: Vec<String> = names
        .iter()
        .cloned()
        .chain(["pose.rotation", "pose.translation.x", "pose.translation.y", "pose.translation.z"].map(String::from))
        .collect();
    let cache = NodeCache::new();
    let h = config.step;
    let mut trials = Vec::with_capacity(config.trials);
    let mut max_rel_error: f64 = 0.0;
    let mut max_resampled: Option<f64> = None;

    for trial in 0..config.trials {
        let target = interior_assignment(graph, &mut rng, 0.0);
        let target_mesh = evaluate_mesh(graph, &target, None)?;
        let points = sample_surface(&target_mesh, config.target_points, config.seed ^ trial as u64)?.positions(&target_mesh)?;
        let index = PointIndex::new(points)?;

        let probe = interior_assignment(graph, &mut rng, 2.0 * h);
        let result = evaluate(graph, &probe, &cache)?;
        let sample_seed = rng.gen();
        let samples = sample_surface(&result.mesh, config.surface_samples, sample_seed)?;
        let cd = chamfer_frozen(&index, &result.mesh, &samples)?;
        let grads = backward(&result, &cd.vertex_grad)?;
        let analytic: Vec<f64> = names
            .iter()
            .map(|n| grads.params.get(n).copied().unwrap_or(0.0))
            .chain([grads.rotation])
            .chain(grads.translation)
            .collect();

        let frozen_at = |a: &ParameterAssignment| -> Result<f64, GradCheckError> {
            let mesh = evaluate_mesh(graph, a, Some(&cache))?;
            Ok(chamfer_paired(&index, &mesh, &samples, &cd.pairs)?)
        };
        let resampled_at = |a: &ParameterAssignment| -> Result<f64, GradCheckError> {
            let mesh = evaluate_mesh(graph, a, Some(&cache))?;
            Ok(chamfer(&index, &mesh, config.surface_samples, sample_seed)?.value)
        };

        let mut checks = Vec::with_capacity(labels.len());
        let mut trial_max: f64 = 0.0;
        for (coord, label) in labels.iter().enumerate() {
            let plus = nudged(&probe, coord, &names, h);
            let minus = nudged(&probe, coord, &names, -h);
            let numeric = (frozen_at(&plus)? - frozen_at(&minus)?) / (2.0 * h);
            let rel_error = relative_error(analytic[coord], numeric, config.zero_floor);
            let resampled_numeric = if config.resampled {
                let n = (resampled_at(&plus)? - resampled_at(&minus)?) / (2.0 * h);
                let r = relative_error(analytic[coord], n, config.zero_floor);
                max_resampled = Some(max_resampled.map_or(r, |m: f64| m.max(r)));
                Some(n)
            } else {
                None
            };
            trial_max = trial_max.max(rel_error);
            checks.push(DerivativeCheck {
                name: label.clone(),
                analytic: analytic[coord],
                numeric,
                rel_error,
                resampled_numeric,
            });
        }
        max_rel_error = max_rel_error.max(trial_max);
        trials.push(TrialReport {
            probe,
            loss: cd.value,
            checks,
            max_rel_error: trial_max,
        });
    }

    Ok(GradCheckReport {
        graph: graph.name.clone(),
        config: config.clone(),
        trials,
        max_rel_error,
        max_resampled_rel_error: max_resampled,
        passed: max_rel_error < config.tolerance,
    })
}
