use serde::{Deserialize, Serialize};

use crate::eval::{evaluate, evaluate_mesh, EvalError, NodeCache};
use crate::graph::{ParamRange, ParamValue, ParameterAssignment, ShapeGraph};
use crate::objective::{LossBreakdown, ObjectiveError, SceneObjective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Learning-rate multiplier reached at the last step (geometric schedule).
    pub final_lr_fraction: f64,
    /// Scales each parameter's step by the width of its range.
    pub range_scaled: bool,
    pub refine_pose: bool,
    /// Surface samples for the Chamfer gradient; `None` uses the objective's
    /// own count. The returned iterate is always rescored with the objective.
    pub gradient_samples: Option<usize>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            steps: 100,
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            final_lr_fraction: 0.1,
            range_scaled: true,
            refine_pose: true,
            gradient_samples: Some(8192),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub params: ParameterAssignment,
    pub loss: Option<LossBreakdown>,
    /// Loss evaluations spent, one per visited iterate.
    pub evaluations: u64,
    pub steps: usize,
    /// Total loss of every scored iterate, in order.
    pub history: Vec<f64>,
    /// Reason refinement stopped early and fell back to the input.
    pub aborted: Option<String>,
}

#[derive(Debug, thiserror::Error)]
enum StepError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Adam on every continuous parameter (and optionally the pose) against the
/// weighted Chamfer term. Values are projected into their ranges after each
/// step; the iterate with the lowest total loss is returned.
pub fn refine(
    graph: &ShapeGraph,
    objective: &SceneObjective,
    params: &ParameterAssignment,
    config: &AdamConfig,
    cache: &NodeCache,
) -> RefineOutcome {
    let names: Vec<&str> = graph.continuous_parameters().map(|p| p.name.as_str()).collect();
    let scale: Vec<f64> = graph
        .continuous_parameters()
        .map(|p| match p.range {
            ParamRange::Float { min, max } if config.range_scaled => max - min,
            _ => 1.0,
        })
        .chain([1.0; 4])
        .collect();
    let mut x = params.clone();
    let dim = names.len() + 4;
    let (mut m, mut v) = (vec![0.0; dim], vec![0.0; dim]);
    let mut best: Option<(f64, ParameterAssignment, LossBreakdown)> = None;
    let mut history = Vec::with_capacity(config.steps + 1);
    let fallback = |history: Vec<f64>, steps, reason: String, loss| {
        log::warn!("refinement aborted: {reason}");
        RefineOutcome {
            params: params.clone(),
            loss,
            evaluations: history.len() as u64,
            steps,
            history,
            aborted: Some(reason),
        }
    };
    let mut input_loss = None;
    let gradient_samples = config.gradient_samples.unwrap_or(objective.config().chamfer_samples);
    let rescore = gradient_samples != objective.config().chamfer_samples;

    for step in 0..=config.steps {
        let evaluated = evaluate(graph, &x, cache)
            .map_err(StepError::from)
            .and_then(|r| Ok(objective.loss_with_gradients_sampled(&r, gradient_samples)?));
        let (loss, grads) = match evaluated {
            Ok(ok) => ok,
            Err(e) => return fallback(history, step, e.to_string(), input_loss),
        };
        history.push(loss.total);
        if step == 0 {
            input_loss = if rescore { score(graph, objective, &x, cache).ok() } else { Some(loss) };
        }
        if best.as_ref().map_or(true, |b| loss.total < b.0) {
            best = Some((loss.total, x.clone(), loss));
        }
        let Some(grads) = grads else { break };
        if step == config.steps {
            break;
        }
        if !grads.is_finite() {
            let culprit = grads
                .params
                .iter()
                .find(|(_, g)| !g.is_finite())
                .map_or_else(|| "pose".to_string(), |(n, _)| format!("parameter {n:?}"));
            return fallback(history, step, format!("non-finite gradient for {culprit}"), input_loss);
        }

        let mut g: Vec<f64> = names.iter().map(|n| grads.params.get(*n).copied().unwrap_or(0.0)).collect();
        if config.refine_pose {
            g.push(grads.rotation);
            g.extend(grads.translation);
        } else {
            g.extend([0.0; 4]);
        }
        let t = (step + 1) as i32;
        let progress = step as f64 / config.steps.max(1) as f64;
        let lr = config.learning_rate * config.final_lr_fraction.powf(progress);
        let mut delta = vec![0.0; dim];
        for k in 0..dim {
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
            let m_hat = m[k] / (1.0 - config.beta1.powi(t));
            let v_hat = v[k] / (1.0 - config.beta2.powi(t));
            delta[k] = -lr * scale[k] * m_hat / (v_hat.sqrt() + config.epsilon);
        }
        for (k, name) in names.iter().enumerate() {
            let spec = graph.parameter(name).expect("continuous parameter exists");
            let current = x.get(name).map_or(0.0, ParamValue::as_f64);
            x.set(*name, ParamValue::Float(spec.clamp_float(current + delta[k])));
        }
        let p = names.len();
        x.pose.rotation = (x.pose.rotation + delta[p]).rem_euclid(std::f64::consts::TAU);
        for a in 0..3 {
            x.pose.translation[a] += delta[p + 1 + a];
        }
    }

    let (_, params, mut loss) = best.expect("at least one iterate is scored");
    let mut evaluations = history.len() as u64;
    if rescore {
        match score(graph, objective, &params, cache) {
            Ok(l) => loss = l,
            Err(e) => return fallback(history, config.steps, e.to_string(), input_loss),
        }
        evaluations += 1;
    }
    RefineOutcome {
        params,
        loss: Some(loss),
        evaluations,
        steps: config.steps,
        history,
        aborted: None,
    }
}

fn score(graph: &ShapeGraph, objective: &SceneObjective, params: &ParameterAssignment, cache: &NodeCache) -> Result<LossBreakdown, StepError> {
    let mesh = evaluate_mesh(graph, params, Some(cache))?;
    Ok(objective.loss(&mesh)?)
}
