use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::eval::evaluate_mesh;
use crate::graph::{ParamRange, ParamValue, ParameterAssignment, ShapeGraph};
use crate::objective::mesh_chamfer;

/// What one tree level assigns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Rotation,
    Translation,
    Parameter(String),
}

impl Slot {
    pub fn label(&self) -> &str {
        match self {
            Slot::Rotation => "rotation",
            Slot::Translation => "translation",
            Slot::Parameter(name) => name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Candidate {
    Value(ParamValue),
    Translation([f64; 3]),
}

impl std::fmt::Display for Candidate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Candidate::Value(v) => write!(f, "{v}"),
            Candidate::Translation(t) => write!(f, "({} {} {})", t[0], t[1], t[2]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub slot: Slot,
    pub candidates: Vec<Candidate>,
    /// Ordering key; rotation and translation carry none.
    pub influence: Option<f64>,
}

/// Levels of the shape-parameter tree, root first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterTreeSpec {
    pub levels: Vec<Level>,
}

impl ParameterTreeSpec {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Writes the chosen candidate of every level into `base`.
    pub fn instantiate(&self, base: &ParameterAssignment, choice: &[usize]) -> ParameterAssignment {
        let mut out = base.clone();
        for (level, &c) in self.levels.iter().zip(choice) {
            match (&level.slot, level.candidates[c]) {
                (Slot::Rotation, Candidate::Value(v)) => out.pose.rotation = v.as_f64(),
                (Slot::Translation, Candidate::Translation(t)) => out.pose.translation = t,
                (Slot::Parameter(name), Candidate::Value(v)) => {
                    out.set(name.clone(), v);
                }
                _ => unreachable!("candidate kind matches its slot by construction"),
            }
        }
        out
    }

    pub fn level_of(&self, name: &str) -> Option<usize> {
        self.levels.iter().position(|l| matches!(&l.slot, Slot::Parameter(n) if n == name))
    }

    /// Number of distinct completions of levels `from..`, saturating.
    pub fn completions(&self, from: usize) -> u64 {
        self.levels[from..]
            .iter()
            .fold(1u64, |acc, l| acc.saturating_mul(l.candidates.len() as u64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    /// Bins per continuous parameter.
    pub float_bins: usize,
    pub translation: [f64; 3],
    pub influence_probes: usize,
    pub influence_samples: usize,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            float_bins: 5,
            translation: [0.0; 3],
            influence_probes: 16,
            influence_samples: 512,
            seed: 0,
        }
    }
}

/// Candidate values of a parameter: both booleans, every integer, or bin
/// centers for floats.
pub fn candidates(range: ParamRange, float_bins: usize) -> Vec<ParamValue> {
    match range {
        ParamRange::Bool => vec![ParamValue::Bool(false), ParamValue::Bool(true)],
        ParamRange::Int { min, max } => (min..=max).map(ParamValue::Int).collect(),
        ParamRange::Float { min, max } => {
            let k = float_bins.max(1);
            (0..k)
                .map(|i| ParamValue::Float(min + (i as f64 + 0.5) * (max - min) / k as f64))
                .collect()
        }
    }
}

/// Variance, over probe values of `name` with all else at default, of the
/// Chamfer distance between the probed and the default shape.
pub fn influence(graph: &ShapeGraph, name: &str, config: &TreeConfig) -> f64 {
    let Some(spec) = graph.parameter(name) else {
        return 0.0;
    };
    let base = graph.default_assignment();
    let Ok(reference) = evaluate_mesh(graph, &base, None) else {
        return 0.0;
    };
    let probes: Vec<ParamValue> = match spec.range {
        ParamRange::Float { .. } => candidates(spec.range, config.influence_probes),
        other => {
            let c = candidates(other, 0);
            (0..config.influence_probes).map(|k| c[k % c.len()]).collect()
        }
    };
    let distances: Vec<f64> = probes
        .into_iter()
        .filter_map(|v| {
            let mut a = base.clone();
            a.set(name, v);
            let mesh = evaluate_mesh(graph, &a, None).ok()?;
            mesh_chamfer(&reference, &mesh, config.influence_samples, config.seed).ok()
        })
        .collect();
    if distances.len() < 2 {
        return 0.0;
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n
}

/// Rotation first, then parameters by descending influence (ties keep
/// declaration order), then translation.
pub fn build_tree_spec(graph: &ShapeGraph, config: &TreeConfig) -> ParameterTreeSpec {
    let mut params: Vec<(usize, f64)> = graph
        .parameters
        .iter()
        .enumerate()
        .map(|(i, p)| (i, influence(graph, &p.name, config)))
        .collect();
    params.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut levels = vec![Level {
        slot: Slot::Rotation,
        candidates: (0..4).map(|k| Candidate::Value(ParamValue::Float(k as f64 * FRAC_PI_2))).collect(),
        influence: None,
    }];
    levels.extend(params.into_iter().map(|(i, score)| {
        let spec = &graph.parameters[i];
        Level {
            slot: Slot::Parameter(spec.name.clone()),
            candidates: candidates(spec.range, config.float_bins).into_iter().map(Candidate::Value).collect(),
            influence: Some(score),
        }
    }));
    levels.push(Level {
        slot: Slot::Translation,
        candidates: vec![Candidate::Translation(config.translation)],
        influence: None,
    });
    ParameterTreeSpec { levels }
}
