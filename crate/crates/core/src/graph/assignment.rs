use std::f64::consts::TAU;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ParamKind, ParamValue, ShapeGraph};

/// Object placement applied after the program runs: a rotation about the
/// world up axis followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: f64,
    pub translation: [f64; 3],
}

impl Pose {
    /// Rotation wrapped into `[0, 2π)`.
    pub fn normalized(self) -> Self {
        let mut r = self.rotation.rem_euclid(TAU);
        if r >= TAU {
            r = 0.0;
        }
        Pose {
            rotation: r,
            translation: self.translation,
        }
    }
}

/// Values for every declared parameter, plus the object pose.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterAssignment {
    pub values: IndexMap<String, ParamValue>,
    #[serde(default)]
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssignmentError {
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("missing value for parameter {0:?}")]
    Missing(String),
    #[error("parameter {name:?} expects a {expected:?} value, got {value}")]
    WrongKind { name: String, expected: ParamKind, value: ParamValue },
    #[error("parameter {name:?}: value {value} lies outside its range")]
    OutOfRange { name: String, value: ParamValue },
    #[error("cannot parse {value:?} for parameter {name:?}")]
    BadValue { name: String, value: String },
    #[error("pose is not finite")]
    NonFinitePose,
}

impl ParameterAssignment {
    pub fn get(&self, name: &str) -> Option<ParamValue> {
        self.values.get(name).copied()
    }

    pub fn set(&mut self, name: impl Into<String>, value: ParamValue) -> &mut Self {
        self.values.insert(name.into(), value);
        self
    }

    /// Checks kinds and ranges against `graph`, rejecting unknown names.
    pub fn validate(&self, graph: &ShapeGraph) -> Result<(), AssignmentError> {
        for name in self.values.keys() {
            if graph.parameter(name).is_none() {
                return Err(AssignmentError::UnknownParameter(name.clone()));
            }
        }
        self.ordered_values(graph).map(|_| ())
    }

    /// Values in declaration order, with integer literals accepted for float
    /// parameters.
    pub fn ordered_values(&self, graph: &ShapeGraph) -> Result<Vec<ParamValue>, AssignmentError> {
        if !(self.pose.rotation.is_finite() && self.pose.translation.iter().all(|t| t.is_finite())) {
            return Err(AssignmentError::NonFinitePose);
        }
        graph
            .parameters
            .iter()
            .map(|spec| {
                let raw = self
                    .values
                    .get(&spec.name)
                    .copied()
                    .ok_or_else(|| AssignmentError::Missing(spec.name.clone()))?;
                let value = match (spec.kind(), raw) {
                    (ParamKind::Float, ParamValue::Int(i)) => ParamValue::Float(i as f64),
                    (k, v) if k == v.kind() => v,
                    (k, v) => {
                        return Err(AssignmentError::WrongKind {
                            name: spec.name.clone(),
                            expected: k,
                            value: v,
                        })
                    }
                };
                if !spec.contains(value) {
                    return Err(AssignmentError::OutOfRange {
                        name: spec.name.clone(),
                        value,
                    });
                }
                Ok(value)
            })
            .collect()
    }
}
