//! Forward execution of shape programs with optional reverse-mode recording.

mod cache;

use std::sync::Arc;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::geometry::{self, GeometryError, Mesh, PointSet, RigidTransformParams, Vec3};
use crate::graph::{
    AssignmentError, Literal, MathOp, NodeId, NodeKind, ParamValue, ParameterAssignment, Pose,
    PrimitiveShape, ShapeGraph,
};
use crate::graph::Source;
use crate::tape::{Recorder, RecordingActive, Scalar, Tape, Var};

pub use cache::{CacheError, NodeCache, CACHE_DIR_ENV};

/// Smallest accepted `|denominator|` of a division node.
pub const DIVISION_GUARD: f64 = 1e-9;

/// A socket value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value<S = f64> {
    Scalar(S),
    Bool(bool),
    Vec3(Vec3<S>),
    Points(Arc<PointSet<S>>),
    Geometry(Arc<Mesh<S>>),
}

impl Value<Var> {
    pub(crate) fn to_plain(&self) -> Value<f64> {
        match self {
            Value::Scalar(s) => Value::Scalar(s.value()),
            Value::Bool(b) => Value::Bool(*b),
            Value::Vec3(v) => Value::Vec3(v.map(Scalar::value)),
            Value::Points(p) => Value::Points(Arc::new(p.values())),
            Value::Geometry(m) => Value::Geometry(Arc::new(m.values())),
        }
    }

    pub(crate) fn from_plain(v: &Value<f64>) -> Self {
        let c = |x: &Vec3<f64>| x.map(Var::constant);
        match v {
            Value::Scalar(s) => Value::Scalar(Var::constant(*s)),
            Value::Bool(b) => Value::Bool(*b),
            Value::Vec3(x) => Value::Vec3(c(x)),
            Value::Points(p) => Value::Points(Arc::new(PointSet {
                points: p.points.iter().map(c).collect(),
            })),
            Value::Geometry(m) => Value::Geometry(Arc::new(Mesh {
                vertices: m.vertices.iter().map(c).collect(),
                faces: m.faces.clone(),
            })),
        }
    }

    fn all_finite(&self) -> bool {
        let fin = |v: &Vec3<Var>| v.iter().all(|x| x.value().is_finite());
        match self {
            Value::Scalar(s) => s.value().is_finite(),
            Value::Bool(_) => true,
            Value::Vec3(v) => fin(v),
            Value::Points(p) => p.points.iter().all(fin),
            Value::Geometry(m) => m.vertices.iter().all(fin),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("node {node}: {source}")]
    Geometry { node: NodeId, source: GeometryError },
    #[error("node {node}: division by |x| < {DIVISION_GUARD}")]
    DivisionByZero { node: NodeId },
    #[error("node {node}: produced a non-finite value")]
    NonFinite { node: NodeId },
    #[error("tape slot {0} has a non-finite local derivative")]
    NonFinitePartial(u32),
    #[error("cache entry for node {node} does not match its fingerprint")]
    CacheCorruption { node: NodeId },
    #[error("vertex gradient has {found} entries, mesh has {expected} vertices")]
    GradientLength { expected: usize, found: usize },
    #[error(transparent)]
    Recording(#[from] RecordingActive),
}

/// Whether a forward pass records a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Taped,
    Plain,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EvalStats {
    /// Nodes whose operation actually ran (parameter inputs excluded).
    pub executed: usize,
    pub cache_hits: usize,
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub mesh: Mesh,
    pub tape: Tape,
    /// Tape slot per vertex coordinate, `None` for constants.
    pub vertex_slots: Vec<[Option<u32>; 3]>,
    /// Continuous parameter name to its tape input slot.
    pub param_slots: IndexMap<String, u32>,
    /// Slots of pose rotation and translation x, y, z.
    pub pose_slots: [Option<u32>; 4],
    /// `(node, fingerprint)` for every node served by or stored into the cache.
    pub cache_keys: Vec<(NodeId, u64)>,
    pub stats: EvalStats,
    pub elapsed: Duration,
}

/// Derivatives of a scalar loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub params: IndexMap<String, f64>,
    pub rotation: f64,
    pub translation: [f64; 3],
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.params.values().all(|g| g.is_finite())
            && self.rotation.is_finite()
            && self.translation.iter().all(|g| g.is_finite())
    }
}

/// Runs `graph` on `params` and records a tape.
pub fn evaluate(graph: &ShapeGraph, params: &ParameterAssignment, cache: &NodeCache) -> Result<EvalResult, EvalError> {
    evaluate_with(graph, params, Some(cache), Mode::Taped)
}

/// Plain forward pass returning only the mesh.
pub fn evaluate_mesh(graph: &ShapeGraph, params: &ParameterAssignment, cache: Option<&NodeCache>) -> Result<Mesh, EvalError> {
    evaluate_with(graph, params, cache, Mode::Plain).map(|r| r.mesh)
}

pub fn evaluate_with(
    graph: &ShapeGraph,
    params: &ParameterAssignment,
    cache: Option<&NodeCache>,
    mode: Mode,
) -> Result<EvalResult, EvalError> {
    let start = Instant::now();
    let values = params.ordered_values(graph)?;
    let pose = params.pose.normalized();
    let mut recorder = match mode {
        Mode::Taped => Some(Recorder::begin(2048)?),
        Mode::Plain => None,
    };
    let mut input = |x: f64| match recorder.as_mut() {
        Some(r) => r.input(x),
        None => Var::constant(x),
    };

    let mut param_slots = IndexMap::new();
    let param_values: Vec<Value<Var>> = graph
        .parameters
        .iter()
        .zip(&values)
        .map(|(spec, v)| match *v {
            ParamValue::Float(x) => {
                let var = input(x);
                if let Some(slot) = var.slot() {
                    param_slots.insert(spec.name.clone(), slot);
                }
                Value::Scalar(var)
            }
            ParamValue::Int(i) => Value::Scalar(Var::constant(i as f64)),
            ParamValue::Bool(b) => Value::Bool(b),
        })
        .collect();
    let rotation = input(pose.rotation);
    let translation = pose.translation.map(&mut input);

    let mut run = Run {
        graph,
        params: &values,
        param_values,
        outputs: vec![None; graph.node_count()],
        cache,
        stats: EvalStats::default(),
        cache_keys: Vec::new(),
    };
    let body = run.evaluate_live()?;
    let posed = apply_pose(&body, rotation, translation);

    let tape = match recorder {
        Some(r) => r.finish(),
        None => Tape::default(),
    };
    if let Some(slot) = tape.first_nonfinite_partial() {
        return Err(EvalError::NonFinitePartial(slot));
    }
    let vertex_slots = posed.vertices.iter().map(|v| v.map(Var::slot)).collect();
    Ok(EvalResult {
        mesh: posed.values(),
        tape,
        vertex_slots,
        param_slots,
        pose_slots: [rotation.slot(), translation[0].slot(), translation[1].slot(), translation[2].slot()],
        cache_keys: run.cache_keys,
        stats: run.stats,
        elapsed: start.elapsed(),
    })
}

/// Rotation about +y then translation.
fn apply_pose(mesh: &Mesh<Var>, rotation: Var, t: [Var; 3]) -> Mesh<Var> {
    let (s, c) = (rotation.sin(), rotation.cos());
    Mesh {
        vertices: mesh
            .vertices
            .iter()
            .map(|&[x, y, z]| [c * x + s * z + t[0], y + t[1], c * z - s * x + t[2]])
            .collect(),
        faces: mesh.faces.clone(),
    }
}

/// Plain-value version of the pose map, used by scene generation.
pub fn pose_point(pose: Pose, [x, y, z]: [f64; 3]) -> [f64; 3] {
    let (s, c) = pose.rotation.sin_cos();
    let t = pose.translation;
    [c * x + s * z + t[0], y + t[1], c * z - s * x + t[2]]
}

/// Reverse sweep from per-vertex loss gradients.
pub fn backward(result: &EvalResult, vertex_grads: &[[f64; 3]]) -> Result<Gradients, EvalError> {
    if vertex_grads.len() != result.vertex_slots.len() {
        return Err(EvalError::GradientLength {
            expected: result.vertex_slots.len(),
            found: vertex_grads.len(),
        });
    }
    let seeds = result
        .vertex_slots
        .iter()
        .zip(vertex_grads)
        .flat_map(|(slots, g)| (0..3).filter_map(move |k| slots[k].map(|s| (s, g[k]))));
    let adj = result.tape.adjoints(seeds);
    let read = |slot: Option<u32>| slot.map_or(0.0, |s| adj[s as usize]);
    Ok(Gradients {
        params: result
            .param_slots
            .iter()
            .map(|(name, &slot)| (name.clone(), adj[slot as usize]))
            .collect(),
        rotation: read(result.pose_slots[0]),
        translation: [read(result.pose_slots[1]), read(result.pose_slots[2]), read(result.pose_slots[3])],
    })
}

/// Precomputes every node that depends on no continuous parameter, for the
/// given discrete values. Nodes whose inputs are not covered, or whose
/// evaluation fails, are skipped.
pub fn warm_cache(graph: &ShapeGraph, discrete: &IndexMap<String, ParamValue>) -> NodeCache {
    let cache = NodeCache::new();
    warm_into(graph, discrete, &cache);
    cache
}

pub fn warm_into(graph: &ShapeGraph, discrete: &IndexMap<String, ParamValue>, cache: &NodeCache) {
    let covered: Vec<Option<ParamValue>> = graph
        .parameters
        .iter()
        .map(|p| {
            if p.is_continuous() {
                Some(p.default)
            } else {
                discrete.get(&p.name).copied().filter(|v| p.contains(*v))
            }
        })
        .collect();
    let values: Vec<ParamValue> = covered.iter().zip(&graph.parameters).map(|(v, p)| v.unwrap_or(p.default)).collect();
    let param_values = values
        .iter()
        .map(|v| match *v {
            ParamValue::Bool(b) => Value::Bool(b),
            other => Value::Scalar(Var::constant(other.as_f64())),
        })
        .collect();
    let mut run = Run {
        graph,
        params: &values,
        param_values,
        outputs: vec![None; graph.node_count()],
        cache: Some(cache),
        stats: EvalStats::default(),
        cache_keys: Vec::new(),
    };
    for &idx in graph.order_indices() {
        let node = &graph.nodes[idx];
        let ready = node.kind != NodeKind::Input
            && !graph.depends_on_continuous(idx)
            && graph.node_deps(idx).iter().all(|&p| covered[p].is_some());
        if ready && run.sources_ready(idx) {
            let _ = run.compute(idx);
        }
    }
}

struct Run<'a> {
    graph: &'a ShapeGraph,
    params: &'a [ParamValue],
    param_values: Vec<Value<Var>>,
    outputs: Vec<Option<Value<Var>>>,
    cache: Option<&'a NodeCache>,
    stats: EvalStats,
    cache_keys: Vec<(NodeId, u64)>,
}

impl Run<'_> {
    /// Evaluates the output's live cone: a switch contributes only its taken
    /// branch, so untaken branches never run.
    fn evaluate_live(&mut self) -> Result<Mesh<Var>, EvalError> {
        let g = self.graph;
        let mut live = vec![false; g.node_count()];
        live[g.output_index()] = true;
        for &idx in g.order_indices().iter().rev() {
            if !live[idx] {
                continue;
            }
            let sources = g.sources(idx);
            let taken: &[Source] = if g.nodes[idx].kind == NodeKind::Switch {
                for &dep in g.condition_closure(idx) {
                    self.compute(dep)?;
                }
                let branch = if self.read_bool(&sources[0]) { 1 } else { 2 };
                std::slice::from_ref(&sources[branch])
            } else {
                sources
            };
            for r in taken {
                if let Source::Node(j) = *r {
                    live[j] = true;
                }
            }
        }
        for &idx in g.order_indices() {
            if live[idx] && g.nodes[idx].kind != NodeKind::Input {
                self.compute(idx)?;
            }
        }
        match &self.outputs[g.output_index()] {
            Some(Value::Geometry(m)) => Ok((**m).clone()),
            _ => unreachable!("validated output node yields geometry"),
        }
    }

    fn sources_ready(&self, idx: usize) -> bool {
        self.graph.sources(idx).iter().all(|r| match *r {
            Source::Node(j) => self.outputs[j].is_some(),
            _ => true,
        })
    }

    fn read(&self, r: &Source) -> Value<Var> {
        match *r {
            Source::Const(Literal::Scalar(x)) => Value::Scalar(Var::constant(x)),
            Source::Const(Literal::Bool(b)) => Value::Bool(b),
            Source::Const(Literal::Vec3(v)) => Value::Vec3(v.map(Var::constant)),
            Source::Param(p) => self.param_values[p].clone(),
            Source::Node(j) => self.outputs[j].clone().expect("sources are computed before consumers"),
        }
    }

    fn read_bool(&self, r: &Source) -> bool {
        match self.read(r) {
            Value::Bool(b) => b,
            _ => unreachable!("validated bool socket"),
        }
    }

    fn compute(&mut self, idx: usize) -> Result<(), EvalError> {
        if self.outputs[idx].is_some() {
            return Ok(());
        }
        let g = self.graph;
        let id = g.nodes[idx].id;
        let cacheable = self.cache.is_some() && !g.depends_on_continuous(idx);
        let mut key = None;
        if cacheable {
            let cache = self.cache.expect("checked");
            let discrete: Vec<ParamValue> = g.node_deps(idx).iter().map(|&p| self.params[p]).collect();
            let fp = cache::fingerprint(&discrete);
            self.cache_keys.push((id, fp));
            if let Some(v) = cache.lookup(id, fp, &discrete)? {
                self.stats.cache_hits += 1;
                self.outputs[idx] = Some(v);
                return Ok(());
            }
            key = Some((fp, discrete));
        }
        let value = self.execute(idx)?;
        self.stats.executed += 1;
        if !value.all_finite() {
            return Err(EvalError::NonFinite { node: id });
        }
        if let (Some((fp, discrete)), Some(cache)) = (key, self.cache) {
            cache.insert(id, fp, discrete, value.clone());
        }
        self.outputs[idx] = Some(value);
        Ok(())
    }

    fn execute(&mut self, idx: usize) -> Result<Value<Var>, EvalError> {
        let node = &self.graph.nodes[idx];
        let id = node.id;
        let inputs = self.graph.sources(idx);
        let scalar = |k: usize| match self.read(&inputs[k]) {
            Value::Scalar(s) => s,
            _ => unreachable!("validated scalar socket"),
        };
        let vec3 = |k: usize| match self.read(&inputs[k]) {
            Value::Vec3(v) => v,
            _ => unreachable!("validated vec3 socket"),
        };
        let mesh = |k: usize| match self.read(&inputs[k]) {
            Value::Geometry(m) => m,
            _ => unreachable!("validated geometry socket"),
        };
        let geo = |r: Result<Mesh<Var>, GeometryError>| {
            r.map(|m| Value::Geometry(Arc::new(m)))
                .map_err(|source| EvalError::Geometry { node: id, source })
        };
        Ok(match node.kind {
            NodeKind::Input => unreachable!("input nodes are read directly"),
            NodeKind::Math(op) => {
                let (a, b) = (scalar(0), scalar(1));
                match op {
                    MathOp::Add => Value::Scalar(a + b),
                    MathOp::Sub => Value::Scalar(a - b),
                    MathOp::Mul => Value::Scalar(a * b),
                    MathOp::Div => {
                        if b.value().abs() < DIVISION_GUARD {
                            return Err(EvalError::DivisionByZero { node: id });
                        }
                        Value::Scalar(a / b)
                    }
                    MathOp::CompareGreater => Value::Bool(a.value() > b.value()),
                    MathOp::CompareLess => Value::Bool(a.value() < b.value()),
                }
            }
            NodeKind::Switch => {
                let branch = if self.read_bool(&inputs[0]) { 1 } else { 2 };
                self.read(&inputs[branch])
            }
            NodeKind::Combine => Value::Vec3([scalar(0), scalar(1), scalar(2)]),
            NodeKind::Primitive(PrimitiveShape::Cuboid) => geo(geometry::make_cuboid(vec3(0)))?,
            NodeKind::Primitive(PrimitiveShape::Cylinder { segments }) => {
                geo(geometry::make_cylinder(scalar(0), scalar(1), segments))?
            }
            NodeKind::Transform => {
                let t = RigidTransformParams {
                    translation: vec3(1),
                    rotation: vec3(2),
                    scale: vec3(3),
                };
                geo(Ok(geometry::apply_transform(&mesh(0), &t)))?
            }
            NodeKind::MeshLine => {
                let count = scalar(0).value();
                if count.fract() != 0.0 {
                    return Err(EvalError::Geometry {
                        node: id,
                        source: GeometryError::NonIntegerCount(count),
                    });
                }
                geometry::mesh_line(vec3(1), vec3(2), count as i64)
                    .map(|p| Value::Points(Arc::new(p)))
                    .map_err(|source| EvalError::Geometry { node: id, source })?
            }
            NodeKind::PointsOnInstances => {
                let anchors = match self.read(&inputs[0]) {
                    Value::Points(p) => p,
                    _ => unreachable!("validated points socket"),
                };
                geo(Ok(geometry::points_on_instances(&mesh(1), &anchors)))?
            }
            NodeKind::JoinGeometry => {
                let parts: Vec<Arc<Mesh<Var>>> = (0..inputs.len()).map(mesh).collect();
                geo(Ok(geometry::join_geometry(parts.iter().map(|m| &**m))))?
            }
            NodeKind::OutputGeometry => Value::Geometry(mesh(0)),
        })
    }
}
