//! Shape-program intermediate representation.
//!
//! A [`ShapeGraph`] is a validated DAG of typed nodes read from the
//! `*.geonodes.json` wire format (see [`wire`]). Validation also precomputes
//! the deterministic topological order and, per node, which parameters it
//! transitively depends on; the evaluator uses the latter for caching.

mod assignment;
mod wire;

use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use assignment::{AssignmentError, ParameterAssignment, Pose};
pub use wire::FORMAT_VERSION;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Float,
    Int,
    Bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Meter,
    Radian,
    Count,
    Flag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
}

impl ParamValue {
    pub fn kind(self) -> ParamKind {
        match self {
            ParamValue::Bool(_) => ParamKind::Bool,
            ParamValue::Int(_) => ParamKind::Int,
            ParamValue::Float(_) => ParamKind::Float,
        }
    }

    /// Numeric view used when feeding scalar sockets.
    pub fn as_f64(self) -> f64 {
        match self {
            ParamValue::Bool(b) => f64::from(u8::from(b)),
            ParamValue::Int(i) => i as f64,
            ParamValue::Float(x) => x,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamRange {
    Float { min: f64, max: f64 },
    Int { min: i64, max: i64 },
    Bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpec {
    pub name: String,
    pub range: ParamRange,
    pub unit: Unit,
    pub default: ParamValue,
}

impl ParameterSpec {
    pub fn kind(&self) -> ParamKind {
        match self.range {
            ParamRange::Float { .. } => ParamKind::Float,
            ParamRange::Int { .. } => ParamKind::Int,
            ParamRange::Bool => ParamKind::Bool,
        }
    }

    pub fn is_continuous(&self) -> bool {
        self.kind() == ParamKind::Float
    }

    pub fn contains(&self, value: ParamValue) -> bool {
        match (self.range, value) {
            (ParamRange::Float { min, max }, ParamValue::Float(x)) => x >= min && x <= max,
            (ParamRange::Int { min, max }, ParamValue::Int(i)) => i >= min && i <= max,
            (ParamRange::Bool, ParamValue::Bool(_)) => true,
            _ => false,
        }
    }

    /// Projects a float into the declared range; other kinds pass through.
    pub fn clamp_float(&self, x: f64) -> f64 {
        match self.range {
            ParamRange::Float { min, max } => x.clamp(min, max),
            _ => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MathOp {
    Add,
    Sub,
    Mul,
    Div,
    CompareGreater,
    CompareLess,
}

impl MathOp {
    pub const ALL: [MathOp; 6] = [
        MathOp::Add,
        MathOp::Sub,
        MathOp::Mul,
        MathOp::Div,
        MathOp::CompareGreater,
        MathOp::CompareLess,
    ];

    pub fn wire_name(self) -> &'static str {
        match self {
            MathOp::Add => "add",
            MathOp::Sub => "sub",
            MathOp::Mul => "mul",
            MathOp::Div => "div",
            MathOp::CompareGreater => "compare_greater",
            MathOp::CompareLess => "compare_less",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, MathOp::CompareGreater | MathOp::CompareLess)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveShape {
    Cuboid,
    Cylinder { segments: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Input,
    Math(MathOp),
    Switch,
    Combine,
    Primitive(PrimitiveShape),
    Transform,
    MeshLine,
    PointsOnInstances,
    JoinGeometry,
    OutputGeometry,
}

impl NodeKind {
    pub fn wire_name(self) -> &'static str {
        match self {
            NodeKind::Input => "Input",
            NodeKind::Math(_) => "Math",
            NodeKind::Switch => "Switch",
            NodeKind::Combine => "Combine",
            NodeKind::Primitive(_) => "Primitive",
            NodeKind::Transform => "Transform",
            NodeKind::MeshLine => "MeshLine",
            NodeKind::PointsOnInstances => "PointsOnInstances",
            NodeKind::JoinGeometry => "JoinGeometry",
            NodeKind::OutputGeometry => "OutputGeometry",
        }
    }
}

/// Value category carried by a socket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Scalar,
    Bool,
    Vec3,
    Points,
    Geometry,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Scalar => "scalar",
            Category::Bool => "bool",
            Category::Vec3 => "vec3",
            Category::Points => "points",
            Category::Geometry => "geometry",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Literal {
    Scalar(f64),
    Bool(bool),
    Vec3([f64; 3]),
}

impl Literal {
    pub fn category(self) -> Category {
        match self {
            Literal::Scalar(_) => Category::Scalar,
            Literal::Bool(_) => Category::Bool,
            Literal::Vec3(_) => Category::Vec3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputRef {
    Socket { node: NodeId, socket: u32 },
    Const(Literal),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    pub inputs: Vec<InputRef>,
}

/// One validation failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Diagnostic {
    #[error("unsupported format version {0:?} (expected {FORMAT_VERSION:?})")]
    UnsupportedVersion(String),
    #[error("{at}: {message}")]
    Malformed { at: String, message: String },
    #[error("parameter {0:?} is declared more than once")]
    DuplicateParameter(String),
    #[error("parameter {name:?}: {message}")]
    BadParameter { name: String, message: String },
    #[error("node ids must be unique; {0} appears more than once")]
    DuplicateNodeId(NodeId),
    #[error("node {node}: unknown node kind {kind:?}")]
    UnknownNodeKind { node: NodeId, kind: String },
    #[error("node {node}: math operation {op:?} is not supported (supported: add, sub, mul, div, compare_greater, compare_less)")]
    UnsupportedMathOp { node: NodeId, op: String },
    #[error("node {node}: {message}")]
    BadAttribute { node: NodeId, message: String },
    #[error("node {node}: expected {expected} inputs, found {found}")]
    Arity { node: NodeId, expected: String, found: usize },
    #[error("node {node}: input {input} references missing node {source_node}")]
    DanglingReference { node: NodeId, input: usize, source_node: NodeId },
    #[error("node {node}: input {input} references socket {socket} of node {source_node}, which has {available} outputs")]
    BadSocket { node: NodeId, input: usize, source_node: NodeId, socket: u32, available: usize },
    #[error("node {node}: input {input} expects {expected}, got {found}")]
    CategoryMismatch { node: NodeId, input: usize, expected: Category, found: Category },
    #[error("node {node}: switch branches carry different categories ({a} vs {b})")]
    SwitchBranchMismatch { node: NodeId, a: Category, b: Category },
    #[error("graph must contain exactly one OutputGeometry node, found {0}")]
    OutputCount(usize),
    #[error("cycle through nodes {0:?}")]
    Cycle(Vec<NodeId>),
    #[error("node {0} does not contribute to the output geometry")]
    DeadNode(NodeId),
    #[error("node {node}: point count depends on continuous parameters")]
    ContinuousCount { node: NodeId },
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid shape graph ({} problem{}):\n{}", .0.len(), if .0.len() == 1 { "" } else { "s" }, format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

impl GraphError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            GraphError::Invalid(d) => d,
            GraphError::Json(_) => &[],
        }
    }
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|x| format!("  - {x}")).collect::<Vec<_>>().join("\n")
}

/// An input slot resolved to a node index, parameter index or literal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Source {
    Param(usize),
    Node(usize),
    Const(Literal),
}

/// Derived per-node facts, computed once at validation.
#[derive(Debug, Clone, PartialEq)]
struct Analysis {
    index_of: HashMap<NodeId, usize>,
    resolved: Vec<Vec<Source>>,
    order: Vec<usize>,
    output: usize,
    out_categories: Vec<Vec<Category>>,
    deps: Vec<Vec<usize>>,
    continuous: Vec<bool>,
    cond_closure: HashMap<usize, Vec<usize>>,
}

/// A validated, immutable shape program.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeGraph {
    pub name: String,
    pub version: String,
    pub parameters: Vec<ParameterSpec>,
    pub nodes: Vec<NodeSpec>,
    analysis: Analysis,
}

impl ShapeGraph {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        wire::parse(text)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GraphError> {
        let text = std::str::from_utf8(bytes).map_err(|e| {
            GraphError::Invalid(vec![Diagnostic::Malformed {
                at: "document".into(),
                message: format!("not UTF-8: {e}"),
            }])
        })?;
        wire::parse(text)
    }

    /// Canonical pretty-printed wire form.
    pub fn to_json(&self) -> String {
        wire::serialize(self)
    }

    /// Validation entry point shared by the parser and programmatic builders.
    pub fn new(
        name: String,
        version: String,
        parameters: Vec<ParameterSpec>,
        nodes: Vec<NodeSpec>,
    ) -> Result<Self, GraphError> {
        let mut diags = Vec::new();
        if version != FORMAT_VERSION {
            diags.push(Diagnostic::UnsupportedVersion(version.clone()));
        }
        validate_parameters(&parameters, &mut diags);
        let analysis = analyze(&parameters, &nodes, &mut diags);
        match analysis {
            Some(analysis) if diags.is_empty() => Ok(ShapeGraph {
                name,
                version,
                parameters,
                nodes,
                analysis,
            }),
            _ => Err(GraphError::Invalid(diags)),
        }
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    pub fn continuous_parameters(&self) -> impl Iterator<Item = &ParameterSpec> {
        self.parameters.iter().filter(|p| p.is_continuous())
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.analysis.index_of.get(&id).map(|&i| &self.nodes[i])
    }

    /// Node ids such that every node follows all of its input sources; ties
    /// are broken by ascending id.
    pub fn topo_order(&self) -> Vec<NodeId> {
        self.analysis.order.iter().map(|&i| self.nodes[i].id).collect()
    }

    pub fn default_assignment(&self) -> ParameterAssignment {
        ParameterAssignment {
            values: self
                .parameters
                .iter()
                .map(|p| (p.name.clone(), p.default))
                .collect(),
            pose: Pose::default(),
        }
    }

    /// Every parameter drawn uniformly from its range; the pose is left at
    /// the origin.
    pub fn random_assignment<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> ParameterAssignment {
        ParameterAssignment {
            values: self
                .parameters
                .iter()
                .map(|p| {
                    let v = match p.range {
                        ParamRange::Float { min, max } => ParamValue::Float(rng.gen_range(min..=max)),
                        ParamRange::Int { min, max } => ParamValue::Int(rng.gen_range(min..=max)),
                        ParamRange::Bool => ParamValue::Bool(rng.gen()),
                    };
                    (p.name.clone(), v)
                })
                .collect(),
            pose: Pose::default(),
        }
    }

    /// Parses a command-line value for the named parameter.
    pub fn parse_value(&self, name: &str, text: &str) -> Result<ParamValue, AssignmentError> {
        let spec = self
            .parameter(name)
            .ok_or_else(|| AssignmentError::UnknownParameter(name.to_string()))?;
        let bad = || AssignmentError::BadValue {
            name: name.to_string(),
            value: text.to_string(),
        };
        let value = match spec.kind() {
            ParamKind::Float => ParamValue::Float(text.trim().parse().map_err(|_| bad())?),
            ParamKind::Int => ParamValue::Int(text.trim().parse().map_err(|_| bad())?),
            ParamKind::Bool => ParamValue::Bool(match text.trim() {
                "true" | "1" | "yes" => true,
                "false" | "0" | "no" => false,
                _ => return Err(bad()),
            }),
        };
        Ok(value)
    }

    // Crate-internal views of the analysis.

    pub(crate) fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub(crate) fn order_indices(&self) -> &[usize] {
        &self.analysis.order
    }

    #[cfg(test)]
    pub(crate) fn index_of(&self, id: NodeId) -> usize {
        self.analysis.index_of[&id]
    }

    pub(crate) fn sources(&self, idx: usize) -> &[Source] {
        &self.analysis.resolved[idx]
    }

    pub(crate) fn output_index(&self) -> usize {
        self.analysis.output
    }

    #[cfg(test)]
    pub(crate) fn output_category(&self, idx: usize, socket: u32) -> Category {
        self.analysis.out_categories[idx][socket as usize]
    }

    /// Sorted parameter indices the node transitively reads.
    pub(crate) fn node_deps(&self, idx: usize) -> &[usize] {
        &self.analysis.deps[idx]
    }

    pub(crate) fn depends_on_continuous(&self, idx: usize) -> bool {
        self.analysis.continuous[idx]
    }

    /// Nodes needed to compute a switch condition, in evaluation order.
    pub(crate) fn condition_closure(&self, switch_idx: usize) -> &[usize] {
        &self.analysis.cond_closure[&switch_idx]
    }
}

fn validate_parameters(params: &[ParameterSpec], diags: &mut Vec<Diagnostic>) {
    let mut seen = BTreeSet::new();
    for p in params {
        if !seen.insert(p.name.as_str()) {
            diags.push(Diagnostic::DuplicateParameter(p.name.clone()));
        }
        let bad = |message: String| Diagnostic::BadParameter {
            name: p.name.clone(),
            message,
        };
        match p.range {
            ParamRange::Float { min, max } => {
                if !(min.is_finite() && max.is_finite()) || !(max > min) {
                    diags.push(bad(format!("float range [{min}, {max}] must have positive finite width")));
                }
                if !matches!(p.unit, Unit::Meter | Unit::Radian) {
                    diags.push(bad("float parameters use unit meter or radian".into()));
                }
            }
            ParamRange::Int { min, max } => {
                if max < min {
                    diags.push(bad(format!("integer range [{min}, {max}] is empty")));
                }
                if p.unit != Unit::Count {
                    diags.push(bad("integer parameters use unit count".into()));
                }
            }
            ParamRange::Bool => {
                if p.unit != Unit::Flag {
                    diags.push(bad("boolean parameters use unit flag".into()));
                }
            }
        }
        if p.default.kind() != p.kind() {
            diags.push(bad(format!("default {} does not match kind {:?}", p.default, p.kind())));
        } else if !p.contains(p.default) {
            diags.push(bad(format!("default {} lies outside the declared range", p.default)));
        }
    }
}

/// Input slot expectations for a node. `None` in the category list means
/// "same category as the other branch" (switch values).
fn signature(kind: NodeKind, n_inputs: usize) -> (Option<usize>, Vec<Option<Category>>) {
    use Category::*;
    match kind {
        NodeKind::Input => (Some(0), vec![]),
        NodeKind::Math(_) => (Some(2), vec![Some(Scalar), Some(Scalar)]),
        NodeKind::Switch => (Some(3), vec![Some(Bool), None, None]),
        NodeKind::Combine => (Some(3), vec![Some(Scalar); 3]),
        NodeKind::Primitive(PrimitiveShape::Cuboid) => (Some(1), vec![Some(Vec3)]),
        NodeKind::Primitive(PrimitiveShape::Cylinder { .. }) => (Some(2), vec![Some(Scalar), Some(Scalar)]),
        NodeKind::Transform => (Some(4), vec![Some(Geometry), Some(Vec3), Some(Vec3), Some(Vec3)]),
        NodeKind::MeshLine => (Some(3), vec![Some(Scalar), Some(Vec3), Some(Vec3)]),
        NodeKind::PointsOnInstances => (Some(2), vec![Some(Points), Some(Geometry)]),
        NodeKind::JoinGeometry => (None, vec![Some(Geometry); n_inputs]),
        NodeKind::OutputGeometry => (Some(1), vec![Some(Geometry)]),
    }
}

fn analyze(params: &[ParameterSpec], nodes: &[NodeSpec], diags: &mut Vec<Diagnostic>) -> Option<Analysis> {
    let mut index_of = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if index_of.insert(n.id, i).is_some() {
            diags.push(Diagnostic::DuplicateNodeId(n.id));
        }
    }
    let n_out = |kind: NodeKind| match kind {
        NodeKind::Input => params.len(),
        NodeKind::OutputGeometry => 0,
        _ => 1,
    };

    // Static per-node checks; collect edges that resolve.
    let mut edges_ok = true;
    let mut sources: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        let (arity, _) = signature(n.kind, n.inputs.len());
        if let Some(expected) = arity {
            if n.inputs.len() != expected {
                diags.push(Diagnostic::Arity {
                    node: n.id,
                    expected: expected.to_string(),
                    found: n.inputs.len(),
                });
                edges_ok = false;
            }
        }
        for (k, input) in n.inputs.iter().enumerate() {
            if let InputRef::Socket { node, socket } = *input {
                match index_of.get(&node) {
                    None => {
                        diags.push(Diagnostic::DanglingReference {
                            node: n.id,
                            input: k,
                            source_node: node,
                        });
                        edges_ok = false;
                    }
                    Some(&j) => {
                        let available = n_out(nodes[j].kind);
                        if socket as usize >= available {
                            diags.push(Diagnostic::BadSocket {
                                node: n.id,
                                input: k,
                                source_node: node,
                                socket,
                                available,
                            });
                            edges_ok = false;
                        }
                        sources[i].push(j);
                    }
                }
            }
        }
    }

    let outputs: Vec<usize> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kind == NodeKind::OutputGeometry)
        .map(|(i, _)| i)
        .collect();
    if outputs.len() != 1 {
        diags.push(Diagnostic::OutputCount(outputs.len()));
    }

    // Kahn's algorithm with a min-heap on node id.
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    let mut indegree = vec![0usize; nodes.len()];
    for (i, srcs) in sources.iter().enumerate() {
        let unique: BTreeSet<usize> = srcs.iter().copied().collect();
        indegree[i] = unique.len();
        for j in unique {
            consumers[j].push(i);
        }
    }
    let mut heap: BinaryHeap<Reverse<(NodeId, usize)>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| Reverse((nodes[i].id, i)))
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(Reverse((_, i))) = heap.pop() {
        order.push(i);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                heap.push(Reverse((nodes[c].id, c)));
            }
        }
    }
    if order.len() != nodes.len() {
        let remaining: BTreeSet<usize> = (0..nodes.len()).filter(|&i| indegree[i] > 0).collect();
        let cycle = find_cycle(&remaining, &sources);
        let mut ids: Vec<NodeId> = cycle.iter().map(|&i| nodes[i].id).collect();
        ids.sort_unstable();
        diags.push(Diagnostic::Cycle(ids));
        return None;
    }
    if !edges_ok || outputs.len() != 1 {
        return None;
    }
    let output = outputs[0];

    // Categories and dependency sets in topological order.
    let mut out_categories: Vec<Vec<Category>> = vec![Vec::new(); nodes.len()];
    let mut deps: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes.len()];
    let mut typed_ok = true;
    for &i in &order {
        let n = &nodes[i];
        let mut found = Vec::with_capacity(n.inputs.len());
        for input in &n.inputs {
            match *input {
                InputRef::Const(lit) => found.push(lit.category()),
                InputRef::Socket { node, socket } => {
                    let j = index_of[&node];
                    found.push(out_categories[j][socket as usize]);
                    if nodes[j].kind == NodeKind::Input {
                        deps[i].insert(socket as usize);
                    } else {
                        let upstream = deps[j].clone();
                        deps[i].extend(upstream);
                    }
                }
            }
        }
        let (_, expected) = signature(n.kind, n.inputs.len());
        for (k, (exp, got)) in expected.iter().zip(&found).enumerate() {
            if let Some(exp) = exp {
                if exp != got {
                    diags.push(Diagnostic::CategoryMismatch {
                        node: n.id,
                        input: k,
                        expected: *exp,
                        found: *got,
                    });
                    typed_ok = false;
                }
            }
        }
        out_categories[i] = match n.kind {
            NodeKind::Input => {
                deps[i] = (0..params.len()).collect();
                params
                    .iter()
                    .map(|p| match p.kind() {
                        ParamKind::Bool => Category::Bool,
                        _ => Category::Scalar,
                    })
                    .collect()
            }
            NodeKind::Math(op) if op.is_comparison() => vec![Category::Bool],
            NodeKind::Math(_) => vec![Category::Scalar],
            NodeKind::Switch => {
                if found[1] != found[2] {
                    diags.push(Diagnostic::SwitchBranchMismatch {
                        node: n.id,
                        a: found[1],
                        b: found[2],
                    });
                    typed_ok = false;
                }
                vec![found[1]]
            }
            NodeKind::Combine => vec![Category::Vec3],
            NodeKind::MeshLine => vec![Category::Points],
            NodeKind::OutputGeometry => vec![],
            _ => vec![Category::Geometry],
        };
    }

    let continuous: Vec<bool> = deps
        .iter()
        .map(|d| d.iter().any(|&p| params[p].is_continuous()))
        .collect();

    for &i in &order {
        let n = &nodes[i];
        if n.kind == NodeKind::MeshLine {
            let count_continuous = match n.inputs[0] {
                InputRef::Const(_) => false,
                InputRef::Socket { node, socket } => {
                    let j = index_of[&node];
                    if nodes[j].kind == NodeKind::Input {
                        params[socket as usize].is_continuous()
                    } else {
                        continuous[j]
                    }
                }
            };
            if count_continuous {
                diags.push(Diagnostic::ContinuousCount { node: n.id });
            }
        }
    }

    // Dead nodes: cannot reach the output.
    let mut live = vec![false; nodes.len()];
    live[output] = true;
    for &i in order.iter().rev() {
        if live[i] {
            for &j in &sources[i] {
                live[j] = true;
            }
        }
    }
    for (i, alive) in live.iter().enumerate() {
        if !alive {
            diags.push(Diagnostic::DeadNode(nodes[i].id));
        }
    }
    if !typed_ok {
        return None;
    }

    let position: Vec<usize> = {
        let mut pos = vec![0; nodes.len()];
        for (p, &i) in order.iter().enumerate() {
            pos[i] = p;
        }
        pos
    };
    let mut cond_closure = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if n.kind != NodeKind::Switch {
            continue;
        }
        let mut set = BTreeSet::new();
        let mut stack = Vec::new();
        if let InputRef::Socket { node, .. } = n.inputs[0] {
            stack.push(index_of[&node]);
        }
        while let Some(j) = stack.pop() {
            if nodes[j].kind == NodeKind::Input || !set.insert(j) {
                continue;
            }
            stack.extend(sources[j].iter().copied());
        }
        let mut closure: Vec<usize> = set.into_iter().collect();
        closure.sort_by_key(|&j| position[j]);
        cond_closure.insert(i, closure);
    }

    let resolved = nodes
        .iter()
        .map(|n| {
            n.inputs
                .iter()
                .map(|r| match *r {
                    InputRef::Const(lit) => Source::Const(lit),
                    InputRef::Socket { node, socket } => {
                        let j = index_of[&node];
                        if nodes[j].kind == NodeKind::Input {
                            Source::Param(socket as usize)
                        } else {
                            Source::Node(j)
                        }
                    }
                })
                .collect()
        })
        .collect();
    Some(Analysis {
        index_of,
        resolved,
        order,
        output,
        out_categories,
        deps: deps.into_iter().map(|d| d.into_iter().collect()).collect(),
        continuous,
        cond_closure,
    })
}

/// Extracts one cycle among nodes that Kahn's algorithm could not order.
fn find_cycle(remaining: &BTreeSet<usize>, sources: &[Vec<usize>]) -> Vec<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let mut mark: HashMap<usize, Mark> = remaining.iter().map(|&i| (i, Mark::New)).collect();
    for &start in remaining {
        if mark[&start] != Mark::New {
            continue;
        }
        // Iterative DFS over input edges, keeping the open path.
        let mut path: Vec<(usize, usize)> = vec![(start, 0)];
        mark.insert(start, Mark::Open);
        while let Some(&mut (node, ref mut next)) = path.last_mut() {
            let succ = sources[node].iter().copied().filter(|s| remaining.contains(s)).nth(*next);
            *next += 1;
            match succ {
                None => {
                    mark.insert(node, Mark::Done);
                    path.pop();
                }
                Some(s) => match mark[&s] {
                    Mark::Open => {
                        let at = path.iter().position(|(n, _)| *n == s).unwrap_or(0);
                        return path[at..].iter().map(|(n, _)| *n).collect();
                    }
                    Mark::New => {
                        mark.insert(s, Mark::Open);
                        path.push((s, 0));
                    }
                    Mark::Done => {}
                },
            }
        }
    }
    remaining.iter().copied().collect()
}

#[cfg(test)]
mod tests;
