//! `*.geonodes.json` reading and canonical writing.
//!
//! ```json
//! {
//!   "name": "board",
//!   "version": "1",
//!   "parameters": [
//!     {"name": "Width", "kind": "float", "unit": "meter", "min": 0.1, "max": 1.0, "default": 0.5}
//!   ],
//!   "nodes": [
//!     {"id": 0, "kind": "Input"},
//!     {"id": 1, "kind": "Combine", "inputs": [[0, 0], {"const": 0.02}, {"const": 0.3}]},
//!     {"id": 2, "kind": "Primitive", "attrs": {"shape": "cuboid"}, "inputs": [[1, 0]]},
//!     {"id": 3, "kind": "OutputGeometry", "inputs": [[2, 0]]}
//!   ]
//! }
//! ```

use serde_json::{json, Map, Value};

use super::*;

pub const FORMAT_VERSION: &str = "1";

pub(super) fn parse(text: &str) -> Result<ShapeGraph, GraphError> {
    let doc: Value = serde_json::from_str(text)?;
    let mut diags = Vec::new();
    let Some(obj) = doc.as_object() else {
        return Err(GraphError::Invalid(vec![malformed("document", "expected a JSON object")]));
    };
    for key in obj.keys() {
        if !matches!(key.as_str(), "name" | "version" | "parameters" | "nodes") {
            diags.push(malformed("document", &format!("unknown field {key:?}")));
        }
    }
    let name = match obj.get("name") {
        Some(Value::String(s)) => s.clone(),
        _ => {
            diags.push(malformed("name", "expected a string"));
            String::new()
        }
    };
    let version = match obj.get("version") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => {
            diags.push(malformed("version", "expected a string"));
            FORMAT_VERSION.to_string()
        }
    };
    let mut parameters = Vec::new();
    match obj.get("parameters") {
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                if let Some(p) = parse_parameter(i, item, &mut diags) {
                    parameters.push(p);
                }
            }
        }
        None => {}
        _ => diags.push(malformed("parameters", "expected an array")),
    }
    let mut nodes = Vec::new();
    match obj.get("nodes") {
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                if let Some(n) = parse_node(i, item, &mut diags) {
                    nodes.push(n);
                }
            }
        }
        _ => diags.push(malformed("nodes", "expected an array")),
    }
    match ShapeGraph::new(name, version, parameters, nodes) {
        Ok(g) if diags.is_empty() => Ok(g),
        Ok(_) => Err(GraphError::Invalid(diags)),
        Err(GraphError::Invalid(more)) => {
            diags.extend(more);
            Err(GraphError::Invalid(diags))
        }
        Err(e) => Err(e),
    }
}

fn malformed(at: &str, message: &str) -> Diagnostic {
    Diagnostic::Malformed {
        at: at.to_string(),
        message: message.to_string(),
    }
}

fn parse_parameter(index: usize, item: &Value, diags: &mut Vec<Diagnostic>) -> Option<ParameterSpec> {
    let at = format!("parameters[{index}]");
    let Some(obj) = item.as_object() else {
        diags.push(malformed(&at, "expected an object"));
        return None;
    };
    let Some(name) = obj.get("name").and_then(Value::as_str) else {
        diags.push(malformed(&at, "missing string field \"name\""));
        return None;
    };
    let at = format!("parameter {name:?}");
    let unit = match obj.get("unit").and_then(Value::as_str) {
        Some("meter") => Unit::Meter,
        Some("radian") => Unit::Radian,
        Some("count") => Unit::Count,
        Some("flag") => Unit::Flag,
        other => {
            diags.push(malformed(&at, &format!("unknown unit {other:?}")));
            return None;
        }
    };
    let number = |key: &str, diags: &mut Vec<Diagnostic>| -> Option<f64> {
        let v = obj.get(key).and_then(Value::as_f64);
        if v.is_none() {
            diags.push(malformed(&at, &format!("missing numeric field {key:?}")));
        }
        v
    };
    let integer = |key: &str, diags: &mut Vec<Diagnostic>| -> Option<i64> {
        let v = obj.get(key).and_then(Value::as_i64);
        if v.is_none() {
            diags.push(malformed(&at, &format!("missing integer field {key:?}")));
        }
        v
    };
    let (range, default) = match obj.get("kind").and_then(Value::as_str) {
        Some("float") => {
            let (min, max, def) = (number("min", diags), number("max", diags), number("default", diags));
            (ParamRange::Float { min: min?, max: max? }, ParamValue::Float(def?))
        }
        Some("int") => {
            let (min, max, def) = (integer("min", diags), integer("max", diags), integer("default", diags));
            (ParamRange::Int { min: min?, max: max? }, ParamValue::Int(def?))
        }
        Some("bool") => match obj.get("default").and_then(Value::as_bool) {
            Some(b) => (ParamRange::Bool, ParamValue::Bool(b)),
            None => {
                diags.push(malformed(&at, "missing boolean field \"default\""));
                return None;
            }
        },
        other => {
            diags.push(malformed(&at, &format!("unknown kind {other:?}")));
            return None;
        }
    };
    Some(ParameterSpec {
        name: name.to_string(),
        range,
        unit,
        default,
    })
}

fn parse_node(index: usize, item: &Value, diags: &mut Vec<Diagnostic>) -> Option<NodeSpec> {
    let at = format!("nodes[{index}]");
    let Some(obj) = item.as_object() else {
        diags.push(malformed(&at, "expected an object"));
        return None;
    };
    let Some(id) = obj.get("id").and_then(Value::as_u64).and_then(|v| u32::try_from(v).ok()) else {
        diags.push(malformed(&at, "missing non-negative integer field \"id\""));
        return None;
    };
    let empty = Map::new();
    let attrs = match obj.get("attrs") {
        None => &empty,
        Some(Value::Object(m)) => m,
        Some(_) => {
            diags.push(Diagnostic::BadAttribute {
                node: id,
                message: "attrs must be an object".into(),
            });
            return None;
        }
    };
    let kind_name = obj.get("kind").and_then(Value::as_str).unwrap_or("");
    let kind = match kind_name {
        "Input" => NodeKind::Input,
        "Math" => {
            let op = attrs.get("op").and_then(Value::as_str).unwrap_or("");
            match MathOp::ALL.iter().find(|m| m.wire_name() == op) {
                Some(&m) => NodeKind::Math(m),
                None => {
                    diags.push(Diagnostic::UnsupportedMathOp {
                        node: id,
                        op: op.to_string(),
                    });
                    return None;
                }
            }
        }
        "Switch" => NodeKind::Switch,
        "Combine" => NodeKind::Combine,
        "Primitive" => match attrs.get("shape").and_then(Value::as_str) {
            Some("cuboid") => NodeKind::Primitive(PrimitiveShape::Cuboid),
            Some("cylinder") => {
                let segments = attrs.get("segments").and_then(Value::as_u64).unwrap_or(0);
                if !(3..=1024).contains(&segments) {
                    diags.push(Diagnostic::BadAttribute {
                        node: id,
                        message: "cylinder needs an integer \"segments\" attribute in 3..=1024".into(),
                    });
                    return None;
                }
                NodeKind::Primitive(PrimitiveShape::Cylinder {
                    segments: segments as u32,
                })
            }
            other => {
                diags.push(Diagnostic::BadAttribute {
                    node: id,
                    message: format!("unknown primitive shape {other:?}"),
                });
                return None;
            }
        },
        "Transform" => NodeKind::Transform,
        "MeshLine" => NodeKind::MeshLine,
        "PointsOnInstances" => NodeKind::PointsOnInstances,
        "JoinGeometry" => NodeKind::JoinGeometry,
        "OutputGeometry" => NodeKind::OutputGeometry,
        other => {
            diags.push(Diagnostic::UnknownNodeKind {
                node: id,
                kind: other.to_string(),
            });
            return None;
        }
    };
    let mut inputs = Vec::new();
    let mut ok = true;
    match obj.get("inputs") {
        None => {}
        Some(Value::Array(items)) => {
            for (k, v) in items.iter().enumerate() {
                match parse_input(v) {
                    Some(r) => inputs.push(r),
                    None => {
                        diags.push(malformed(
                            &format!("node {id} input {k}"),
                            "expected [node_id, socket] or {\"const\": value}",
                        ));
                        ok = false;
                    }
                }
            }
        }
        Some(_) => {
            diags.push(malformed(&format!("node {id}"), "inputs must be an array"));
            ok = false;
        }
    }
    ok.then_some(NodeSpec { id, kind, inputs })
}

fn parse_input(v: &Value) -> Option<InputRef> {
    match v {
        Value::Array(pair) if pair.len() == 2 => {
            let node = u32::try_from(pair[0].as_u64()?).ok()?;
            let socket = u32::try_from(pair[1].as_u64()?).ok()?;
            Some(InputRef::Socket { node, socket })
        }
        Value::Object(m) if m.len() == 1 => {
            let lit = match m.get("const")? {
                Value::Bool(b) => Literal::Bool(*b),
                Value::Number(n) => Literal::Scalar(n.as_f64()?),
                Value::Array(xs) if xs.len() == 3 => {
                    Literal::Vec3([xs[0].as_f64()?, xs[1].as_f64()?, xs[2].as_f64()?])
                }
                _ => return None,
            };
            Some(InputRef::Const(lit))
        }
        _ => None,
    }
}

pub(super) fn serialize(g: &ShapeGraph) -> String {
    let params: Vec<Value> = g
        .parameters
        .iter()
        .map(|p| {
            let unit = match p.unit {
                Unit::Meter => "meter",
                Unit::Radian => "radian",
                Unit::Count => "count",
                Unit::Flag => "flag",
            };
            match (p.range, p.default) {
                (ParamRange::Float { min, max }, d) => json!({
                    "name": p.name, "kind": "float", "unit": unit,
                    "min": min, "max": max, "default": d.as_f64(),
                }),
                (ParamRange::Int { min, max }, d) => json!({
                    "name": p.name, "kind": "int", "unit": unit,
                    "min": min, "max": max, "default": d.as_f64() as i64,
                }),
                (ParamRange::Bool, d) => json!({
                    "name": p.name, "kind": "bool", "unit": unit,
                    "default": d == ParamValue::Bool(true),
                }),
            }
        })
        .collect();
    let nodes: Vec<Value> = g
        .nodes
        .iter()
        .map(|n| {
            let mut obj = Map::new();
            obj.insert("id".into(), json!(n.id));
            obj.insert("kind".into(), json!(n.kind.wire_name()));
            match n.kind {
                NodeKind::Math(op) => {
                    obj.insert("attrs".into(), json!({"op": op.wire_name()}));
                }
                NodeKind::Primitive(PrimitiveShape::Cuboid) => {
                    obj.insert("attrs".into(), json!({"shape": "cuboid"}));
                }
                NodeKind::Primitive(PrimitiveShape::Cylinder { segments }) => {
                    obj.insert("attrs".into(), json!({"shape": "cylinder", "segments": segments}));
                }
                _ => {}
            }
            if !n.inputs.is_empty() {
                let inputs: Vec<Value> = n
                    .inputs
                    .iter()
                    .map(|r| match *r {
                        InputRef::Socket { node, socket } => json!([node, socket]),
                        InputRef::Const(Literal::Scalar(x)) => json!({"const": x}),
                        InputRef::Const(Literal::Bool(b)) => json!({"const": b}),
                        InputRef::Const(Literal::Vec3(v)) => json!({"const": v}),
                    })
                    .collect();
                obj.insert("inputs".into(), Value::Array(inputs));
            }
            Value::Object(obj)
        })
        .collect();
    let doc = json!({
        "name": g.name,
        "version": g.version,
        "parameters": params,
        "nodes": nodes,
    });
    let mut out = serde_json::to_string_pretty(&doc).expect("graph documents always serialize");
    out.push('\n');
    out
}
