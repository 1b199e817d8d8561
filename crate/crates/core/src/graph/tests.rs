use super::*;
use proptest::prelude::*;

const BOARD: &str = r#"{
  "name": "board",
  "version": "1",
  "parameters": [
    {"name": "Width", "kind": "float", "unit": "meter", "min": 0.1, "max": 1.0, "default": 0.5},
    {"name": "Count", "kind": "int", "unit": "count", "min": 1, "max": 4, "default": 2},
    {"name": "Tall", "kind": "bool", "unit": "flag", "default": false}
  ],
  "nodes": [
    {"id": 0, "kind": "Input"},
    {"id": 1, "kind": "Switch", "inputs": [[0, 2], {"const": 0.8}, {"const": 0.3}]},
    {"id": 2, "kind": "Combine", "inputs": [[0, 0], [1, 0], {"const": 0.02}]},
    {"id": 3, "kind": "Primitive", "attrs": {"shape": "cuboid"}, "inputs": [[2, 0]]},
    {"id": 4, "kind": "MeshLine", "inputs": [[0, 1], {"const": [0, 0, 0]}, {"const": [0, 0, 0.1]}]},
    {"id": 5, "kind": "PointsOnInstances", "inputs": [[4, 0], [3, 0]]},
    {"id": 6, "kind": "OutputGeometry", "inputs": [[5, 0]]}
  ]
}"#;

fn board() -> ShapeGraph {
    ShapeGraph::from_json(BOARD).unwrap()
}

fn diags_of(text: &str) -> Vec<Diagnostic> {
    match ShapeGraph::from_json(text) {
        Err(GraphError::Invalid(d)) => d,
        other => panic!("expected validation failure, got {other:?}"),
    }
}

#[test]
fn parses_and_round_trips() {
    let g = board();
    assert_eq!(g.parameters.len(), 3);
    assert_eq!(g.nodes.len(), 7);
    let text = g.to_json();
    let again = ShapeGraph::from_json(&text).unwrap();
    assert_eq!(g, again);
    assert_eq!(text, again.to_json());
}

#[test]
fn dependency_sets_follow_edges() {
    let g = board();
    let idx = |id| g.index_of(id);
    assert_eq!(g.node_deps(idx(1)), &[2]);
    assert_eq!(g.node_deps(idx(2)), &[0, 2]);
    assert_eq!(g.node_deps(idx(4)), &[1]);
    assert!(!g.depends_on_continuous(idx(4)));
    assert!(g.depends_on_continuous(idx(5)));
    assert_eq!(g.output_category(idx(4), 0), Category::Points);
    assert_eq!(g.output_category(idx(0), 2), Category::Bool);
}

#[test]
fn cycle_is_named() {
    let text = r#"{"name": "c", "version": "1", "parameters": [], "nodes": [
        {"id": 1, "kind": "Combine", "inputs": [{"const": 1}, {"const": 1}, {"const": 1}]},
        {"id": 3, "kind": "Math", "attrs": {"op": "add"}, "inputs": [[7, 0], {"const": 1}]},
        {"id": 7, "kind": "Math", "attrs": {"op": "mul"}, "inputs": [[3, 0], {"const": 2}]},
        {"id": 8, "kind": "Combine", "inputs": [[3, 0], [7, 0], {"const": 1}]},
        {"id": 9, "kind": "Primitive", "attrs": {"shape": "cuboid"}, "inputs": [[8, 0]]},
        {"id": 10, "kind": "OutputGeometry", "inputs": [[9, 0]]}
    ]}"#;
    let d = diags_of(text);
    assert!(d.contains(&Diagnostic::Cycle(vec![3, 7])), "{d:?}");
}

#[test]
fn every_problem_is_reported() {
    let text = r#"{"name": "bad", "version": "1", "parameters": [
        {"name": "W", "kind": "float", "unit": "meter", "min": 0.1, "max": 1.0, "default": 2.0},
        {"name": "W", "kind": "int", "unit": "count", "min": 1, "max": 3, "default": 1}
    ], "nodes": [
        {"id": 0, "kind": "Input"},
        {"id": 1, "kind": "Math", "attrs": {"op": "power"}, "inputs": [[0, 0], {"const": 2}]},
        {"id": 2, "kind": "Teleport"},
        {"id": 3, "kind": "Primitive", "attrs": {"shape": "cuboid"}, "inputs": [[42, 0]]},
        {"id": 4, "kind": "OutputGeometry", "inputs": [[3, 0]]}
    ]}"#;
    let d = diags_of(text);
    let has = |pred: &dyn Fn(&Diagnostic) -> bool| d.iter().any(pred);
    assert!(has(&|x| matches!(x, Diagnostic::DuplicateParameter(n) if n == "W")), "{d:?}");
    assert!(has(&|x| matches!(x, Diagnostic::BadParameter { .. })), "{d:?}");
    assert!(has(&|x| matches!(x, Diagnostic::UnsupportedMathOp { node: 1, op } if op == "power")), "{d:?}");
    assert!(has(&|x| matches!(x, Diagnostic::UnknownNodeKind { node: 2, .. })), "{d:?}");
    assert!(has(&|x| matches!(x, Diagnostic::DanglingReference { node: 3, source_node: 42, .. })), "{d:?}");
    let shown = GraphError::Invalid(d.clone()).to_string();
    assert!(shown.contains("power") && shown.contains("Teleport") && shown.contains("42"));
}

#[test]
fn type_errors() {
    let text = r#"{"name": "t", "version": "1", "parameters": [
        {"name": "F", "kind": "bool", "unit": "flag", "default": true}
    ], "nodes": [
        {"id": 0, "kind": "Input"},
        {"id": 1, "kind": "Combine", "inputs": [[0, 0], {"const": 1}, {"const": 1}]},
        {"id": 2, "kind": "Switch", "inputs": [[0, 0], {"const": 1}, {"const": [1, 1, 1]}]},
        {"id": 3, "kind": "Primitive", "attrs": {"shape": "cuboid"}, "inputs": [[1, 0]]},
        {"id": 4, "kind": "Transform", "inputs": [[3, 0], [2, 0], {"const": [0, 0, 0]}, {"const": [1, 1, 1]}]},
        {"id": 5, "kind": "OutputGeometry", "inputs": [[4, 0]]}
    ]}"#;
    let d = diags_of(text);
    assert!(d.contains(&Diagnostic::CategoryMismatch {
        node: 1,
        input: 0,
        expected: Category::Scalar,
        found: Category::Bool
    }));
    assert!(d.iter().any(|x| matches!(x, Diagnostic::SwitchBranchMismatch { node: 2, .. })));
}

#[test]
fn structural_errors() {
    let dead = BOARD.replace(
        r#"{"id": 6, "kind""#,
        r#"{"id": 9, "kind": "Combine", "inputs": [{"const": 1}, {"const": 1}, {"const": 1}]},
    {"id": 6, "kind""#,
    );
    assert!(diags_of(&dead).contains(&Diagnostic::DeadNode(9)));

    let continuous_count = BOARD.replace(r#""inputs": [[0, 1], {"const": [0, 0, 0]}"#, r#""inputs": [[0, 0], {"const": [0, 0, 0]}"#);
    assert!(diags_of(&continuous_count).contains(&Diagnostic::ContinuousCount { node: 4 }));

    let no_output = BOARD.replace("OutputGeometry", "JoinGeometry");
    assert!(diags_of(&no_output).contains(&Diagnostic::OutputCount(0)));

    let bad_socket = BOARD.replace("[[0, 2], {\"const\": 0.8}", "[[0, 5], {\"const\": 0.8}");
    assert!(diags_of(&bad_socket)
        .iter()
        .any(|x| matches!(x, Diagnostic::BadSocket { node: 1, socket: 5, available: 3, .. })));

    let version = BOARD.replace(r#""version": "1""#, r#""version": "2""#);
    assert!(diags_of(&version).contains(&Diagnostic::UnsupportedVersion("2".into())));

    assert!(matches!(ShapeGraph::from_json("{not json"), Err(GraphError::Json(_))));
}

#[test]
fn topo_order_breaks_ties_by_id() {
    let g = board();
    assert_eq!(g.topo_order(), vec![0, 1, 2, 3, 4, 5, 6]);
}

#[test]
fn assignment_checks() {
    let g = board();
    let mut a = g.default_assignment();
    assert!(a.validate(&g).is_ok());
    a.set("Width", ParamValue::Int(1));
    assert_eq!(a.ordered_values(&g).unwrap()[0], ParamValue::Float(1.0));
    a.set("Width", ParamValue::Float(3.0));
    assert!(matches!(a.validate(&g), Err(AssignmentError::OutOfRange { .. })));
    a.set("Width", ParamValue::Bool(true));
    assert!(matches!(a.validate(&g), Err(AssignmentError::WrongKind { .. })));
    let mut b = g.default_assignment();
    b.set("Depth", ParamValue::Float(0.2));
    assert!(matches!(b.validate(&g), Err(AssignmentError::UnknownParameter(_))));
    assert_eq!(g.parse_value("Tall", "true").unwrap(), ParamValue::Bool(true));
    assert_eq!(g.parse_value("Count", "3").unwrap(), ParamValue::Int(3));
    assert!(g.parse_value("Count", "3.5").is_err());
    let p = Pose {
        rotation: -0.5 * std::f64::consts::PI,
        translation: [0.0; 3],
    };
    assert!((p.normalized().rotation - 1.5 * std::f64::consts::PI).abs() < 1e-12);
}

/// Random layered DAG of scalar math feeding one cuboid.
fn random_graph(edges: &[(u8, u8)], shuffle: &[u32]) -> String {
    let n = shuffle.len();
    let mut nodes = Vec::new();
    let id = |k: usize| shuffle[k];
    for k in 0..n {
        let pick = |sel: u8| -> String {
            if k == 0 {
                "{\"const\": 1}".into()
            } else {
                format!("[{}, 0]", id(sel as usize % k))
            }
        };
        let (a, b) = edges[k % edges.len()];
        nodes.push(format!(
            r#"{{"id": {}, "kind": "Math", "attrs": {{"op": "add"}}, "inputs": [{}, {}]}}"#,
            id(k),
            pick(a),
            pick(b)
        ));
    }
    let all: Vec<String> = (0..n).map(|k| format!("[{}, 0]", id(k))).collect();
    // Sum every math node so nothing is dead.
    let mut acc = all[0].clone();
    let mut next = 10_000;
    for term in &all[1..] {
        nodes.push(format!(r#"{{"id": {next}, "kind": "Math", "attrs": {{"op": "add"}}, "inputs": [{acc}, {term}]}}"#));
        acc = format!("[{next}, 0]");
        next += 1;
    }
    nodes.push(format!(r#"{{"id": 20000, "kind": "Combine", "inputs": [{acc}, {acc}, {acc}]}}"#));
    nodes.push(r#"{"id": 20001, "kind": "Primitive", "attrs": {"shape": "cuboid"}, "inputs": [[20000, 0]]}"#.into());
    nodes.push(r#"{"id": 20002, "kind": "OutputGeometry", "inputs": [[20001, 0]]}"#.into());
    format!(r#"{{"name": "r", "version": "1", "parameters": [], "nodes": [{}]}}"#, nodes.join(","))
}

proptest! {
    #[test]
    fn topo_order_respects_edges(
        edges in prop::collection::vec((any::<u8>(), any::<u8>()), 1..6),
        shuffle in Just((0u32..12).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let g = ShapeGraph::from_json(&random_graph(&edges, &shuffle)).unwrap();
        let order = g.topo_order();
        prop_assert_eq!(order.len(), g.nodes.len());
        let pos: HashMap<NodeId, usize> = order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        for n in &g.nodes {
            for r in &n.inputs {
                if let InputRef::Socket { node, .. } = r {
                    prop_assert!(pos[node] < pos[&n.id]);
                }
            }
        }
        // Deterministic regardless of declaration order.
        let mut reversed = g.nodes.clone();
        reversed.reverse();
        let g2 = ShapeGraph::new(g.name.clone(), g.version.clone(), vec![], reversed).unwrap();
        prop_assert_eq!(g2.topo_order(), order);
    }

    #[test]
    fn serialization_round_trips(
        edges in prop::collection::vec((any::<u8>(), any::<u8>()), 1..6),
        shuffle in Just((0u32..8).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let g = ShapeGraph::from_json(&random_graph(&edges, &shuffle)).unwrap();
        let again = ShapeGraph::from_json(&g.to_json()).unwrap();
        prop_assert_eq!(&g, &again);
    }
}
