//! Shape programs shipped with the crate.

use crate::graph::ShapeGraph;

pub const CABINET_DIVBOARDS: &str = include_str!("../assets/graphs/cabinet_divboards.geonodes.json");
pub const CABINET: &str = include_str!("../assets/graphs/cabinet.geonodes.json");
pub const SOFA: &str = include_str!("../assets/graphs/sofa.geonodes.json");

/// `(name, source)` for every bundled graph.
pub const ALL: [(&str, &str); 3] = [
    ("cabinet_divboards", CABINET_DIVBOARDS),
    ("cabinet", CABINET),
    ("sofa", SOFA),
];

pub fn by_name(name: &str) -> Option<ShapeGraph> {
    ALL.iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| ShapeGraph::from_json(src).expect("bundled graphs are valid"))
}

pub fn cabinet_divboards() -> ShapeGraph {
    ShapeGraph::from_json(CABINET_DIVBOARDS).expect("bundled graph is valid")
}

pub fn cabinet() -> ShapeGraph {
    ShapeGraph::from_json(CABINET).expect("bundled graph is valid")
}

pub fn sofa() -> ShapeGraph {
    ShapeGraph::from_json(SOFA).expect("bundled graph is valid")
}

pub fn all() -> Vec<ShapeGraph> {
    ALL.iter()
        .map(|(_, src)| ShapeGraph::from_json(src).expect("bundled graphs are valid"))
        .collect()
}
