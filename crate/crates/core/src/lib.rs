pub mod geometry;
pub mod graph;
pub mod tape;
pub mod eval;
pub mod bundled;
pub mod obj;
pub mod objective;
pub mod search;
pub mod harness;
pub mod gradcheck;
