//! Geometric value types and per-node geometric semantics.
//!
//! Every constructor is generic over [`Scalar`] so the same code runs on plain
//! `f64` values and on taped variables. Coordinates are meters with `y` up.

use serde::{Deserialize, Serialize};

use crate::tape::Scalar;

/// Floor applied to extent-like quantities before building primitives.
pub const EPS_DIM: f64 = 1e-4;

pub type Vec3<S> = [S; 3];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("non-finite primitive dimension {0}")]
    NonFiniteDimension(f64),
    #[error("cylinder needs at least 3 segments, got {0}")]
    TooFewSegments(u32),
    #[error("mesh line needs a positive point count, got {0}")]
    NonPositiveCount(i64),
    #[error("point count {0} is not an integer")]
    NonIntegerCount(f64),
    #[error("face {face} references vertex {index} but the mesh has {vertices} vertices")]
    FaceIndexOutOfRange { face: usize, index: u32, vertices: usize },
    #[error("face {0} repeats a vertex index")]
    DegenerateFace(usize),
    #[error("vertex {0} has a non-finite coordinate")]
    NonFiniteVertex(usize),
}

/// Triangle mesh with counter-clockwise outward winding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh<S = f64> {
    pub vertices: Vec<Vec3<S>>,
    pub faces: Vec<[u32; 3]>,
}

impl<S> Default for Mesh<S> {
    fn default() -> Self {
        Mesh {
            vertices: Vec::new(),
            faces: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet<S = f64> {
    pub points: Vec<Vec3<S>>,
}

impl<S> Default for PointSet<S> {
    fn default() -> Self {
        PointSet { points: Vec::new() }
    }
}

/// Scale, Euler XYZ rotation (radians) and translation, applied in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransformParams<S> {
    pub scale: Vec3<S>,
    pub rotation: Vec3<S>,
    pub translation: Vec3<S>,
}

impl<S: Scalar> RigidTransformParams<S> {
    pub fn identity() -> Self {
        RigidTransformParams {
            scale: [S::constant(1.0); 3],
            rotation: [S::constant(0.0); 3],
            translation: [S::constant(0.0); 3],
        }
    }
}

impl<S: Scalar> Mesh<S> {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Drops tape information.
    pub fn values(&self) -> Mesh<f64> {
        Mesh {
            vertices: self.vertices.iter().map(|v| v.map(S::value)).collect(),
            faces: self.faces.clone(),
        }
    }
}

impl<S: Scalar> PointSet<S> {
    pub fn values(&self) -> PointSet<f64> {
        PointSet {
            points: self.points.iter().map(|v| v.map(S::value)).collect(),
        }
    }
}

impl Mesh<f64> {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.vertices.len();
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(GeometryError::NonFiniteVertex(i));
            }
        }
        for (face, f) in self.faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&i| i as usize >= n) {
                return Err(GeometryError::FaceIndexOutOfRange {
                    face,
                    index,
                    vertices: n,
                });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeometryError::DegenerateFace(face));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box as (min, max); `None` for an empty mesh.
    pub fn bbox(&self) -> Option<([f64; 3], [f64; 3])> {
        bbox_of(&self.vertices)
    }

    /// Extent of the bounding box per axis (zero for an empty mesh).
    pub fn extent(&self) -> [f64; 3] {
        self.bbox()
            .map(|(lo, hi)| [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]])
            .unwrap_or([0.0; 3])
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i as usize]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }
}

pub(crate) fn bbox_of(points: &[[f64; 3]]) -> Option<([f64; 3], [f64; 3])> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(mut lo, mut hi), p| {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
        (lo, hi)
    }))
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn checked_extent<S: Scalar>(x: S) -> Result<S, GeometryError> {
    if !x.value().is_finite() {
        return Err(GeometryError::NonFiniteDimension(x.value()));
    }
    Ok(x.clamp_min(EPS_DIM))
}

/// Axis-aligned box centered at the origin.
pub fn make_cuboid<S: Scalar>(size: Vec3<S>) -> Result<Mesh<S>, GeometryError> {
    let half = S::constant(0.5);
    let mut h = [S::constant(0.0); 3];
    for k in 0..3 {
        h[k] = checked_extent(size[k])? * half;
    }
    let vertices = (0..8)
        .map(|i| {
            let pick = |bit: usize, s: S| if i & bit == 0 { -s } else { s };
            [pick(1, h[0]), pick(2, h[1]), pick(4, h[2])]
        })
        .collect();
    // Vertex i has x from bit 0, y from bit 1, z from bit 2.
    let faces = vec![
        [0, 4, 6],
        [0, 6, 2], // -x
        [1, 3, 7],
        [1, 7, 5], // +x
        [0, 1, 5],
        [0, 5, 4], // -y
        [2, 6, 7],
        [2, 7, 3], // +y
        [0, 2, 3],
        [0, 3, 1], // -z
        [4, 5, 7],
        [4, 7, 6], // +z
    ];
    Ok(Mesh { vertices, faces })
}

/// Closed y-axis cylinder centered at the origin, caps fanned around a center
/// vertex. Vertex layout: bottom ring, top ring, bottom center, top center.
pub fn make_cylinder<S: Scalar>(radius: S, depth: S, segments: u32) -> Result<Mesh<S>, GeometryError> {
    if segments < 3 {
        return Err(GeometryError::TooFewSegments(segments));
    }
    let r = checked_extent(radius)?;
    let half = checked_extent(depth)? * S::constant(0.5);
    let n = segments;
    let mut vertices = Vec::with_capacity(2 * n as usize + 2);
    for y in [-half, half] {
        for k in 0..n {
            let theta = std::f64::consts::TAU * k as f64 / n as f64;
            let (s, c) = theta.sin_cos();
            vertices.push([r * S::constant(c), y, r * S::constant(s)]);
        }
    }
    let zero = S::constant(0.0);
    vertices.push([zero, -half, zero]);
    vertices.push([zero, half, zero]);
    let (bottom, top) = (2 * n, 2 * n + 1);
    let mut faces = Vec::with_capacity(4 * n as usize);
    for k in 0..n {
        let k1 = (k + 1) % n;
        // Lateral quad split into (k, n + k1, k1) and (k, n + k, n + k1).
        faces.push([k, n + k1, k1]);
        faces.push([k, n + k, n + k1]);
        faces.push([bottom, k, k1]);
        faces.push([top, n + k1, n + k]);
    }
    Ok(Mesh { vertices, faces })
}

/// Rotation matrix for Euler XYZ angles (rotate about x, then y, then z).
pub fn euler_xyz_matrix<S: Scalar>(rotation: Vec3<S>) -> [[S; 3]; 3] {
    let (sx, cx) = (rotation[0].sin(), rotation[0].cos());
    let (sy, cy) = (rotation[1].sin(), rotation[1].cos());
    let (sz, cz) = (rotation[2].sin(), rotation[2].cos());
    [
        [cy * cz, sx * sy * cz - cx * sz, cx * sy * cz + sx * sz],
        [cy * sz, sx * sy * sz + cx * cz, cx * sy * sz - sx * cz],
        [-sy, sx * cy, cx * cy],
    ]
}

/// `v' = R (s ⊙ v) + t`. Scale components are clamped to at least
/// [`EPS_DIM`].
pub fn apply_transform<S: Scalar>(mesh: &Mesh<S>, t: &RigidTransformParams<S>) -> Mesh<S> {
    let r = euler_xyz_matrix(t.rotation);
    let s = t.scale.map(|c| c.clamp_min(EPS_DIM));
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| {
            let p = [s[0] * v[0], s[1] * v[1], s[2] * v[2]];
            let mut out = [S::constant(0.0); 3];
            for (i, row) in r.iter().enumerate() {
                out[i] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + t.translation[i];
            }
            out
        })
        .collect();
    Mesh {
        vertices,
        faces: mesh.faces.clone(),
    }
}

/// Points `start + k * offset` for `k = 0..count`.
pub fn mesh_line<S: Scalar>(start: Vec3<S>, offset: Vec3<S>, count: i64) -> Result<PointSet<S>, GeometryError> {
    if count <= 0 {
        return Err(GeometryError::NonPositiveCount(count));
    }
    let points = (0..count)
        .map(|k| {
            let kf = S::constant(k as f64);
            [
                start[0] + kf * offset[0],
                start[1] + kf * offset[1],
                start[2] + kf * offset[2],
            ]
        })
        .collect();
    Ok(PointSet { points })
}

/// One translated copy of `template` per anchor point.
pub fn points_on_instances<S: Scalar>(template: &Mesh<S>, anchors: &PointSet<S>) -> Mesh<S> {
    let nv = template.vertices.len();
    let mut out = Mesh {
        vertices: Vec::with_capacity(nv * anchors.points.len()),
        faces: Vec::with_capacity(template.faces.len() * anchors.points.len()),
    };
    for (k, a) in anchors.points.iter().enumerate() {
        let base = (k * nv) as u32;
        out.vertices.extend(
            template
                .vertices
                .iter()
                .map(|v| [v[0] + a[0], v[1] + a[1], v[2] + a[2]]),
        );
        out.faces
            .extend(template.faces.iter().map(|f| f.map(|i| i + base)));
    }
    out
}

/// Concatenates parts, offsetting face indices. No vertex welding.
pub fn join_geometry<'a, S: Scalar>(parts: impl IntoIterator<Item = &'a Mesh<S>>) -> Mesh<S> {
    let mut out = Mesh::default();
    for part in parts {
        let base = out.vertices.len() as u32;
        out.vertices.extend_from_slice(&part.vertices);
        out.faces.extend(part.faces.iter().map(|f| f.map(|i| i + base)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn signed_volume(m: &Mesh) -> f64 {
        m.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| m.vertices[i as usize]);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Every undirected edge is shared by exactly two faces with opposite
    /// orientation.
    fn is_watertight(m: &Mesh) -> bool {
        use std::collections::HashMap;
        let mut edges: HashMap<(u32, u32), i32> = HashMap::new();
        for f in &m.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += if a < b { 1 } else { -1 };
            }
        }
        edges.values().all(|&v| v == 0)
    }

    #[test]
    fn unit_cube_corners() {
        let m = make_cuboid([1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.faces.len(), 12);
        assert!(m.vertices.iter().flatten().all(|c| c.abs() == 0.5));
        assert!(is_watertight(&m));
        assert!((signed_volume(&m) - 1.0).abs() < 1e-12, "outward winding");
    }

    #[test]
    fn board_slab_extent_is_exact() {
        let m = make_cuboid([0.5, 0.04, 0.6]).unwrap();
        assert_eq!(m.extent(), [0.5, 0.04, 0.6]);
    }

    #[test]
    fn cuboid_area_matches_closed_form() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (w, h, d) = (rng.gen_range(0.01..2.0), rng.gen_range(0.01..2.0), rng.gen_range(0.01..2.0));
            let m = make_cuboid([w, h, d]).unwrap();
            let expected = 2.0 * (w * h + w * d + h * d);
            assert!((m.surface_area() - expected).abs() < 1e-12 * expected.max(1.0));
        }
    }

    #[test]
    fn non_finite_size_is_rejected() {
        assert!(matches!(
            make_cuboid([f64::NAN, 1.0, 1.0]),
            Err(GeometryError::NonFiniteDimension(_))
        ));
    }

    #[test]
    fn square_prism_cylinder() {
        let r = 0.3;
        let m = make_cylinder(r, 1.0, 4).unwrap();
        assert_eq!(m.vertices.len(), 10);
        let e = m.extent();
        assert!((e[0] - 2.0 * r).abs() < 1e-12 && (e[2] - 2.0 * r).abs() < 1e-12);
        assert!(is_watertight(&m));
    }

    #[test]
    fn cylinder_lateral_area_near_analytic() {
        let (r, depth, n) = (0.2, 0.7, 32u32);
        let m = make_cylinder(r, depth, n).unwrap();
        let lateral: f64 = (0..m.faces.len()).filter(|f| f % 4 < 2).map(|f| m.face_area(f)).sum();
        let analytic = 2.0 * PI * r * depth;
        assert!(lateral < analytic && (analytic - lateral) / analytic < 0.01);
        assert!(signed_volume(&m) > 0.0, "outward winding");
        assert!(is_watertight(&m));
    }

    #[test]
    fn thin_disk_at_clamp_floor() {
        let m = make_cylinder(0.1, EPS_DIM, 8).unwrap();
        m.validate().unwrap();
        assert!((m.extent()[1] - EPS_DIM).abs() < 1e-15);
        assert!(make_cylinder(0.1, 0.0, 8).unwrap().extent()[1] > 0.0);
        assert_eq!(make_cylinder(0.1, 0.1, 2), Err(GeometryError::TooFewSegments(2)));
    }

    #[test]
    fn identity_transform_is_bitwise() {
        let m = make_cuboid([0.3, 0.7, 1.1]).unwrap();
        let out = apply_transform(&m, &RigidTransformParams::identity());
        assert_eq!(out, m);
    }

    #[test]
    fn rotation_composes() {
        let m = make_cuboid([0.3, 0.7, 1.1]).unwrap();
        let quarter = RigidTransformParams {
            rotation: [0.0, PI / 2.0, 0.0],
            ..RigidTransformParams::identity()
        };
        let half = RigidTransformParams {
            rotation: [0.0, PI, 0.0],
            ..RigidTransformParams::identity()
        };
        let twice = apply_transform(&apply_transform(&m, &quarter), &quarter);
        let once = apply_transform(&m, &half);
        for (a, b) in twice.vertices.iter().zip(&once.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
    }

    /// Independent homogeneous 4x4 route: T * Rz * Ry * Rx * S.
    fn matrix_oracle(t: &RigidTransformParams<f64>) -> [[f64; 4]; 4] {
        fn mul(a: [[f64; 4]; 4], b: [[f64; 4]; 4]) -> [[f64; 4]; 4] {
            let mut c = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
                }
            }
            c
        }
        let id = |f: &dyn Fn(usize, usize) -> f64| {
            let mut m = [[0.0; 4]; 4];
            for (i, row) in m.iter_mut().enumerate() {
                for (j, x) in row.iter_mut().enumerate() {
                    *x = f(i, j);
                }
            }
            m
        };
        let [ax, ay, az] = t.rotation;
        let s = id(&|i, j| if i != j { 0.0 } else if i < 3 { t.scale[i] } else { 1.0 });
        let rx = [[1.0, 0.0, 0.0, 0.0], [0.0, ax.cos(), -ax.sin(), 0.0], [0.0, ax.sin(), ax.cos(), 0.0], [0.0, 0.0, 0.0, 1.0]];
        let ry = [[ay.cos(), 0.0, ay.sin(), 0.0], [0.0, 1.0, 0.0, 0.0], [-ay.sin(), 0.0, ay.cos(), 0.0], [0.0, 0.0, 0.0, 1.0]];
        let rz = [[az.cos(), -az.sin(), 0.0, 0.0], [az.sin(), az.cos(), 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        let tr = id(&|i, j| if i == j { 1.0 } else if j == 3 && i < 3 { t.translation[i] } else { 0.0 });
        mul(tr, mul(rz, mul(ry, mul(rx, s))))
    }

    #[test]
    fn transform_matches_matrix_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let m = make_cylinder(0.4, 0.9, 7).unwrap();
        for _ in 0..20 {
            let mut r3 = |lo: f64, hi: f64| [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
            let t = RigidTransformParams {
                scale: r3(0.1, 3.0),
                rotation: r3(-PI, PI),
                translation: r3(-2.0, 2.0),
            };
            let out = apply_transform(&m, &t);
            let h = matrix_oracle(&t);
            for (v, w) in m.vertices.iter().zip(&out.vertices) {
                for i in 0..3 {
                    let expected = h[i][0] * v[0] + h[i][1] * v[1] + h[i][2] * v[2] + h[i][3];
                    assert!((w[i] - expected).abs() < 1e-12);
                }
            }
            assert_eq!(out.faces, m.faces);
        }
    }

    #[test]
    fn mesh_line_points() {
        let single = mesh_line([1.0, 2.0, 3.0], [5.0, 5.0, 5.0], 1).unwrap();
        assert_eq!(single.points, vec![[1.0, 2.0, 3.0]]);
        let line = mesh_line([0.0; 3], [0.0, 0.1, 0.0], 5).unwrap();
        assert_eq!(line.points.len(), 5);
        assert_eq!(line.points[4], [0.0, 4.0 * 0.1, 0.0]);
        assert!((line.points[4][1] - 0.4).abs() < 1e-15);
        assert_eq!(mesh_line([0.0; 3], [1.0; 3], 0), Err(GeometryError::NonPositiveCount(0)));
    }

    #[test]
    fn instancing_counts_and_identity() {
        let cube = make_cuboid([1.0, 2.0, 3.0]).unwrap();
        let origin = PointSet { points: vec![[0.0; 3]] };
        assert_eq!(points_on_instances(&cube, &origin), cube);
        let anchors = mesh_line([0.0; 3], [0.0, 0.1, 0.0], 5).unwrap();
        let out = points_on_instances(&cube, &anchors);
        assert_eq!((out.vertices.len(), out.faces.len()), (8 * 5, 12 * 5));
        out.validate().unwrap();
        assert!(points_on_instances(&cube, &PointSet::default()).is_empty());
    }

    #[test]
    fn instancing_bbox_is_minkowski_sum() {
        let tpl = make_cylinder(0.2, 0.5, 6).unwrap();
        let anchors = PointSet {
            points: vec![[0.3, -1.0, 2.0], [-0.7, 0.4, 0.1], [1.5, 0.0, -0.2]],
        };
        let (tlo, thi) = tpl.bbox().unwrap();
        let (alo, ahi) = bbox_of(&anchors.points).unwrap();
        let (lo, hi) = points_on_instances(&tpl, &anchors).bbox().unwrap();
        for k in 0..3 {
            assert!((lo[k] - (tlo[k] + alo[k])).abs() < 1e-12);
            assert!((hi[k] - (thi[k] + ahi[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn join_edge_cases() {
        let a = make_cuboid([1.0; 3]).unwrap();
        assert_eq!(join_geometry([&a]), a);
        assert!(join_geometry::<f64>([]).is_empty());
        let b = make_cylinder(0.5, 1.0, 5).unwrap();
        let j = join_geometry([&a, &b, &a]);
        assert_eq!(j.vertices.len(), 8 + 12 + 8);
        assert_eq!(j.faces.len(), 12 + 20 + 12);
        j.validate().unwrap();
    }

    proptest! {
        #[test]
        fn constructors_yield_valid_meshes(w in 0.0f64..3.0, h in 0.0f64..3.0, d in 0.0f64..3.0, seg in 3u32..40) {
            make_cuboid([w, h, d]).unwrap().validate().unwrap();
            make_cylinder(w, h, seg).unwrap().validate().unwrap();
        }

        #[test]
        fn transform_preserves_topology(sx in 0.01f64..4.0, ry in -4.0f64..4.0, tz in -3.0f64..3.0) {
            let m = make_cylinder(0.3, 0.4, 9).unwrap();
            let t = RigidTransformParams { scale: [sx, 1.0, 2.0], rotation: [0.2, ry, -0.5], translation: [0.0, 1.0, tz] };
            let out = apply_transform(&m, &t);
            prop_assert_eq!(&out.faces, &m.faces);
            out.validate().unwrap();
        }

        #[test]
        fn instancing_is_linear_in_anchors(tx in -2.0f64..2.0, ty in -2.0f64..2.0, tz in -2.0f64..2.0) {
            let tpl = make_cuboid([0.2, 0.3, 0.4]).unwrap();
            let anchors = mesh_line([0.1, 0.0, -0.3], [0.0, 0.25, 0.1], 4).unwrap();
            let shifted = PointSet { points: anchors.points.iter().map(|p| [p[0] + tx, p[1] + ty, p[2] + tz]).collect() };
            let a = points_on_instances(&tpl, &shifted);
            let b = points_on_instances(&tpl, &anchors);
            for (p, q) in a.vertices.iter().zip(&b.vertices) {
                prop_assert!((p[0] - (q[0] + tx)).abs() < 1e-12);
                prop_assert!((p[1] - (q[1] + ty)).abs() < 1e-12);
                prop_assert!((p[2] - (q[2] + tz)).abs() < 1e-12);
            }
        }
    }
}
