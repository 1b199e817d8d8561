//! Symmetric squared Chamfer distance between a point set and a mesh surface.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{cross, norm, sub, Mesh};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChamferError {
    #[error("point set is empty")]
    EmptyPoints,
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("mesh surface has zero area")]
    ZeroArea,
    #[error("sample references face {face}, mesh has {faces}")]
    SampleMismatch { face: u32, faces: usize },
    #[error("a sample count of zero was requested")]
    NoSamples,
    #[error("correspondence does not match the samples or points")]
    PairingMismatch,
}

/// Surface samples frozen as face indices plus barycentric weights, so the
/// same samples can be re-placed on a deformed copy of the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub faces: Vec<u32>,
    pub barycentric: Vec<[f64; 3]>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn positions(&self, mesh: &Mesh) -> Result<Vec<[f64; 3]>, ChamferError> {
        self.faces
            .iter()
            .zip(&self.barycentric)
            .map(|(&f, b)| {
                let face = mesh.faces.get(f as usize).ok_or(ChamferError::SampleMismatch {
                    face: f,
                    faces: mesh.faces.len(),
                })?;
                let [a, c, d] = face.map(|i| mesh.vertices[i as usize]);
                Ok([
                    b[0] * a[0] + b[1] * c[0] + b[2] * d[0],
                    b[0] * a[1] + b[1] * c[1] + b[2] * d[1],
                    b[0] * a[2] + b[1] * c[2] + b[2] * d[2],
                ])
            })
            .collect()
    }
}

/// Area-weighted uniform surface samples.
pub fn sample_surface(mesh: &Mesh, count: usize, seed: u64) -> Result<SurfaceSamples, ChamferError> {
    if mesh.faces.is_empty() {
        return Err(ChamferError::EmptyMesh);
    }
    if count == 0 {
        return Err(ChamferError::NoSamples);
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
        total += 0.5 * norm(cross(sub(b, a), sub(c, a)));
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(ChamferError::ZeroArea);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut faces = Vec::with_capacity(count);
    let mut barycentric = Vec::with_capacity(count);
    for _ in 0..count {
        let u = rng.gen::<f64>() * total;
        let face = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        faces.push(face as u32);
        barycentric.push([1.0 - s, s * (1.0 - r2), s * r2]);
    }
    Ok(SurfaceSamples { faces, barycentric })
}

/// Static point set with a nearest-neighbour index.
pub struct PointIndex {
    points: Vec<[f64; 3]>,
    tree: ImmutableKdTree<f64, 3>,
}

impl std::fmt::Debug for PointIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PointIndex").field("points", &self.points.len()).finish()
    }
}

impl PointIndex {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self, ChamferError> {
        if points.is_empty() {
            return Err(ChamferError::EmptyPoints);
        }
        let tree = ImmutableKdTree::new_from_slice(&points).expect("finite points build a tree");
        Ok(PointIndex { points, tree })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// `(squared distance, index)` of the nearest stored point.
    pub fn nearest(&self, q: &[f64; 3]) -> (f64, usize) {
        let r = self.tree.query(q).nearest_one::<SquaredEuclidean<f64>>().execute();
        (r.distance, r.item as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChamferResult {
    /// Mean squared distance from each scene point to its nearest sample.
    pub points_to_mesh: f64,
    /// Mean squared distance from each sample to its nearest scene point.
    pub mesh_to_points: f64,
    pub value: f64,
    /// d value / d vertex, through the frozen barycentric placement.
    pub vertex_grad: Vec<[f64; 3]>,
    pub pairs: Correspondence,
}

/// Nearest-neighbour pairing behind one Chamfer evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondence {
    /// Nearest scene point of each sample.
    pub sample_to_point: Vec<u32>,
    /// Nearest sample of each scene point.
    pub point_to_sample: Vec<u32>,
}

/// Chamfer with fresh samples drawn from `seed`.
pub fn chamfer(points: &PointIndex, mesh: &Mesh, sample_count: usize, seed: u64) -> Result<ChamferResult, ChamferError> {
    let samples = sample_surface(mesh, sample_count, seed)?;
    chamfer_frozen(points, mesh, &samples)
}

/// Chamfer for fixed samples. Gradients are exact for the piecewise-smooth
/// function where nearest neighbours stay fixed.
pub fn chamfer_frozen(points: &PointIndex, mesh: &Mesh, samples: &SurfaceSamples) -> Result<ChamferResult, ChamferError> {
    if samples.is_empty() {
        return Err(ChamferError::NoSamples);
    }
    let pos = samples.positions(mesh)?;
    let sample_tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&pos).expect("finite samples build a tree");
    let n_s = pos.len() as f64;
    let n_p = points.points.len() as f64;
    let mut sample_grad = vec![[0.0; 3]; pos.len()];
    let mut pairs = Correspondence {
        sample_to_point: Vec::with_capacity(pos.len()),
        point_to_sample: Vec::with_capacity(points.points.len()),
    };

    let mut mesh_to_points = 0.0;
    for (k, s) in pos.iter().enumerate() {
        let (d, j) = points.nearest(s);
        pairs.sample_to_point.push(j as u32);
        mesh_to_points += d;
        let p = points.points[j];
        for a in 0..3 {
            sample_grad[k][a] += 2.0 * (s[a] - p[a]) / n_s;
        }
    }
    mesh_to_points /= n_s;

    let mut points_to_mesh = 0.0;
    for p in &points.points {
        let r = sample_tree.query(p).nearest_one::<SquaredEuclidean<f64>>().execute();
        points_to_mesh += r.distance;
        let k = r.item as usize;
        pairs.point_to_sample.push(r.item);
        let s = pos[k];
        for a in 0..3 {
            sample_grad[k][a] += 2.0 * (s[a] - p[a]) / n_p;
        }
    }
    points_to_mesh /= n_p;

    let mut vertex_grad = vec![[0.0; 3]; mesh.vertices.len()];
    for ((&f, b), g) in samples.faces.iter().zip(&samples.barycentric).zip(&sample_grad) {
        for (corner, &vi) in mesh.faces[f as usize].iter().enumerate() {
            for a in 0..3 {
                vertex_grad[vi as usize][a] += b[corner] * g[a];
            }
        }
    }
    Ok(ChamferResult {
        points_to_mesh,
        mesh_to_points,
        value: points_to_mesh + mesh_to_points,
        vertex_grad,
        pairs,
    })
}

/// Chamfer value with both the samples and the nearest-neighbour pairing
/// held fixed. Agrees with [`chamfer_frozen`] wherever the pairing is the one
/// it would find, and is smooth in the vertices everywhere.
pub fn chamfer_paired(points: &PointIndex, mesh: &Mesh, samples: &SurfaceSamples, pairs: &Correspondence) -> Result<f64, ChamferError> {
    let pos = samples.positions(mesh)?;
    if pairs.sample_to_point.len() != pos.len() || pairs.point_to_sample.len() != points.points.len() {
        return Err(ChamferError::PairingMismatch);
    }
    let d2 = |a: [f64; 3], b: [f64; 3]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
    let mesh_to_points = pos
        .iter()
        .zip(&pairs.sample_to_point)
        .map(|(&s, &j)| d2(s, points.points[j as usize]))
        .sum::<f64>()
        / pos.len() as f64;
    let points_to_mesh = points
        .points
        .iter()
        .zip(&pairs.point_to_sample)
        .map(|(&p, &k)| d2(p, pos[k as usize]))
        .sum::<f64>()
        / points.points.len() as f64;
    Ok(points_to_mesh + mesh_to_points)
}

/// Symmetric Chamfer between two meshes, each sampled with its own seed.
pub fn mesh_chamfer(a: &Mesh, b: &Mesh, sample_count: usize, seed: u64) -> Result<f64, ChamferError> {
    let sa = sample_surface(a, sample_count, seed)?.positions(a)?;
    let index = PointIndex::new(sa)?;
    Ok(chamfer(&index, b, sample_count, seed.wrapping_add(1))?.value)
}
