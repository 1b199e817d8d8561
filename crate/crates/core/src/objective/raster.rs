//! Depth rendering, depth merging and depth-derived normals.

use serde::{Deserialize, Serialize};

use super::camera::Camera;
use crate::geometry::{cross, norm, sub, Mesh};

/// Near clipping distance in meters.
pub const NEAR: f64 = 1e-2;

/// Row-major image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image<T> {
    pub width: u32,
    pub height: u32,
    pub data: Vec<T>,
}

/// Depth in meters along the camera z axis; 0 marks a missing value.
pub type DepthMap = Image<f32>;
/// Object segmentation, 1 inside.
pub type Mask = Image<u8>;

impl<T: Copy> Image<T> {
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Image {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn at(&self, i: u32, j: u32) -> T {
        self.data[j as usize * self.width as usize + i as usize]
    }

    pub fn same_shape<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Per-pixel unit normals; `None` where a finite difference is unavailable.
pub type NormalMap = Image<Option<[f64; 3]>>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("image shapes differ: {a:?} vs {b:?}")]
pub struct ShapeMismatch {
    pub a: (u32, u32),
    pub b: (u32, u32),
}

/// Clips a camera-space polygon against `z >= NEAR`.
fn clip_near(poly: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        let (ina, inb) = (a[2] >= NEAR, b[2] >= NEAR);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (NEAR - a[2]) / (b[2] - a[2]);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), NEAR]);
        }
    }
    out
}

/// Z-buffer rasterization; pixels without coverage stay 0. Depth is
/// interpolated perspective-correctly (linear in `1/z` over the screen).
pub fn render_depth(mesh: &Mesh, camera: &Camera) -> DepthMap {
    let (w, h) = (camera.width, camera.height);
    let mut zbuf = vec![f64::INFINITY; w as usize * h as usize];
    let cam_vertices: Vec<[f64; 3]> = mesh.vertices.iter().map(|&v| camera.world_to_camera(v)).collect();
    for face in &mesh.faces {
        let tri = face.map(|i| cam_vertices[i as usize]);
        if tri.iter().all(|p| p[2] >= NEAR) {
            raster_triangle(&tri, camera, &mut zbuf);
        } else if tri.iter().any(|p| p[2] >= NEAR) {
            let poly = clip_near(&tri);
            for k in 1..poly.len().saturating_sub(1) {
                raster_triangle(&[poly[0], poly[k], poly[k + 1]], camera, &mut zbuf);
            }
        }
    }
    Image {
        width: w,
        height: h,
        data: zbuf
            .into_iter()
            .map(|z| if z.is_finite() { z as f32 } else { 0.0 })
            .collect(),
    }
}

fn raster_triangle(tri: &[[f64; 3]; 3], camera: &Camera, zbuf: &mut [f64]) {
    let s = tri.map(|p| camera.project(p));
    let inv_z = tri.map(|p| 1.0 / p[2]);
    let area = (s[1][0] - s[0][0]) * (s[2][1] - s[0][1]) - (s[1][1] - s[0][1]) * (s[2][0] - s[0][0]);
    if !area.is_finite() || area.abs() < 1e-12 {
        return;
    }
    let (w, h) = (camera.width as i64, camera.height as i64);
    let min_x = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let max_x = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let min_y = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_y = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let i0 = ((min_x - 0.5).ceil() as i64).max(0);
    let i1 = ((max_x - 0.5).floor() as i64).min(w - 1);
    let j0 = ((min_y - 0.5).ceil() as i64).max(0);
    let j1 = ((max_y - 0.5).floor() as i64).min(h - 1);
    if i0 > i1 || j0 > j1 {
        return;
    }
    let edge = |a: [f64; 2], b: [f64; 2], px: f64, py: f64| (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
    for j in j0..=j1 {
        let py = j as f64 + 0.5;
        for i in i0..=i1 {
            let px = i as f64 + 0.5;
            let b0 = edge(s[1], s[2], px, py) / area;
            let b1 = edge(s[2], s[0], px, py) / area;
            let b2 = edge(s[0], s[1], px, py) / area;
            if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                continue;
            }
            let z = 1.0 / (b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2]);
            let slot = &mut zbuf[j as usize * w as usize + i as usize];
            if z < *slot {
                *slot = z;
            }
        }
    }
}

/// Smaller of two depths, treating 0 (missing) as infinitely far.
pub fn min_plus(a: f32, b: f32) -> f32 {
    match (a > 0.0, b > 0.0) {
        (true, true) => a.min(b),
        (true, false) => a,
        (false, true) => b,
        (false, false) => 0.0,
    }
}

/// Rendered depth inside the mask, `min_plus(rendered, observed)` outside.
pub fn merge_depth(rendered: &DepthMap, observed: &DepthMap, mask: &Mask) -> Result<DepthMap, ShapeMismatch> {
    for other in [(observed.width, observed.height), (mask.width, mask.height)] {
        if other != (rendered.width, rendered.height) {
            return Err(ShapeMismatch {
                a: (rendered.width, rendered.height),
                b: other,
            });
        }
    }
    Ok(Image {
        width: rendered.width,
        height: rendered.height,
        data: rendered
            .data
            .iter()
            .zip(&observed.data)
            .zip(&mask.data)
            .map(|((&r, &o), &m)| if m != 0 { r } else { min_plus(r, o) })
            .collect(),
    })
}

/// Unit normals `normalize(t_y x t_x)` from forward-difference tangents of the
/// back-projected depth; a surface facing the camera gets `n_z < 0`.
pub fn normals_from_depth(depth: &DepthMap, camera: &Camera) -> NormalMap {
    let (w, h) = (depth.width, depth.height);
    let mut out = Image::filled(w, h, None);
    for j in 0..h.saturating_sub(1) {
        for i in 0..w.saturating_sub(1) {
            let (d, dx, dy) = (depth.at(i, j), depth.at(i + 1, j), depth.at(i, j + 1));
            if d <= 0.0 || dx <= 0.0 || dy <= 0.0 {
                continue;
            }
            let p = camera.back_project(i, j, d as f64);
            let tx = sub(camera.back_project(i + 1, j, dx as f64), p);
            let ty = sub(camera.back_project(i, j + 1, dy as f64), p);
            let n = cross(ty, tx);
            let l = norm(n);
            if l > 0.0 && l.is_finite() {
                out.data[(j * w + i) as usize] = Some(n.map(|c| c / l));
            }
        }
    }
    out
}
