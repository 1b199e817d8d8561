//! Scene-fitting objective: depth and normal render-and-compare against
//! observed views, plus a Chamfer term against an observed point set.

pub mod camera;
pub mod chamfer;
pub mod raster;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use camera::{Camera, CameraError, Intrinsics};
pub use chamfer::{chamfer, chamfer_frozen, chamfer_paired, Correspondence, mesh_chamfer, sample_surface, ChamferError, ChamferResult, PointIndex, SurfaceSamples};
pub use raster::{merge_depth, min_plus, normals_from_depth, render_depth, DepthMap, Image, Mask, NormalMap, ShapeMismatch};

use crate::eval::{backward, EvalError, EvalResult, Gradients};
use crate::geometry::Mesh;

/// One observed depth image with its object mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedView {
    pub camera: Camera,
    pub depth: DepthMap,
    pub mask: Mask,
}

impl ObservedView {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        self.camera.validate()?;
        let size = (self.camera.width, self.camera.height);
        for shape in [(self.depth.width, self.depth.height), (self.mask.width, self.mask.height)] {
            if shape != size {
                return Err(ShapeMismatch { a: size, b: shape }.into());
            }
        }
        if self.depth.data.len() != self.camera.pixel_count() || self.mask.data.len() != self.camera.pixel_count() {
            return Err(ObjectiveError::BadView("pixel buffer length does not match image size".into()));
        }
        if let Some(d) = self.depth.data.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(ObjectiveError::BadView(format!("depth value {d} is not a finite nonnegative number")));
        }
        if self.mask.data.iter().any(|&m| m > 1) {
            return Err(ObjectiveError::BadView("mask values must be 0 or 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_cd: f64,
    pub use_depth: bool,
    pub use_normals: bool,
    pub use_chamfer: bool,
    pub chamfer_samples: usize,
    pub sample_seed: u64,
    /// Random subset of the scene points used by the Chamfer term.
    pub max_scene_points: Option<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_cd: 10.0,
            use_depth: true,
            use_normals: true,
            use_chamfer: true,
            chamfer_samples: 2048,
            sample_seed: 0,
            max_scene_points: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub depth_term: f64,
    pub normal_term: f64,
    pub chamfer_term: f64,
    pub lambda_cd: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(depth_term: f64, normal_term: f64, chamfer_term: f64, lambda_cd: f64) -> Self {
        LossBreakdown {
            depth_term,
            normal_term,
            chamfer_term,
            lambda_cd,
            total: depth_term + normal_term + lambda_cd * chamfer_term,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Shape(#[from] ShapeMismatch),
    #[error("invalid view: {0}")]
    BadView(String),
    #[error("no view has a valid pixel and no scene points are available")]
    NoSignal,
    #[error("chamfer term: {0}")]
    Chamfer(#[from] ChamferError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Per-scene state reused across loss evaluations.
#[derive(Debug)]
pub struct SceneObjective {
    views: Vec<ObservedView>,
    observed_normals: Vec<NormalMap>,
    points: Option<PointIndex>,
    config: LossConfig,
}

impl SceneObjective {
    pub fn new(views: Vec<ObservedView>, points: Vec<[f64; 3]>, config: LossConfig) -> Result<Self, ObjectiveError> {
        for v in &views {
            v.validate()?;
        }
        let has_pixels = views.iter().any(|v| v.depth.data.iter().any(|&d| d > 0.0));
        let pixel_signal = has_pixels && (config.use_depth || config.use_normals);
        let point_signal = !points.is_empty() && config.use_chamfer;
        if !pixel_signal && !point_signal {
            return Err(ObjectiveError::NoSignal);
        }
        let points = if config.use_chamfer && !points.is_empty() {
            Some(PointIndex::new(subsample(points, config.max_scene_points, config.sample_seed))?)
        } else {
            None
        };
        let observed_normals = views.iter().map(|v| normals_from_depth(&v.depth, &v.camera)).collect();
        Ok(SceneObjective {
            views,
            observed_normals,
            points,
            config,
        })
    }

    pub fn views(&self) -> &[ObservedView] {
        &self.views
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    pub fn points(&self) -> Option<&PointIndex> {
        self.points.as_ref()
    }

    pub fn loss(&self, mesh: &Mesh) -> Result<LossBreakdown, ObjectiveError> {
        let (depth_term, normal_term) = self.image_terms(mesh)?;
        let chamfer_term = match &self.points {
            Some(points) => chamfer(points, mesh, self.config.chamfer_samples, self.config.sample_seed)?.value,
            None => 0.0,
        };
        Ok(LossBreakdown::compose(depth_term, normal_term, chamfer_term, self.config.lambda_cd))
    }

    /// Full loss of a taped evaluation together with the gradient of its
    /// weighted Chamfer term. The gradient is `None` when the term is off.
    pub fn loss_with_gradients(&self, result: &EvalResult) -> Result<(LossBreakdown, Option<Gradients>), ObjectiveError> {
        self.loss_with_gradients_sampled(result, self.config.chamfer_samples)
    }

    /// As [`SceneObjective::loss_with_gradients`], with the Chamfer term
    /// estimated from `samples` surface points instead of the configured count.
    pub fn loss_with_gradients_sampled(
        &self,
        result: &EvalResult,
        samples: usize,
    ) -> Result<(LossBreakdown, Option<Gradients>), ObjectiveError> {
        let (depth_term, normal_term) = self.image_terms(&result.mesh)?;
        let cfg = &self.config;
        let (chamfer_term, grads) = match &self.points {
            Some(points) => {
                let samples = sample_surface(&result.mesh, samples, cfg.sample_seed)?;
                let mut cd = chamfer_frozen(points, &result.mesh, &samples)?;
                for g in cd.vertex_grad.iter_mut().flatten() {
                    *g *= cfg.lambda_cd;
                }
                (cd.value, Some(backward(result, &cd.vertex_grad)?))
            }
            None => (0.0, None),
        };
        Ok((LossBreakdown::compose(depth_term, normal_term, chamfer_term, cfg.lambda_cd), grads))
    }

    /// Depth and normal terms summed over views.
    pub fn image_terms(&self, mesh: &Mesh) -> Result<(f64, f64), ObjectiveError> {
        if !(self.config.use_depth || self.config.use_normals) {
            return Ok((0.0, 0.0));
        }
        let per_view: Vec<(f64, f64)> = self
            .views
            .par_iter()
            .zip(&self.observed_normals)
            .map(|(view, obs_normals)| self.view_terms(mesh, view, obs_normals))
            .collect::<Result<_, _>>()?;
        Ok(per_view.iter().fold((0.0, 0.0), |acc, t| (acc.0 + t.0, acc.1 + t.1)))
    }

    fn view_terms(&self, mesh: &Mesh, view: &ObservedView, obs_normals: &NormalMap) -> Result<(f64, f64), ObjectiveError> {
        let rendered = render_depth(mesh, &view.camera);
        let merged = merge_depth(&rendered, &view.depth, &view.mask)?;
        let depth_term = if self.config.use_depth {
            let (sum, n) = view
                .depth
                .data
                .iter()
                .zip(&merged.data)
                .filter(|(o, _)| **o > 0.0)
                .fold((0.0, 0usize), |(s, n), (&o, &m)| (s + (o as f64 - m as f64).abs(), n + 1));
            if n > 0 {
                sum / n as f64
            } else {
                0.0
            }
        } else {
            0.0
        };
        let normal_term = if self.config.use_normals {
            let merged_normals = normals_from_depth(&merged, &view.camera);
            let (sum, n) = obs_normals
                .data
                .iter()
                .zip(&merged_normals.data)
                .filter_map(|(a, b)| Some((a.as_ref()?, b.as_ref()?)))
                .fold((0.0, 0usize), |(s, n), (a, b)| {
                    (s + (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs(), n + 3)
                });
            if n > 0 {
                sum / n as f64
            } else {
                0.0
            }
        } else {
            0.0
        };
        Ok((depth_term, normal_term))
    }

    /// Surface samples drawn with the configured count and seed.
    pub fn surface_samples(&self, mesh: &Mesh) -> Result<SurfaceSamples, ObjectiveError> {
        Ok(sample_surface(mesh, self.config.chamfer_samples, self.config.sample_seed)?)
    }

    /// Chamfer term for fixed samples, with its parameter and pose gradients.
    pub fn chamfer_gradients(&self, result: &EvalResult, samples: &SurfaceSamples) -> Result<(ChamferResult, Gradients), ObjectiveError> {
        let points = self.points.as_ref().ok_or(ChamferError::EmptyPoints)?;
        let cd = chamfer_frozen(points, &result.mesh, samples)?;
        let grads = backward(result, &cd.vertex_grad)?;
        Ok((cd, grads))
    }
}

fn subsample(points: Vec<[f64; 3]>, max: Option<usize>, seed: u64) -> Vec<[f64; 3]> {
    match max {
        Some(n) if n > 0 && points.len() > n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ca1_ab1e);
            let mut idx = rand::seq::index::sample(&mut rng, points.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| points[i]).collect()
        }
        _ => points,
    }
}

/// One-shot loss of an evaluated shape against a scene.
pub fn loss(result: &EvalResult, views: &[ObservedView], points: &[[f64; 3]], config: &LossConfig) -> Result<LossBreakdown, ObjectiveError> {
    SceneObjective::new(views.to_vec(), points.to_vec(), config.clone())?.loss(&result.mesh)
}

#[cfg(test)]
mod tests;
