//! On-disk scene directories and report tables.
//!
//! A scene directory holds `views/NNNN.depth.f32` (row-major little-endian
//! floats), `views/NNNN.mask.u8`, `views/NNNN.cam.json`, `points.xyz` (one
//! `x y z` line per point) and `gt_params.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentReport, SyntheticScene};
use crate::graph::ParameterAssignment;
use crate::objective::{Camera, Image, ObservedView};

#[derive(Debug, thiserror::Error)]
pub enum SceneIoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthFile {
    tool_version: String,
    graph: String,
    seed: u64,
    views: usize,
    ground_truth: ParameterAssignment,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SceneIoError + '_ {
    move |source| SceneIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), SceneIoError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn read(path: &Path) -> Result<Vec<u8>, SceneIoError> {
    fs::read(path).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, SceneIoError> {
    serde_json::from_slice(&read(path)?).map_err(|source| SceneIoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("scene types serialize");
    out.push(b'\n');
    out
}

pub fn save_scene(scene: &SyntheticScene, dir: &Path) -> Result<(), SceneIoError> {
    let views_dir = dir.join("views");
    fs::create_dir_all(&views_dir).map_err(io_err(&views_dir))?;
    for (k, view) in scene.views.iter().enumerate() {
        let depth: Vec<u8> = view.depth.data.iter().flat_map(|d| d.to_le_bytes()).collect();
        write(&views_dir.join(format!("{k:04}.depth.f32")), &depth)?;
        write(&views_dir.join(format!("{k:04}.mask.u8")), &view.mask.data)?;
        write(&views_dir.join(format!("{k:04}.cam.json")), &to_json(&view.camera))?;
    }
    let mut xyz = String::with_capacity(scene.points.len() * 40);
    for p in &scene.points {
        xyz.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    write(&dir.join("points.xyz"), xyz.as_bytes())?;
    let gt = GroundTruthFile {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        graph: scene.graph.clone(),
        seed: scene.seed,
        views: scene.views.len(),
        ground_truth: scene.ground_truth.clone(),
    };
    write(&dir.join("gt_params.json"), &to_json(&gt))
}

pub fn load_scene(dir: &Path) -> Result<SyntheticScene, SceneIoError> {
    let gt: GroundTruthFile = read_json(&dir.join("gt_params.json"))?;
    let views_dir = dir.join("views");
    let mut views = Vec::with_capacity(gt.views);
    for k in 0..gt.views {
        let cam_path = views_dir.join(format!("{k:04}.cam.json"));
        let camera: Camera = read_json(&cam_path)?;
        let n = camera.pixel_count();
        let depth_path = views_dir.join(format!("{k:04}.depth.f32"));
        let raw = read(&depth_path)?;
        if raw.len() != 4 * n {
            return Err(SceneIoError::Format {
                path: depth_path,
                message: format!("expected {} bytes, found {}", 4 * n, raw.len()),
            });
        }
        let depth = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mask_path = views_dir.join(format!("{k:04}.mask.u8"));
        let mask = read(&mask_path)?;
        if mask.len() != n {
            return Err(SceneIoError::Format {
                path: mask_path,
                message: format!("expected {n} bytes, found {}", mask.len()),
            });
        }
        let (width, height) = (camera.width, camera.height);
        views.push(ObservedView {
            camera,
            depth: Image { width, height, data: depth },
            mask: Image { width, height, data: mask },
        });
    }
    let xyz_path = dir.join("points.xyz");
    let text = String::from_utf8(read(&xyz_path)?).map_err(|_| SceneIoError::Format {
        path: xyz_path.clone(),
        message: "not UTF-8".into(),
    })?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| SceneIoError::Format {
                path: xyz_path.clone(),
                message: format!("line {}: bad coordinate", i + 1),
            })?;
        if c.len() != 3 {
            return Err(SceneIoError::Format {
                path: xyz_path.clone(),
                message: format!("line {}: expected 3 coordinates", i + 1),
            });
        }
        points.push([c[0], c[1], c[2]]);
    }
    Ok(SyntheticScene {
        graph: gt.graph,
        ground_truth: gt.ground_truth,
        views,
        points,
        seed: gt.seed,
    })
}

/// One cell of a long-format report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub scene: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

impl ExperimentReport {
    /// Per-scene metrics in long format; unreached thresholds are omitted.
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        for v in &self.variants {
            for run in &v.runs {
                let mut push = |metric: String, value: f64| {
                    rows.push(ReportRow {
                        variant: v.variant.name().to_string(),
                        scene: run.scene,
                        seed: run.seed,
                        metric,
                        value,
                    })
                };
                for (name, e) in &run.metrics.continuous {
                    push(format!("mae:{name}"), *e);
                }
                for (name, ok) in &run.metrics.discrete {
                    push(format!("correct:{name}"), f64::from(u8::from(*ok)));
                }
                push("rotation_deg".into(), run.metrics.rotation_deg);
                push("translation_cm".into(), run.metrics.translation_cm);
                push("chamfer_m2".into(), run.metrics.chamfer_m2);
                push("vertices".into(), run.metrics.vertices as f64);
                push("loss".into(), run.loss);
                push("ground_truth_loss".into(), run.ground_truth_loss);
                push("evaluations".into(), run.evaluations as f64);
                if let Some(n) = run.evaluations_to_tau {
                    push("evaluations_to_tau".into(), n as f64);
                }
                push("elapsed_s".into(), run.elapsed_s);
            }
        }
        rows
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String, SceneIoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| SceneIoError::Format {
        path: PathBuf::from("<csv>"),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>, SceneIoError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(Into::into)
}
