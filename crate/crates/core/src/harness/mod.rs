//! Synthetic scenes, recovery metrics and variant comparisons.

mod io;
mod metrics;

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{load_scene, rows_from_csv, rows_to_csv, save_scene, ReportRow, SceneIoError};
pub use metrics::{aggregate, evaluate_recovery, median_censored, wrap_degrees, Aggregate, MetricsError, MetricsReport};

use crate::eval::{evaluate_mesh, EvalError};
use crate::geometry::Mesh;
use crate::graph::{ParameterAssignment, ShapeGraph};
use crate::objective::{
    min_plus, render_depth, sample_surface, Camera, CameraError, ChamferError, Image, LossConfig, ObjectiveError, ObservedView, SceneObjective,
};
use crate::search::{random_search, run_search_with, build_tree_spec, SearchConfig, SearchError, SearchOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub views: usize,
    pub points: usize,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Lower bound on the camera ring radius in meters.
    pub min_radius: f64,
    /// Ground plane at `y = 0` added to observed depth outside the object.
    pub floor: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            views: 10,
            points: 10000,
            width: 64,
            height: 48,
            focal: 60.0,
            min_radius: 2.5,
            floor: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub graph: String,
    pub ground_truth: ParameterAssignment,
    pub views: Vec<ObservedView>,
    pub points: Vec<[f64; 3]>,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("scene needs at least one view or one point")]
    EmptyScene,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Chamfer(#[from] ChamferError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("scene was generated from graph {scene:?}, not {graph:?}")]
    GraphMismatch { scene: String, graph: String },
}

fn floor_mesh(half: f64) -> Mesh {
    Mesh {
        vertices: vec![[-half, 0.0, -half], [half, 0.0, -half], [half, 0.0, half], [-half, 0.0, half]],
        faces: vec![[0, 2, 1], [0, 3, 2]],
    }
}

/// Cameras on a horizontal ring around the object, evenly spaced in angle.
pub fn ring_cameras(mesh: &Mesh, config: &SceneConfig, phase: f64) -> Result<Vec<Camera>, CameraError> {
    let (lo, hi) = mesh.bbox().unwrap_or(([0.0; 3], [0.0; 3]));
    let half_diag = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt() / 2.0;
    let fov_half = (config.width.min(config.height) as f64 / 2.0 / config.focal).atan();
    let radius = config.min_radius.max(1.15 * half_diag / fov_half.sin());
    let target = [0.0, (lo[1] + hi[1]) / 2.0, 0.0];
    (0..config.views)
        .map(|k| {
            let a = phase + TAU * k as f64 / config.views as f64;
            let eye = [radius * a.sin(), target[1] + 0.4 * radius, radius * a.cos()];
            Camera::look_at(eye, target, config.width, config.height, config.focal)
        })
        .collect()
}

/// Depth images and surface samples of `mesh`, as a sensor would see them.
pub fn observe(mesh: &Mesh, config: &SceneConfig, phase: f64, seed: u64) -> Result<(Vec<ObservedView>, Vec<[f64; 3]>), HarnessError> {
    if config.views == 0 && config.points == 0 {
        return Err(HarnessError::EmptyScene);
    }
    let floor = floor_mesh(50.0);
    let views = ring_cameras(mesh, config, phase)?
        .into_iter()
        .map(|camera| {
            let object = render_depth(mesh, &camera);
            let mask = Image {
                width: object.width,
                height: object.height,
                data: object.data.iter().map(|&d| u8::from(d > 0.0)).collect(),
            };
            let depth = if config.floor {
                let ground = render_depth(&floor, &camera);
                Image {
                    width: object.width,
                    height: object.height,
                    data: object.data.iter().zip(&ground.data).map(|(&o, &g)| min_plus(o, g)).collect(),
                }
            } else {
                object
            };
            ObservedView { camera, depth, mask }
        })
        .collect();
    let points = if config.points > 0 {
        sample_surface(mesh, config.points, seed)?.positions(mesh)?
    } else {
        Vec::new()
    };
    Ok((views, points))
}

/// Random in-range parameters and rotation at the origin, observed by a
/// camera ring.
/// RNG stream for scene generation, kept apart from the search streams.
const SCENE_STREAM: u64 = 0x7363_656e_6500_0000;

pub fn generate_scene(graph: &ShapeGraph, config: &SceneConfig, seed: u64) -> Result<SyntheticScene, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SCENE_STREAM);
    let mut truth = graph.random_assignment(&mut rng);
    truth.pose.rotation = rng.gen_range(0.0..TAU);
    let mesh = evaluate_mesh(graph, &truth, None)?;
    let phase = rng.gen_range(0.0..TAU);
    let (views, points) = observe(&mesh, config, phase, rng.gen())?;
    Ok(SyntheticScene {
        graph: graph.name.clone(),
        ground_truth: truth,
        views,
        points,
        seed,
    })
}

impl SyntheticScene {
    pub fn objective(&self, config: &LossConfig) -> Result<SceneObjective, ObjectiveError> {
        SceneObjective::new(self.views.clone(), self.points.clone(), config.clone())
    }

    pub fn check_graph(&self, graph: &ShapeGraph) -> Result<(), HarnessError> {
        if self.graph != graph.name {
            return Err(HarnessError::GraphMismatch {
                scene: self.graph.clone(),
                graph: graph.name.clone(),
            });
        }
        Ok(())
    }
}

/// Loss of the ground truth on its own scene.
pub fn ground_truth_loss(graph: &ShapeGraph, scene: &SyntheticScene, objective: &SceneObjective) -> Result<f64, HarnessError> {
    let mesh = evaluate_mesh(graph, &scene.ground_truth, None)?;
    Ok(objective.loss(&mesh)?.total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoRefine,
    NoRefineNoExploit,
    Random,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoRefine, Variant::NoRefineNoExploit, Variant::Random];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRefine => "no_refine",
            Variant::NoRefineNoExploit => "no_refine_no_exploit",
            Variant::Random => "random",
        }
    }

    pub fn parse(text: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == text)
    }

    pub fn search_config(self, base: &SearchConfig) -> SearchConfig {
        let mut c = base.clone();
        match self {
            Variant::Full | Variant::Random => {}
            Variant::NoRefine => c.refinement_enabled = false,
            Variant::NoRefineNoExploit => {
                c.refinement_enabled = false;
                c.exploitation_enabled = false;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub search: SearchConfig,
    pub loss: LossConfig,
    /// Success threshold as a multiple of the ground-truth loss.
    pub tau_factor: f64,
    /// Evaluation budget of random search when the full variant is not run.
    pub random_budget: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            search: SearchConfig {
                iterations: 100,
                ..SearchConfig::default()
            },
            loss: LossConfig {
                max_scene_points: Some(2048),
                ..LossConfig::default()
            },
            tau_factor: 2.0,
            random_budget: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRun {
    pub scene: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub loss: f64,
    pub ground_truth_loss: f64,
    pub tau: f64,
    pub evaluations: u64,
    pub evaluations_to_tau: Option<u64>,
    pub elapsed_s: f64,
    #[serde(skip)]
    pub outcome: Option<SearchOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub runs: Vec<SceneRun>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub graph: String,
    pub config: ExperimentConfig,
    pub variants: Vec<VariantReport>,
}

/// Runs every variant on every scene. Random search receives exactly the
/// evaluation count the full variant spent on the same scene, or the
/// configured budget when the full variant is absent.
pub fn run_experiment(
    graph: &ShapeGraph,
    scenes: &[SyntheticScene],
    variants: &[Variant],
    config: &ExperimentConfig,
) -> Result<ExperimentReport, HarnessError> {
    for s in scenes {
        s.check_graph(graph)?;
    }
    let spec = build_tree_spec(graph, &config.search.tree);
    let per_scene: Vec<Vec<SceneRun>> = scenes
        .par_iter()
        .enumerate()
        .map(|(index, scene)| -> Result<Vec<SceneRun>, HarnessError> {
            let objective = scene.objective(&config.loss)?;
            let gt_loss = ground_truth_loss(graph, scene, &objective)?;
            let tau = config.tau_factor * gt_loss;
            let mut runs: Vec<(Variant, SceneRun)> = Vec::new();
            let mut order: Vec<Variant> = variants.to_vec();
            order.sort_by_key(|v| *v == Variant::Random);
            for variant in order {
                let search = SearchConfig {
                    seed: config.search.seed ^ scene.seed,
                    ..variant.search_config(&config.search)
                };
                let outcome = match variant {
                    Variant::Random => {
                        let budget = runs
                            .iter()
                            .find(|(v, _)| *v == Variant::Full)
                            .map_or(config.random_budget, |(_, r)| r.evaluations);
                        random_search(graph, &objective, budget, search.tree.translation, search.seed)?
                    }
                    _ => run_search_with(graph, &objective, &spec, &search)?,
                };
                let metrics = evaluate_recovery(graph, scene, &outcome.best)?;
                runs.push((
                    variant,
                    SceneRun {
                        scene: index,
                        seed: scene.seed,
                        metrics,
                        loss: outcome.loss.total,
                        ground_truth_loss: gt_loss,
                        tau,
                        evaluations: outcome.evaluations,
                        evaluations_to_tau: outcome.evaluations_to(tau),
                        elapsed_s: outcome.elapsed_s,
                        outcome: Some(outcome),
                    },
                ));
            }
            Ok(variants
                .iter()
                .map(|v| runs.iter().find(|(w, _)| w == v).expect("every variant ran").1.clone())
                .collect())
        })
        .collect::<Result<_, _>>()?;

    let variants = variants
        .iter()
        .enumerate()
        .map(|(k, &variant)| {
            let runs: Vec<SceneRun> = per_scene.iter().map(|r| r[k].clone()).collect();
            let aggregate = aggregate(&runs);
            VariantReport { variant, runs, aggregate }
        })
        .collect();
    Ok(ExperimentReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        graph: graph.name.clone(),
        config: config.clone(),
        variants,
    })
}
