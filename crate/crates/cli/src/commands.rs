use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;

use geonode::bundled;
use geonode::eval::{evaluate_mesh, NodeCache, CACHE_DIR_ENV};
use geonode::gradcheck::{gradient_check, GradCheckConfig};
use geonode::graph::{ParamKind, ParamRange, ParameterAssignment, ShapeGraph, Unit};
use geonode::harness::{
    evaluate_recovery, generate_scene, load_scene, rows_to_csv, run_experiment, save_scene, ExperimentConfig, ExperimentReport,
    SceneConfig, Variant,
};
use geonode::obj::to_obj;
use geonode::objective::LossConfig;
use geonode::search::{run_search, SearchConfig, TraceEntry};

use crate::{BenchArgs, EvalArgs, FitArgs, GradcheckArgs, SynthArgs};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Threshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Threshold(_) => 3,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// A file path, or a bare bundled-graph name such as `cabinet`.
fn load_graph(arg: &str) -> Result<ShapeGraph, CliError> {
    let path = Path::new(arg);
    if !path.exists() {
        if !arg.contains(['/', '\\', '.']) {
            if let Some(g) = bundled::by_name(arg) {
                return Ok(g);
            }
        }
        return Err(CliError::Invalid(format!("{arg}: file not found")));
    }
    let bytes = fs::read(path).map_err(|e| invalid(format!("{arg}: {e}")))?;
    ShapeGraph::from_bytes(&bytes).map_err(|e| invalid(format!("{arg}: {e}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn set_jobs(jobs: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(invalid("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(runtime)?;
    }
    Ok(())
}

fn kind_name(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Float => "float",
        ParamKind::Int => "int",
        ParamKind::Bool => "bool",
    }
}

fn unit_name(unit: Unit) -> &'static str {
    match unit {
        Unit::Meter => "m",
        Unit::Radian => "rad",
        Unit::Count => "count",
        Unit::Flag => "flag",
    }
}

pub fn compile(arg: &str) -> Result<(), CliError> {
    let graph = load_graph(arg)?;
    println!(
        "graph {} (version {}): {} nodes, {} parameters",
        graph.name,
        graph.version,
        graph.nodes.len(),
        graph.parameters.len()
    );
    let order: Vec<String> = graph
        .topo_order()
        .iter()
        .map(|id| format!("{id}:{}", graph.node(*id).map_or("?", |n| n.kind.wire_name())))
        .collect();
    println!("order: {}", order.join(" "));
    let width = graph.parameters.iter().map(|p| p.name.len()).max().unwrap_or(4).max(4);
    println!("{:<width$}  {:<5}  {:<5}  {:>8}  {:>8}  {:>8}", "name", "kind", "unit", "default", "min", "max");
    for p in &graph.parameters {
        let (lo, hi) = match p.range {
            ParamRange::Float { min, max } => (min.to_string(), max.to_string()),
            ParamRange::Int { min, max } => (min.to_string(), max.to_string()),
            ParamRange::Bool => ("false".into(), "true".into()),
        };
        println!(
            "{:<width$}  {:<5}  {:<5}  {:>8}  {:>8}  {:>8}",
            p.name,
            kind_name(p.kind()),
            unit_name(p.unit),
            p.default.to_string(),
            lo,
            hi
        );
    }
    Ok(())
}

fn parse_sets(graph: &ShapeGraph, sets: &[String]) -> Result<ParameterAssignment, CliError> {
    let mut params = graph.default_assignment();
    for s in sets {
        let (name, value) = s
            .split_once('=')
            .ok_or_else(|| invalid(format!("--set expects NAME=VALUE, got {s:?}")))?;
        let name = name.trim();
        let v = graph.parse_value(name, value).map_err(invalid)?;
        params.set(name, v);
    }
    params.validate(graph).map_err(invalid)?;
    Ok(params)
}

fn median(mut d: Vec<Duration>) -> Duration {
    d.sort();
    d[d.len() / 2]
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let graph = load_graph(&args.graph)?;
    let params = parse_sets(&graph, &args.set)?;
    let cache = NodeCache::from_env(&graph);
    let mesh = evaluate_mesh(&graph, &params, Some(&cache)).map_err(runtime)?;
    let (lo, hi) = mesh.bbox().unwrap_or(([0.0; 3], [0.0; 3]));
    println!(
        "{}: {} vertices, {} faces, extent {:.6} x {:.6} x {:.6} m",
        graph.name,
        mesh.vertices.len(),
        mesh.faces.len(),
        hi[0] - lo[0],
        hi[1] - lo[1],
        hi[2] - lo[2]
    );
    if args.time {
        let runs = args.runs.max(1);
        let mut cold = Vec::with_capacity(runs);
        let mut warm = Vec::with_capacity(runs);
        let warmed = NodeCache::new();
        evaluate_mesh(&graph, &params, Some(&warmed)).map_err(runtime)?;
        for _ in 0..runs {
            let fresh = NodeCache::new();
            let t = Instant::now();
            evaluate_mesh(&graph, &params, Some(&fresh)).map_err(runtime)?;
            cold.push(t.elapsed());
            let t = Instant::now();
            evaluate_mesh(&graph, &params, Some(&warmed)).map_err(runtime)?;
            warm.push(t.elapsed());
        }
        let (c, w) = (median(cold), median(warm));
        println!(
            "forward time (median of {runs}): cold {:.3} ms, warm {:.3} ms, ratio {:.2}",
            c.as_secs_f64() * 1e3,
            w.as_secs_f64() * 1e3,
            c.as_secs_f64() / w.as_secs_f64().max(1e-12)
        );
    }
    if let Some(path) = &args.obj {
        let header = format!(
            "# geonode {VERSION}\n# graph {}\n# parameters {}\n",
            graph.name,
            serde_json::to_string(&params).map_err(runtime)?
        );
        write_file(path, (header + &to_obj(&mesh, &graph.name)).as_bytes())?;
        println!("wrote {}", path.display());
    }
    if let Some(dir) = std::env::var_os(CACHE_DIR_ENV) {
        let path = cache.save(Path::new(&dir), &graph).map_err(runtime)?;
        log::info!("node cache saved to {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct FitConfig<'a> {
    search: &'a SearchConfig,
    loss: &'a LossConfig,
}

#[derive(Serialize)]
struct FitResult<'a> {
    tool_version: &'static str,
    graph: &'a str,
    scene: String,
    seed: u64,
    config: FitConfig<'a>,
    assignment: &'a ParameterAssignment,
    loss: geonode::objective::LossBreakdown,
    evaluations: u64,
    failures: u64,
    elapsed_s: f64,
    metrics: Option<geonode::harness::MetricsReport>,
}

/// CSV text preceded by one `#` line naming the tool, graph, seed and config.
fn csv_with_header<T: Serialize>(header: &str, rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(runtime)?;
    }
    let body = w.into_inner().map_err(runtime)?;
    Ok(format!("# {header}\n{}", String::from_utf8_lossy(&body)))
}

pub fn fit(args: FitArgs) -> Result<(), CliError> {
    set_jobs(args.jobs)?;
    let graph = load_graph(&args.graph)?;
    let scene = load_scene(&args.scene).map_err(invalid)?;
    scene.check_graph(&graph).map_err(invalid)?;
    let loss = LossConfig {
        max_scene_points: (args.max_points > 0).then_some(args.max_points),
        ..LossConfig::default()
    };
    let search = SearchConfig {
        lambda_explore: args.lambda,
        iterations: args.iters,
        simulations: args.sims,
        exploitation_enabled: !args.no_exploit,
        refinement_enabled: !args.no_refine,
        seed: args.seed,
        ..SearchConfig::default()
    };
    search.validate().map_err(invalid)?;
    let objective = scene.objective(&loss).map_err(invalid)?;
    let outcome = run_search(&graph, &objective, &search).map_err(runtime)?;
    let metrics = evaluate_recovery(&graph, &scene, &outcome.best).ok();
    println!(
        "best loss {:.6} (depth {:.6}, normal {:.6}, chamfer {:.3e}) after {} evaluations in {:.1} s",
        outcome.loss.total,
        outcome.loss.depth_term,
        outcome.loss.normal_term,
        outcome.loss.chamfer_term,
        outcome.evaluations,
        outcome.elapsed_s
    );
    for (name, value) in &outcome.best.values {
        println!("  {name} = {value}");
    }
    println!("  rotation = {:.3} deg", outcome.best.pose.rotation.to_degrees());
    let config = FitConfig {
        search: &search,
        loss: &loss,
    };
    if let Some(path) = &args.out {
        let result = FitResult {
            tool_version: VERSION,
            graph: &graph.name,
            scene: args.scene.display().to_string(),
            seed: args.seed,
            config,
            assignment: &outcome.best,
            loss: outcome.loss,
            evaluations: outcome.evaluations,
            failures: outcome.failures,
            elapsed_s: outcome.elapsed_s,
            metrics,
        };
        write_json(path, &result)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.trace {
        let header = format!(
            "geonode {VERSION} graph={} seed={} config={}",
            graph.name,
            args.seed,
            serde_json::to_string(&FitConfig {
                search: &search,
                loss: &loss,
            })
            .map_err(runtime)?
        );
        let text = csv_with_header::<TraceEntry>(&header, &outcome.trace)?;
        write_file(path, text.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct SceneEntry {
    dir: String,
    seed: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'static str,
    graph: &'a str,
    seed: u64,
    config: &'a SceneConfig,
    scenes: Vec<SceneEntry>,
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let graph = load_graph(&args.graph)?;
    if args.scenes == 0 {
        return Err(invalid("--scenes must be at least 1"));
    }
    let config = SceneConfig {
        views: args.views,
        points: args.points,
        ..SceneConfig::default()
    };
    let mut entries = Vec::with_capacity(args.scenes);
    for k in 0..args.scenes {
        let seed = args.seed.wrapping_add(k as u64);
        let scene = generate_scene(&graph, &config, seed).map_err(runtime)?;
        let dir = format!("scene_{k:04}");
        save_scene(&scene, &args.out.join(&dir)).map_err(runtime)?;
        entries.push(SceneEntry { dir, seed });
    }
    let manifest = Manifest {
        tool_version: VERSION,
        graph: &graph.name,
        seed: args.seed,
        config: &config,
        scenes: entries,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    println!("wrote {} scenes to {}", args.scenes, args.out.display());
    Ok(())
}

fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    let listing = fs::read_dir(root).map_err(|e| invalid(format!("{}: {e}", root.display())))?;
    let mut dirs: Vec<PathBuf> = listing
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join("gt_params.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(invalid(format!("{}: no scene directories found", root.display())));
    }
    Ok(dirs)
}

fn parse_variants(text: &str) -> Result<Vec<Variant>, CliError> {
    let mut out = Vec::new();
    for name in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v = Variant::parse(name).ok_or_else(|| invalid(format!("unknown variant {name:?}")))?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(invalid("--variants is empty"));
    }
    Ok(out)
}

/// Full-versus-ablation comparisons available for the variants that ran.
fn trend_checks(report: &ExperimentReport) -> Vec<(String, bool)> {
    let find = |v: Variant| report.variants.iter().find(|r| r.variant == v).map(|r| &r.aggregate);
    let mut checks = Vec::new();
    if let (Some(full), Some(base)) = (find(Variant::Full), find(Variant::NoRefine)) {
        for (name, mae) in &full.continuous_mae {
            if let Some(other) = base.continuous_mae.get(name) {
                checks.push((format!("MAE({name}) full {mae:.3} < no_refine {other:.3}"), mae < other));
            }
        }
        checks.push((
            format!("rotation MAE full {:.2} < no_refine {:.2}", full.rotation_mae_deg, base.rotation_mae_deg),
            full.rotation_mae_deg < base.rotation_mae_deg,
        ));
    }
    if let (Some(base), Some(blind)) = (find(Variant::NoRefine), find(Variant::NoRefineNoExploit)) {
        for (name, acc) in &base.discrete_accuracy {
            if let Some(other) = blind.discrete_accuracy.get(name) {
                checks.push((format!("accuracy({name}) no_refine {acc:.1}% >= no_exploit {other:.1}%"), acc >= other));
            }
        }
    }
    if let (Some(full), Some(random)) = (find(Variant::Full), find(Variant::Random)) {
        let key = |m: Option<f64>| m.unwrap_or(f64::INFINITY);
        checks.push((
            format!(
                "median evaluations to threshold full {:?} < random {:?}",
                full.median_evaluations_to_tau, random.median_evaluations_to_tau
            ),
            key(full.median_evaluations_to_tau) < key(random.median_evaluations_to_tau),
        ));
    }
    checks
}

pub fn bench(args: BenchArgs) -> Result<(), CliError> {
    set_jobs(args.jobs)?;
    let graph = load_graph(&args.graph)?;
    let variants = parse_variants(&args.variants)?;
    let mut scenes = Vec::new();
    for dir in scene_dirs(&args.scenes)? {
        let scene = load_scene(&dir).map_err(invalid)?;
        scene.check_graph(&graph).map_err(invalid)?;
        scenes.push(scene);
    }
    let defaults = ExperimentConfig::default();
    let config = ExperimentConfig {
        search: SearchConfig {
            iterations: args.iters,
            simulations: args.sims,
            seed: args.seed,
            ..defaults.search.clone()
        },
        loss: LossConfig {
            max_scene_points: (args.max_points > 0).then_some(args.max_points),
            ..defaults.loss.clone()
        },
        ..defaults
    };
    config.search.validate().map_err(invalid)?;
    let report = run_experiment(&graph, &scenes, &variants, &config).map_err(runtime)?;

    println!("{} scenes of {}", scenes.len(), graph.name);
    for v in &report.variants {
        let a = &v.aggregate;
        println!(
            "{:<22} loss {:.4}  rotation {:.2} deg  chamfer {:.3e} m2  evals {}  to-threshold {}/{} (median {})",
            v.variant.name(),
            a.mean_loss,
            a.rotation_mae_deg,
            a.chamfer_mean_m2,
            a.total_evaluations,
            a.reached_tau,
            a.scenes,
            a.median_evaluations_to_tau.map_or("never".to_string(), |m| format!("{m:.0}"))
        );
        let cont: Vec<String> = a.continuous_mae.iter().map(|(k, e)| format!("{k} {e:.2}")).collect();
        let disc: Vec<String> = a.discrete_accuracy.iter().map(|(k, e)| format!("{k} {e:.0}%")).collect();
        println!("    MAE: {}", cont.join(", "));
        println!("    accuracy: {}", disc.join(", "));
    }
    if let Some(path) = &args.report {
        write_json(path, &report)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.csv {
        let header = format!(
            "geonode {VERSION} graph={} seed={} config={}",
            graph.name,
            args.seed,
            serde_json::to_string(&config).map_err(runtime)?
        );
        let body = rows_to_csv(&report.rows()).map_err(runtime)?;
        write_file(path, format!("# {header}\n{body}").as_bytes())?;
        println!("wrote {}", path.display());
    }
    if args.check {
        let checks = trend_checks(&report);
        let mut failed = 0;
        for (label, ok) in &checks {
            println!("{} {label}", if *ok { "PASS" } else { "FAIL" });
            failed += usize::from(!ok);
        }
        if failed > 0 {
            return Err(CliError::Threshold(format!("{failed} of {} checks failed", checks.len())));
        }
    }
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let graph = load_graph(&args.graph)?;
    if args.trials == 0 || !(args.step > 0.0) {
        return Err(invalid("--trials and --step must be positive"));
    }
    let config = GradCheckConfig {
        trials: args.trials,
        step: args.step,
        tolerance: args.tolerance,
        seed: args.seed,
        ..GradCheckConfig::default()
    };
    let report = gradient_check(&graph, &config).map_err(runtime)?;
    let worst = report
        .trials
        .iter()
        .flat_map(|t| &t.checks)
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error));
    if let Some(w) = worst {
        println!(
            "{}: {} trials, max relative error {:.3e} ({}: analytic {:.6e}, numeric {:.6e})",
            graph.name, args.trials, report.max_rel_error, w.name, w.analytic, w.numeric
        );
    }
    if let Some(path) = &args.out {
        write_json(path, &serde_json::json!({ "tool_version": VERSION, "report": report }))?;
        println!("wrote {}", path.display());
    }
    let _ = std::io::stdout().flush();
    if !report.passed {
        return Err(CliError::Threshold(format!(
            "max relative error {:.3e} is not below {:.1e}",
            report.max_rel_error, args.tolerance
        )));
    }
    Ok(())
}
