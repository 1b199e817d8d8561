//! Joint discrete/continuous parameter recovery: Monte Carlo tree search
//! over a shape-parameter tree whose statistics are shared per
//! `(parameter, value)` pair, with Adam refinement at leaves.

mod refine;
mod table;
mod tree;

use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use refine::{refine, AdamConfig, RefineOutcome};
pub use table::{ucb, PairStats, ScoreTable, TableEntry};
pub use tree::{build_tree_spec, candidates, influence, Candidate, Level, ParameterTreeSpec, Slot, TreeConfig};

use crate::eval::{evaluate_mesh, NodeCache};
use crate::graph::{ParamRange, ParamValue, ParameterAssignment, ShapeGraph};
use crate::objective::{LossBreakdown, SceneObjective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub lambda_explore: f64,
    pub iterations: usize,
    pub simulations: usize,
    pub exploitation_enabled: bool,
    pub refinement_enabled: bool,
    pub tree: TreeConfig,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lambda_explore: 0.2,
            iterations: 300,
            simulations: 30,
            exploitation_enabled: true,
            refinement_enabled: true,
            tree: TreeConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("no evaluation succeeded")]
    NothingScored,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if self.simulations == 0 {
            return bad("simulations must be positive");
        }
        if self.tree.float_bins == 0 {
            return bad("float bins must be positive");
        }
        if !(self.lambda_explore >= 0.0 && self.lambda_explore.is_finite()) {
            return bad("lambda must be a finite nonnegative number");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub best_loss: f64,
    /// Cumulative loss evaluations.
    pub evaluations: u64,
    /// Depth of the selected path.
    pub depth: usize,
    pub refined: bool,
}

/// New best loss found at a given cumulative evaluation count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub evaluations: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: ParameterAssignment,
    pub loss: LossBreakdown,
    pub trace: Vec<TraceEntry>,
    pub improvements: Vec<Improvement>,
    pub evaluations: u64,
    pub failures: u64,
    pub table: Option<ScoreTable>,
    pub elapsed_s: f64,
}

impl SearchOutcome {
    /// Evaluations needed before the best loss first dropped to `tau`.
    pub fn evaluations_to(&self, tau: f64) -> Option<u64> {
        self.improvements.iter().find(|i| i.loss <= tau).map(|i| i.evaluations)
    }
}

struct Node {
    children: Vec<Option<u32>>,
}

/// Bookkeeping shared by the search strategies.
struct Tally {
    best: Option<(f64, ParameterAssignment, LossBreakdown)>,
    improvements: Vec<Improvement>,
    evaluations: u64,
    failures: u64,
    reward_min: f64,
    reward_max: f64,
}

impl Tally {
    fn new() -> Self {
        Tally {
            best: None,
            improvements: Vec::new(),
            evaluations: 0,
            failures: 0,
            reward_min: f64::INFINITY,
            reward_max: f64::NEG_INFINITY,
        }
    }

    fn record(&mut self, total: Option<f64>) {
        self.evaluations += 1;
        match total {
            Some(total) => {
                self.reward_min = self.reward_min.min(-total);
                self.reward_max = self.reward_max.max(-total);
                if self.improvements.last().map_or(true, |i| total < i.loss) {
                    self.improvements.push(Improvement {
                        evaluations: self.evaluations,
                        loss: total,
                    });
                }
            }
            None => self.failures += 1,
        }
    }

    fn offer(&mut self, params: &ParameterAssignment, loss: LossBreakdown) {
        if self.best.as_ref().map_or(true, |b| loss.total < b.0) {
            self.best = Some((loss.total, params.clone(), loss));
        }
    }

    fn best_loss(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.0)
    }

    /// `-loss` mapped into `[0, 1]` by the running reward range.
    fn normalize(&self, total: f64) -> f64 {
        let span = self.reward_max - self.reward_min;
        if !(span > 0.0) {
            return 0.5;
        }
        ((-total - self.reward_min) / span).clamp(0.0, 1.0)
    }

    fn finish(self, trace: Vec<TraceEntry>, table: Option<ScoreTable>, start: Instant) -> Result<SearchOutcome, SearchError> {
        let (_, best, loss) = self.best.ok_or(SearchError::NothingScored)?;
        Ok(SearchOutcome {
            best,
            loss,
            trace,
            improvements: self.improvements,
            evaluations: self.evaluations,
            failures: self.failures,
            table,
            elapsed_s: start.elapsed().as_secs_f64(),
        })
    }
}

fn score(graph: &ShapeGraph, objective: &SceneObjective, params: &ParameterAssignment, cache: &NodeCache) -> Option<LossBreakdown> {
    let mesh = match evaluate_mesh(graph, params, Some(cache)) {
        Ok(m) => m,
        Err(e) => {
            log::debug!("rollout evaluation failed: {e}");
            return None;
        }
    };
    match objective.loss(&mesh) {
        Ok(l) => Some(l),
        Err(e) => {
            log::debug!("rollout loss failed: {e}");
            None
        }
    }
}

/// Distinct completions of levels `from..`: all of them when there are at
/// most `count`, otherwise `count` uniform draws without repeats.
fn completions(spec: &ParameterTreeSpec, from: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let levels = &spec.levels[from..];
    let total = spec.completions(from);
    if total <= count as u64 {
        return (0..total)
            .map(|mut code| {
                levels
                    .iter()
                    .map(|l| {
                        let n = l.candidates.len() as u64;
                        let c = code % n;
                        code /= n;
                        c as usize
                    })
                    .collect()
            })
            .collect();
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let draw: Vec<usize> = levels.iter().map(|l| rng.gen_range(0..l.candidates.len())).collect();
        if seen.insert(draw.clone()) {
            out.push(draw);
        }
    }
    out
}

pub fn run_search(graph: &ShapeGraph, objective: &SceneObjective, config: &SearchConfig) -> Result<SearchOutcome, SearchError> {
    config.validate()?;
    let spec = build_tree_spec(graph, &config.tree);
    run_search_with(graph, objective, &spec, config)
}

/// MCTS over a prebuilt tree spec.
pub fn run_search_with(
    graph: &ShapeGraph,
    objective: &SceneObjective,
    spec: &ParameterTreeSpec,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    config.validate()?;
    let start = Instant::now();
    let depth = spec.depth();
    let base = graph.default_assignment();
    let cache = NodeCache::new();
    let mut table = ScoreTable::new(spec);
    let mut nodes = vec![Node {
        children: vec![None; spec.levels[0].candidates.len()],
    }];
    let mut tally = Tally::new();
    let mut trace = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let mut path: Vec<(usize, usize)> = Vec::with_capacity(depth);
        let mut node = 0usize;
        while path.len() < depth {
            let level = path.len();
            let n = spec.levels[level].candidates.len();
            let mut chosen = 0;
            let mut best_ucb = f64::NEG_INFINITY;
            for c in 0..n {
                let u = table.ucb(level, c, config.lambda_explore, config.exploitation_enabled);
                if u > best_ucb {
                    best_ucb = u;
                    chosen = c;
                }
            }
            path.push((level, chosen));
            match nodes[node].children[chosen] {
                Some(child) => node = child as usize,
                None => {
                    let id = nodes.len() as u32;
                    let width = spec.levels.get(level + 1).map_or(0, |l| l.candidates.len());
                    nodes.push(Node {
                        children: vec![None; width],
                    });
                    nodes[node].children[chosen] = Some(id);
                    node = id as usize;
                    if table.get(level, chosen).visits == 0 {
                        break;
                    }
                }
            }
        }

        let prefix: Vec<usize> = path.iter().map(|p| p.1).collect();
        let refined = path.len() == depth && config.refinement_enabled;
        let iteration_best: Option<f64> = if path.len() == depth {
            let leaf = spec.instantiate(&base, &prefix);
            if config.refinement_enabled {
                let outcome = refine(graph, objective, &leaf, &config.adam, &cache);
                for &total in &outcome.history {
                    tally.record(Some(total));
                }
                if outcome.history.is_empty() {
                    tally.record(None);
                }
                outcome.loss.map(|loss| {
                    tally.offer(&outcome.params, loss);
                    loss.total
                })
            } else {
                let loss = score(graph, objective, &leaf, &cache);
                tally.record(loss.map(|l| l.total));
                loss.map(|l| {
                    tally.offer(&leaf, l);
                    l.total
                })
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(iteration as u64);
            let rollouts = completions(spec, path.len(), config.simulations, &mut rng);
            let assignments: Vec<ParameterAssignment> = rollouts
                .iter()
                .map(|tail| {
                    let mut choice = prefix.clone();
                    choice.extend_from_slice(tail);
                    spec.instantiate(&base, &choice)
                })
                .collect();
            let losses: Vec<Option<LossBreakdown>> = assignments
                .par_iter()
                .map(|a| score(graph, objective, a, &cache))
                .collect();
            let mut best: Option<f64> = None;
            for (a, loss) in assignments.iter().zip(&losses) {
                tally.record(loss.map(|l| l.total));
                if let Some(l) = loss {
                    tally.offer(a, *l);
                    best = Some(best.map_or(l.total, |b: f64| b.min(l.total)));
                }
            }
            best
        };
        let reward = iteration_best.map_or(0.0, |total| tally.normalize(total));
        table.back_up(&path, reward);
        trace.push(TraceEntry {
            iteration: iteration + 1,
            best_loss: tally.best_loss(),
            evaluations: tally.evaluations,
            depth: path.len(),
            refined,
        });
    }
    tally.finish(trace, Some(table), start)
}

const RANDOM_STREAM: u64 = 0x7261_6e64_0000_0000;

/// Uniformly random full assignments: continuous values and rotation drawn
/// from their ranges, discrete values from their candidates.
pub fn random_search(
    graph: &ShapeGraph,
    objective: &SceneObjective,
    budget: u64,
    translation: [f64; 3],
    seed: u64,
) -> Result<SearchOutcome, SearchError> {
    if budget == 0 {
        return Err(SearchError::Config("budget must be positive".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RANDOM_STREAM);
    let cache = NodeCache::new();
    let mut tally = Tally::new();
    let mut trace = Vec::with_capacity(budget as usize);
    for k in 0..budget {
        let mut a = graph.random_assignment(&mut rng);
        a.pose.rotation = rng.gen_range(0.0..std::f64::consts::TAU);
        a.pose.translation = translation;
        let loss = score(graph, objective, &a, &cache);
        tally.record(loss.map(|l| l.total));
        if let Some(l) = loss {
            tally.offer(&a, l);
        }
        trace.push(TraceEntry {
            iteration: k as usize + 1,
            best_loss: tally.best_loss(),
            evaluations: tally.evaluations,
            depth: 0,
            refined: false,
        });
    }
    tally.finish(trace, None, start)
}

/// Whether every continuous value of `params` sits on a bin center.
pub fn on_bin_centers(graph: &ShapeGraph, params: &ParameterAssignment, float_bins: usize) -> bool {
    graph.parameters.iter().all(|p| match p.range {
        ParamRange::Float { .. } => {
            let x = params.get(&p.name).map_or(f64::NAN, ParamValue::as_f64);
            candidates(p.range, float_bins).iter().any(|c| c.as_f64() == x)
        }
        _ => true,
    })
}

#[cfg(test)]
mod tests;
