use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;

use super::*;
use crate::bundled;
use crate::harness::{generate_scene, SceneConfig, SyntheticScene};
use crate::objective::LossConfig;

fn small_scene(graph: &ShapeGraph, seed: u64) -> SyntheticScene {
    let cfg = SceneConfig {
        views: 3,
        points: 1500,
        width: 32,
        height: 24,
        focal: 30.0,
        ..SceneConfig::default()
    };
    generate_scene(graph, &cfg, seed).unwrap()
}

fn small_objective(scene: &SyntheticScene) -> SceneObjective {
    scene
        .objective(&LossConfig {
            chamfer_samples: 512,
            ..LossConfig::default()
        })
        .unwrap()
}

fn quick(iterations: usize, simulations: usize, seed: u64) -> SearchConfig {
    SearchConfig {
        iterations,
        simulations,
        refinement_enabled: false,
        tree: TreeConfig {
            influence_probes: 6,
            influence_samples: 128,
            ..TreeConfig::default()
        },
        seed,
        ..SearchConfig::default()
    }
}

#[test]
fn ucb_hand_values() {
    let u = ucb(0.6, 4, 16, 0.2, true);
    assert!((u - (0.6 + 0.2 * (16f64.ln() / 4.0).sqrt())).abs() < 1e-15);
    assert!((u - 0.766_511).abs() < 1e-6);
    assert_eq!(ucb(0.6, 0, 16, 0.2, true), f64::INFINITY);
    assert!((ucb(0.6, 4, 16, 0.2, false) - 0.166_511).abs() < 1e-6);
    assert_eq!(ucb(0.3, 2, 0, 0.2, true), 0.3);
}

#[test]
fn back_up_keeps_running_means() {
    let graph = bundled::cabinet_divboards();
    let spec = build_tree_spec(&graph, &quick(1, 1, 0).tree);
    let mut table = ScoreTable::new(&spec);
    table.back_up(&[(0, 1), (1, 2)], 1.0);
    table.back_up(&[(0, 1)], 0.0);
    assert_eq!(table.get(0, 1), PairStats { score: 0.5, visits: 2 });
    assert_eq!(table.get(1, 2), PairStats { score: 1.0, visits: 1 });
    assert_eq!(table.get(0, 0).visits, 0);
    assert_eq!(table.iterations(), 2);
    let entries = table.entries(&spec);
    assert_eq!(entries.len(), spec.levels.iter().map(|l| l.candidates.len()).sum::<usize>());
    assert_eq!(entries[1].parameter, "rotation");
}

#[test]
fn tree_spec_layout() {
    let graph = bundled::cabinet();
    let spec = build_tree_spec(&graph, &quick(1, 1, 0).tree);
    assert_eq!(spec.depth(), graph.parameters.len() + 2);
    assert_eq!(spec.levels[0].slot, Slot::Rotation);
    let angles: Vec<f64> = spec.levels[0].candidates.iter().map(|c| match c {
        Candidate::Value(v) => v.as_f64().to_degrees(),
        Candidate::Translation(_) => panic!("rotation level holds angles"),
    }).collect();
    for (a, b) in angles.iter().zip([0.0, 90.0, 180.0, 270.0]) {
        assert!((a - b).abs() < 1e-9);
    }
    let last = spec.levels.last().unwrap();
    assert_eq!(last.slot, Slot::Translation);
    assert_eq!(last.candidates, vec![Candidate::Translation([0.0; 3])]);

    let inner = &spec.levels[1..spec.depth() - 1];
    for pair in inner.windows(2) {
        assert!(pair[0].influence.unwrap() >= pair[1].influence.unwrap());
    }
    for l in inner {
        let p = graph.parameter(l.slot.label()).unwrap();
        let expected = match p.range {
            ParamRange::Bool => 2,
            ParamRange::Int { min, max } => (max - min + 1) as usize,
            ParamRange::Float { .. } => 5,
        };
        assert_eq!(l.candidates.len(), expected, "{}", p.name);
    }
    // The carcass dimensions move far more surface than the legs do.
    for big in ["Width", "Height", "Depth"] {
        for small in ["Leg Width", "Leg Depth"] {
            assert!(spec.level_of(big).unwrap() < spec.level_of(small).unwrap(), "{big} vs {small}");
        }
    }
}

#[test]
fn float_candidates_are_bin_centers() {
    let c = candidates(ParamRange::Float { min: 0.0, max: 1.0 }, 5);
    let v: Vec<f64> = c.iter().map(|x| x.as_f64()).collect();
    assert_eq!(v, vec![0.1, 0.3, 0.5, 0.7, 0.9]);
    assert_eq!(candidates(ParamRange::Int { min: 2, max: 4 }, 5).len(), 3);
    assert_eq!(candidates(ParamRange::Bool, 5), vec![ParamValue::Bool(false), ParamValue::Bool(true)]);
}

#[test]
fn one_iteration_with_one_simulation_costs_one_evaluation() {
    let graph = bundled::cabinet_divboards();
    let scene = small_scene(&graph, 3);
    let out = run_search(&graph, &small_objective(&scene), &quick(1, 1, 0)).unwrap();
    assert_eq!(out.evaluations, 1);
    assert_eq!(out.trace.len(), 1);
    assert_eq!(out.table.unwrap().iterations(), 1);
}

#[test]
fn rollouts_enumerate_small_subtrees() {
    let graph = bundled::cabinet_divboards();
    let spec = build_tree_spec(&graph, &quick(1, 1, 0).tree);
    let from = spec.depth() - 2;
    let total = spec.completions(from) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let all = completions(&spec, from, total + 10, &mut rng);
    assert_eq!(all.len(), total);
    let distinct: HashSet<_> = all.iter().collect();
    assert_eq!(distinct.len(), total);
    let some = completions(&spec, 0, 7, &mut rng);
    assert_eq!(some.len(), 7);
    assert_eq!(some.iter().collect::<HashSet<_>>().len(), 7);
}

#[test]
fn invalid_configs_are_rejected() {
    let graph = bundled::cabinet_divboards();
    let scene = small_scene(&graph, 3);
    let obj = small_objective(&scene);
    for cfg in [quick(0, 1, 0), quick(1, 0, 0), SearchConfig { lambda_explore: -1.0, ..quick(1, 1, 0) }] {
        assert!(matches!(run_search(&graph, &obj, &cfg), Err(SearchError::Config(_))));
    }
    assert!(random_search(&graph, &obj, 0, [0.0; 3], 0).is_err());
}

#[test]
fn no_refinement_stays_on_the_grid() {
    let graph = bundled::cabinet();
    let scene = small_scene(&graph, 4);
    let out = run_search(&graph, &small_objective(&scene), &quick(12, 6, 1)).unwrap();
    assert!(on_bin_centers(&graph, &out.best, 5));
    assert_eq!(out.best.pose.translation, [0.0; 3]);
    assert_eq!((out.best.pose.rotation / FRAC_PI_2).fract(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn accounting_invariants(seed in 0u64..1000, iterations in 1usize..20, sims in 1usize..6, exploit in any::<bool>()) {
        let graph = bundled::cabinet_divboards();
        let scene = small_scene(&graph, seed % 5);
        let obj = small_objective(&scene);
        let cfg = SearchConfig { exploitation_enabled: exploit, ..quick(iterations, sims, seed) };
        let spec = build_tree_spec(&graph, &cfg.tree);
        let out = run_search_with(&graph, &obj, &spec, &cfg).unwrap();
        let table = out.table.as_ref().unwrap();
        let root: u64 = table.level(0).iter().map(|s| s.visits).sum();
        prop_assert_eq!(root, iterations as u64);
        prop_assert_eq!(out.trace.len(), iterations);
        for w in out.trace.windows(2) {
            prop_assert!(w[1].best_loss <= w[0].best_loss);
            prop_assert!(w[1].evaluations > w[0].evaluations);
        }
        for w in out.improvements.windows(2) {
            prop_assert!(w[1].loss < w[0].loss && w[1].evaluations > w[0].evaluations);
        }
        prop_assert_eq!(out.trace.last().unwrap().best_loss, out.loss.total);
        prop_assert_eq!(out.evaluations, out.trace.last().unwrap().evaluations);

        let again = run_search_with(&graph, &obj, &spec, &cfg).unwrap();
        let bits = |o: &SearchOutcome| o.trace.iter().map(|t| (t.best_loss.to_bits(), t.evaluations, t.depth)).collect::<Vec<_>>();
        prop_assert_eq!(bits(&out), bits(&again));
        prop_assert_eq!(&out.best, &again.best);
    }
}

#[test]
fn leaves_are_reached_and_refined() {
    let graph = bundled::cabinet_divboards();
    let scene = small_scene(&graph, 6);
    let cfg = SearchConfig {
        refinement_enabled: true,
        adam: AdamConfig {
            steps: 5,
            gradient_samples: None,
            ..AdamConfig::default()
        },
        ..quick(60, 4, 2)
    };
    let out = run_search(&graph, &small_objective(&scene), &cfg).unwrap();
    let refined = out.trace.iter().filter(|t| t.refined).count();
    assert!(refined > 0);
    assert!(out.trace.iter().filter(|t| t.refined).all(|t| t.depth == 7));
}

#[test]
fn random_search_spends_its_budget() {
    let graph = bundled::cabinet_divboards();
    let scene = small_scene(&graph, 3);
    let obj = small_objective(&scene);
    let out = random_search(&graph, &obj, 40, [0.0; 3], 9).unwrap();
    assert_eq!(out.evaluations, 40);
    assert!(out.table.is_none());
    let again = random_search(&graph, &obj, 40, [0.0; 3], 9).unwrap();
    assert_eq!(out.best, again.best);
}

#[test]
fn zero_steps_returns_the_input() {
    let graph = bundled::cabinet_divboards();
    let scene = small_scene(&graph, 2);
    let obj = small_objective(&scene);
    let start = graph.default_assignment();
    let cfg = AdamConfig { steps: 0, ..AdamConfig::default() };
    let out = refine(&graph, &obj, &start, &cfg, &NodeCache::new());
    assert_eq!(out.params, start);
    assert!(out.aborted.is_none());
    let direct = obj.loss(&evaluate_mesh(&graph, &start, None).unwrap()).unwrap();
    assert_eq!(out.loss.unwrap().total, direct.total);
}

#[test]
fn refinement_never_worsens_its_start() {
    let graph = bundled::cabinet_divboards();
    let scene = small_scene(&graph, 5);
    let obj = small_objective(&scene);
    let cache = NodeCache::new();
    for start in [scene.ground_truth.clone(), graph.default_assignment()] {
        let before = obj.loss(&evaluate_mesh(&graph, &start, None).unwrap()).unwrap().total;
        let cfg = AdamConfig { steps: 20, gradient_samples: None, ..AdamConfig::default() };
        let out = refine(&graph, &obj, &start, &cfg, &cache);
        assert!(out.loss.unwrap().total <= before);
        assert_eq!(out.evaluations, 21);
        for p in &graph.parameters {
            assert_eq!(out.params.get(&p.name).unwrap().kind(), start.get(&p.name).unwrap().kind());
        }
        out.params.validate(&graph).unwrap();
    }
}

#[test]
fn refinement_recovers_an_offset_width() {
    let graph = bundled::cabinet();
    let scene = generate_scene(&graph, &SceneConfig::default(), 3).unwrap();
    let obj = scene
        .objective(&LossConfig {
            max_scene_points: Some(2048),
            ..LossConfig::default()
        })
        .unwrap();
    let truth = scene.ground_truth.get("Width").unwrap().as_f64();
    let mut start = scene.ground_truth.clone();
    start.set("Width", ParamValue::Float(truth + 0.1));
    let out = refine(&graph, &obj, &start, &AdamConfig::default(), &NodeCache::new());
    let width = out.params.get("Width").unwrap().as_f64();
    assert!((width - truth).abs() < 0.01, "width {width} vs {truth}");
    assert_eq!(out.steps, 100);
}
