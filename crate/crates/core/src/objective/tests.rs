use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{make_cuboid, Mesh};

fn translated(mut mesh: Mesh, t: [f64; 3]) -> Mesh {
    for v in &mut mesh.vertices {
        for a in 0..3 {
            v[a] += t[a];
        }
    }
    mesh
}

fn front_camera(w: u32, h: u32, focal: f64) -> Camera {
    Camera::look_at([0.0, 0.0, -2.0], [0.0, 0.0, 0.0], w, h, focal).unwrap()
}

#[test]
fn unit_cube_center_depth() {
    let cube = make_cuboid([1.0, 1.0, 1.0]).unwrap();
    let cam = front_camera(9, 7, 6.0);
    let depth = render_depth(&cube, &cam);
    assert_eq!(depth.at(4, 3), 1.5);
    assert!(depth.data.iter().any(|&d| d == 0.0));

    let empty = render_depth(&Mesh::default(), &cam);
    assert!(empty.data.iter().all(|&d| d == 0.0));
}

#[test]
fn faces_behind_the_camera_are_clipped() {
    // A large floor quad that passes under and behind the camera.
    let floor = Mesh {
        vertices: vec![[-5.0, -0.5, -5.0], [5.0, -0.5, -5.0], [5.0, -0.5, 5.0], [-5.0, -0.5, 5.0]],
        faces: vec![[0, 1, 2], [0, 2, 3]],
    };
    let cam = front_camera(16, 12, 8.0);
    let depth = render_depth(&floor, &cam);
    assert!(depth.data.iter().all(|d| d.is_finite() && *d >= 0.0));
    // Top half looks above the horizon, bottom rows see the floor.
    assert_eq!(depth.at(8, 0), 0.0);
    let d = depth.at(8, 11);
    let k = cam.intrinsics;
    let expected = 0.5 * k.fy / (11.5 - k.cy);
    assert!((d as f64 - expected).abs() < 1e-5, "{d} vs {expected}");
}

fn hull_area(mut pts: Vec<[f64; 2]>) -> (f64, f64) {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let turn = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let mut area = 0.0;
    let mut perimeter = 0.0;
    for k in 0..hull.len() {
        let (a, b) = (hull[k], hull[(k + 1) % hull.len()]);
        area += a[0] * b[1] - a[1] * b[0];
        perimeter += ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    }
    (area.abs() / 2.0, perimeter)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn silhouette_area_matches_projected_hull(
        size in prop::array::uniform3(0.2f64..1.0),
        offset in prop::array::uniform3(-0.3f64..0.3),
        eye in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let mesh = translated(make_cuboid(size).unwrap(), offset);
        let eye = [eye[0] * 2.0, eye[1], -3.0 + eye[2] * 0.5];
        let cam = Camera::look_at(eye, [0.0, 0.0, 0.0], 64, 48, 40.0).unwrap();
        let depth = render_depth(&mesh, &cam);
        let covered = depth.data.iter().filter(|&&d| d > 0.0).count() as f64;
        let projected = mesh.vertices.iter().map(|&v| cam.project(cam.world_to_camera(v))).collect();
        let (area, perimeter) = hull_area(projected);
        prop_assert!((covered - area).abs() <= 2.0 * perimeter, "covered {covered}, area {area}, perimeter {perimeter}");
    }

    #[test]
    fn merge_matches_per_pixel_rule(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (7, 5);
        let mut depth = || Image {
            width: w,
            height: h,
            data: (0..w * h).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.1f32..5.0) }).collect(),
        };
        let (rendered, observed) = (depth(), depth());
        let mask = Image { width: w, height: h, data: (0..w * h).map(|_| rng.gen_range(0..2u8)).collect() };
        let merged = merge_depth(&rendered, &observed, &mask).unwrap();
        for k in 0..(w * h) as usize {
            let (r, o) = (rendered.data[k], observed.data[k]);
            let expected = if mask.data[k] == 1 {
                r
            } else {
                let far = |x: f32| if x == 0.0 { f32::INFINITY } else { x };
                let m = far(r).min(far(o));
                if m.is_infinite() { 0.0 } else { m }
            };
            prop_assert_eq!(merged.data[k], expected);
        }
        let twice = merge_depth(&merged, &observed, &mask).unwrap();
        prop_assert_eq!(twice, merged);
    }
}

#[test]
fn merge_edge_rules() {
    let rendered = Image { width: 2, height: 1, data: vec![2.0f32, 0.0] };
    let observed = Image { width: 2, height: 1, data: vec![1.0f32, 3.0] };
    let ones = Image::filled(2, 1, 1u8);
    let zeros = Image::filled(2, 1, 0u8);
    assert_eq!(merge_depth(&rendered, &observed, &ones).unwrap(), rendered);
    assert_eq!(merge_depth(&rendered, &observed, &zeros).unwrap().data, vec![1.0, 3.0]);
    let wrong = Image::filled(3, 1, 0u8);
    assert!(merge_depth(&rendered, &observed, &wrong).is_err());
    assert_eq!(min_plus(0.0, 0.0), 0.0);
}

/// Depth of the camera-space plane `z = z0 + slope * y` seen through each pixel.
fn plane_depth(cam: &Camera, z0: f64, slope: f64) -> DepthMap {
    let k = cam.intrinsics;
    let mut out = Image::filled(cam.width, cam.height, 0.0f32);
    for j in 0..cam.height {
        for i in 0..cam.width {
            let v = (j as f64 + 0.5 - k.cy) / k.fy;
            out.data[(j * cam.width + i) as usize] = (z0 / (1.0 - slope * v)) as f32;
        }
    }
    out
}

#[test]
fn normals_of_planes() {
    let cam = front_camera(16, 12, 8.0);
    let flat = normals_from_depth(&plane_depth(&cam, 2.0, 0.0), &cam);
    for j in 0..11 {
        for i in 0..15 {
            let n = flat.at(i, j).unwrap();
            assert!(n[0].abs() < 1e-6 && n[1].abs() < 1e-6 && (n[2] + 1.0).abs() < 1e-6, "{n:?}");
        }
        assert!(flat.at(15, j).is_none());
    }

    let tilted = normals_from_depth(&plane_depth(&cam, 2.0, 1.0), &cam);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..11 {
        for i in 0..15 {
            let n = tilted.at(i, j).unwrap();
            assert!(n[0].abs() < 1e-6 && (n[1] - s).abs() < 1e-6 && (n[2] + s).abs() < 1e-6, "{n:?}");
        }
    }

    let missing = normals_from_depth(&Image::filled(16, 12, 0.0), &cam);
    assert!(missing.data.iter().all(Option::is_none));
}

fn brute_force(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / a.len() as f64
}

#[test]
fn chamfer_of_own_samples_is_zero() {
    let mesh = make_cuboid([0.4, 0.7, 0.2]).unwrap();
    let pts = sample_surface(&mesh, 256, 3).unwrap().positions(&mesh).unwrap();
    let index = PointIndex::new(pts).unwrap();
    let cd = chamfer(&index, &mesh, 256, 3).unwrap();
    assert_eq!(cd.value, 0.0);
    assert!(cd.vertex_grad.iter().flatten().all(|g| *g == 0.0));
}

#[test]
fn offset_cubes_match_brute_force() {
    let a = make_cuboid([1.0, 1.0, 1.0]).unwrap();
    for delta in [1e-3, 1e-2, 5e-2] {
        let b = translated(a.clone(), [delta, 0.0, 0.0]);
        let pts = sample_surface(&a, 512, 11).unwrap().positions(&a).unwrap();
        let index = PointIndex::new(pts.clone()).unwrap();
        let cd = chamfer(&index, &b, 512, 12).unwrap();
        let s = sample_surface(&b, 512, 12).unwrap().positions(&b).unwrap();
        let p_to_s = brute_force(&pts, &s);
        let s_to_p = brute_force(&s, &pts);
        assert!((cd.points_to_mesh - p_to_s).abs() < 1e-9);
        assert!((cd.mesh_to_points - s_to_p).abs() < 1e-9);
        assert_eq!(cd.value, cd.points_to_mesh + cd.mesh_to_points);
    }
}

#[test]
fn chamfer_rejects_empty_inputs() {
    assert!(matches!(PointIndex::new(Vec::new()), Err(ChamferError::EmptyPoints)));
    let index = PointIndex::new(vec![[0.0; 3]]).unwrap();
    assert!(matches!(chamfer(&index, &Mesh::default(), 8, 0), Err(ChamferError::EmptyMesh)));
    let flat = Mesh { vertices: vec![[0.0; 3]; 3], faces: vec![[0, 1, 2]] };
    assert!(matches!(chamfer(&index, &flat, 8, 0), Err(ChamferError::ZeroArea)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn vertex_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)];
        let mesh = make_cuboid(size).unwrap();
        let pts: Vec<[f64; 3]> = (0..200).map(|_| [rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6)]).collect();
        let index = PointIndex::new(pts).unwrap();
        let samples = sample_surface(&mesh, 128, seed).unwrap();
        let cd = chamfer_frozen(&index, &mesh, &samples).unwrap();
        let h = 1e-5;
        let mut skipped = 0;
        for v in 0..mesh.vertices.len() {
            for a in 0..3 {
                let mut plus = mesh.clone();
                plus.vertices[v][a] += h;
                let mut minus = mesh.clone();
                minus.vertices[v][a] -= h;
                // Central differences only sample the derivative inside one
                // smooth piece, i.e. when no nearest neighbour changes.
                if assignments(&index, &plus, &samples) != assignments(&index, &minus, &samples) {
                    skipped += 1;
                    continue;
                }
                let fd = (chamfer_frozen(&index, &plus, &samples).unwrap().value
                    - chamfer_frozen(&index, &minus, &samples).unwrap().value)
                    / (2.0 * h);
                let g = cd.vertex_grad[v][a];
                prop_assert!((g - fd).abs() <= 1e-3 * g.abs().max(fd.abs()) + 1e-9, "vertex {v} axis {a}: {g} vs {fd}");
            }
        }
        prop_assert!(skipped <= 12, "{skipped} coordinates crossed a nearest-neighbour switch");
    }
}

/// Brute-force nearest-neighbour indices in both directions.
fn assignments(index: &PointIndex, mesh: &Mesh, samples: &SurfaceSamples) -> (Vec<usize>, Vec<usize>) {
    let pos = samples.positions(mesh).unwrap();
    let nearest = |q: &[f64; 3], set: &[[f64; 3]]| {
        (0..set.len())
            .min_by(|&i, &j| {
                let d = |k: usize| (0..3).map(|a| (q[a] - set[k][a]).powi(2)).sum::<f64>();
                d(i).total_cmp(&d(j))
            })
            .unwrap()
    };
    (
        pos.iter().map(|s| nearest(s, index.points())).collect(),
        index.points().iter().map(|p| nearest(p, &pos)).collect(),
    )
}

fn synthetic_views(mesh: &Mesh) -> Vec<ObservedView> {
    (0..4)
        .map(|k| {
            let a = k as f64 * std::f64::consts::FRAC_PI_2 + 0.3;
            let camera = Camera::look_at([2.5 * a.sin(), 1.0, 2.5 * a.cos()], [0.0, 0.2, 0.0], 32, 24, 30.0).unwrap();
            let depth = render_depth(mesh, &camera);
            let mask = Image {
                width: depth.width,
                height: depth.height,
                data: depth.data.iter().map(|&d| u8::from(d > 0.0)).collect(),
            };
            ObservedView { camera, depth, mask }
        })
        .collect()
}

#[test]
fn self_rendered_scene_has_zero_image_terms() {
    let mesh = make_cuboid([0.6, 0.8, 0.4]).unwrap();
    let views = synthetic_views(&mesh);
    let pts = sample_surface(&mesh, 4000, 99).unwrap().positions(&mesh).unwrap();
    let objective = SceneObjective::new(views, pts.clone(), LossConfig::default()).unwrap();
    let at_truth = objective.loss(&mesh).unwrap();
    assert_eq!(at_truth.depth_term, 0.0);
    assert_eq!(at_truth.normal_term, 0.0);
    assert!(at_truth.chamfer_term > 0.0 && at_truth.chamfer_term < 1e-3);

    let wider = make_cuboid([0.7, 0.8, 0.4]).unwrap();
    let off = objective.loss(&wider).unwrap();
    assert!(off.depth_term > 0.0 && off.total > at_truth.total);

    let no_cd = SceneObjective::new(
        objective.views().to_vec(),
        pts,
        LossConfig {
            lambda_cd: 0.0,
            ..LossConfig::default()
        },
    )
    .unwrap()
    .loss(&wider)
    .unwrap();
    assert_eq!(no_cd.total, no_cd.depth_term + no_cd.normal_term);
}

#[test]
fn no_signal_is_an_error() {
    let cam = front_camera(4, 3, 4.0);
    let blank = ObservedView {
        camera: cam,
        depth: Image::filled(4, 3, 0.0),
        mask: Image::filled(4, 3, 0),
    };
    assert!(matches!(
        SceneObjective::new(vec![blank.clone()], Vec::new(), LossConfig::default()),
        Err(ObjectiveError::NoSignal)
    ));
    let only_points = LossConfig {
        use_chamfer: false,
        ..LossConfig::default()
    };
    assert!(matches!(
        SceneObjective::new(vec![blank.clone()], vec![[0.0; 3]], only_points),
        Err(ObjectiveError::NoSignal)
    ));
    let mut bad = blank;
    bad.mask.data[0] = 2;
    assert!(matches!(
        SceneObjective::new(vec![bad], vec![[0.0; 3]], LossConfig::default()),
        Err(ObjectiveError::BadView(_))
    ));
}

#[test]
fn chamfer_parameter_gradient_matches_finite_differences() {
    use crate::eval::{evaluate, evaluate_mesh, NodeCache};
    use crate::graph::ParamValue;

    let graph = crate::bundled::cabinet_divboards();
    let truth = graph.default_assignment();
    let mesh = evaluate_mesh(&graph, &truth, None).unwrap();
    let pts = sample_surface(&mesh, 3000, 5).unwrap().positions(&mesh).unwrap();
    let objective = SceneObjective::new(Vec::new(), pts, LossConfig::default()).unwrap();

    let mut probe = truth.clone();
    probe.set("Width", ParamValue::Float(0.55));
    probe.set("Height", ParamValue::Float(0.52));
    probe.pose.rotation = 0.2;
    let cache = NodeCache::new();
    let result = evaluate(&graph, &probe, &cache).unwrap();
    let samples = objective.surface_samples(&result.mesh).unwrap();
    let (_, grads) = objective.chamfer_gradients(&result, &samples).unwrap();
    let (cd, grads_again) = objective.chamfer_gradients(&result, &samples).unwrap();
    assert_eq!(grads, grads_again);
    let index = objective.points().unwrap();
    let value_at = |a: &crate::graph::ParameterAssignment| {
        let r = evaluate(&graph, a, &cache).unwrap();
        chamfer_paired(index, &r.mesh, &samples, &cd.pairs).unwrap()
    };
    assert_eq!(value_at(&probe), cd.value);
    let h = 1e-4;
    for (name, g) in &grads.params {
        let x = probe.get(name).unwrap().as_f64();
        let (mut plus, mut minus) = (probe.clone(), probe.clone());
        plus.set(name.clone(), ParamValue::Float(x + h));
        minus.set(name.clone(), ParamValue::Float(x - h));
        let fd = (value_at(&plus) - value_at(&minus)) / (2.0 * h);
        assert!((g - fd).abs() <= 1e-6 * g.abs().max(fd.abs()).max(1e-6), "{name}: {g} vs {fd}");
    }
}

