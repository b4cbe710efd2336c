use std::collections::HashSet;

use ifield::eval::{evaluate, EvalConfig};
use ifield::geom::kdtree::brute_force_knn;
use ifield::geom::shapes::cuboid;
use ifield::geom::{KdTree, OrientedPointCloud, Point3, SensorSet, TriangleMesh, Vec3};
use ifield::prep::{sample_empty_space, EmptySpaceConfig, VectorFieldConfig, VectorFieldEstimator};
use ifield::siren::{AdamConfig, AdamState, SirenField};
use ifield::train::{train, TrainConfig, TrainInputs, TrainMode};
use proptest::prelude::*;

fn point(range: f64) -> impl Strategy<Value = Point3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn direction() -> impl Strategy<Value = Vec3<f64>> {
    point(1.0).prop_filter("non-zero", |v| v.norm() > 1e-3).prop_map(|v| v.normalize())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cloud_bounds_contain_points_and_normals_are_unit(
        pn in prop::collection::vec((point(50.0), direction()), 1..200),
    ) {
        let (points, normals): (Vec<_>, Vec<_>) = pn.into_iter().unzip();
        let cloud = OrientedPointCloud::new(points.clone(), normals, vec![]).unwrap();
        let b = cloud.bounds();
        prop_assert!(points.iter().all(|&p| b.contains(p)));
        prop_assert!(cloud.normals().iter().all(|n| (n.norm() - 1.0).abs() <= 1e-6));
    }

    #[test]
    fn cloud_rejects_non_unit_normals(p in point(1.0), n in point(1.0)) {
        prop_assume!((n.norm() - 1.0).abs() > 1e-5);
        prop_assert!(OrientedPointCloud::new(vec![p], vec![n], vec![]).is_err());
    }

    #[test]
    fn mesh_indices_are_validated(
        n in 3usize..40,
        tris in prop::collection::vec((0u32..60, 0u32..60, 0u32..60), 0..40),
    ) {
        let vertices: Vec<Point3<f64>> = (0..n).map(|i| Vec3::new(i as f64, (i * i) as f64, 0.0)).collect();
        let tris: Vec<[u32; 3]> = tris.into_iter().map(|(a, b, c)| [a, b, c]).collect();
        let valid = tris.iter().all(|t| {
            t.iter().all(|&v| (v as usize) < n) && t[0] != t[1] && t[1] != t[2] && t[0] != t[2]
        });
        prop_assert_eq!(TriangleMesh::new(vertices, tris).is_ok(), valid);
    }

    #[test]
    fn kdtree_matches_brute_force(
        points in prop::collection::vec(point(1.0), 1..300),
        queries in prop::collection::vec(point(1.5), 1..10),
        k in 1usize..30,
    ) {
        let tree = KdTree::build(&points).unwrap();
        for q in queries {
            prop_assert_eq!(tree.knn(q, k), brute_force_knn(&points, q, k));
        }
    }

    #[test]
    fn empty_samples_respect_lattice_cap_and_rays(
        rays in prop::collection::vec((point(3.0), point(3.0)), 1..200),
        cap in 1usize..2000,
        resolution in 0.001f64..0.2,
        seed in any::<u64>(),
    ) {
        let (sensors, points): (Vec<_>, Vec<_>) = rays.into_iter().unzip();
        let ids = (0..points.len() as u32).collect();
        let cloud = OrientedPointCloud::new(points.clone(), vec![], ids).unwrap();
        let cfg = EmptySpaceConfig { resolution, max_points: cap, ..EmptySpaceConfig::default() };
        let set = sample_empty_space(&cloud, &SensorSet::new(sensors.clone()), &cfg, seed).unwrap();
        prop_assert!(set.len() <= cap);
        let mut cells = HashSet::new();
        for (q, &r) in set.points.iter().zip(&set.ray_of) {
            let key = [
                (q.x / resolution).floor() as i64,
                (q.y / resolution).floor() as i64,
                (q.z / resolution).floor() as i64,
            ];
            prop_assert!(cells.insert(key));
            let (s, p) = (sensors[r as usize], points[r as usize]);
            let d = p - s;
            let t = (*q - s).dot(d) / d.norm_squared();
            prop_assert!(t > 0.0 && t < 1.0);
            prop_assert!((*q - (s + d * t)).norm() <= 1e-9 * (1.0 + d.norm()));
        }
    }

    #[test]
    fn adam_moments_stay_finite(
        grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 6), 1..20),
        lr in 1e-5f64..1e-1,
    ) {
        let mut params = vec![0.5f64; 6];
        let mut state = AdamState::new(6, AdamConfig { lr, ..AdamConfig::default() });
        for g in &grads {
            state.step(&mut params, g).unwrap();
        }
        prop_assert_eq!(state.steps(), grads.len() as u64);
        prop_assert!(state.first_moment().iter().all(|m| m.is_finite()));
        prop_assert!(state.second_moment().iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert!(params.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn siren_evaluation_is_pure(seed in any::<u64>(), xs in prop::collection::vec(point(1.0), 1..40)) {
        let f = SirenField::<f32>::init(&[3, 16, 16, 1], 30.0, seed).unwrap();
        let xs: Vec<Point3<f32>> = xs.iter().map(|p| p.cast()).collect();
        let batch = f.eval_batch(&xs);
        let dual = f.eval_dual_batch(&xs);
        for (i, &x) in xs.iter().enumerate() {
            prop_assert_eq!(f.eval(x).to_bits(), batch[i].to_bits());
            prop_assert_eq!(dual[i].value.to_bits(), batch[i].to_bits());
            prop_assert!(dual[i].grad.is_finite());
        }
    }

    #[test]
    fn metrics_are_bounded(a in point(0.3), b in point(0.3), sa in 0.1f64..0.6, sb in 0.1f64..0.6, seed in any::<u64>()) {
        let pred = cuboid(a - Vec3::splat(sa), a + Vec3::splat(sa));
        let gt = cuboid(b - Vec3::splat(sb), b + Vec3::splat(sb));
        let cfg = EvalConfig { samples: 2000, resolution: 16, seed, surface_shell: true };
        let m = evaluate(&pred, &gt, &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.iou));
        prop_assert!(m.chamfer >= 0.0 && m.l2 >= 0.0);
    }
}

fn toy_inputs() -> (OrientedPointCloud<f64>, Vec<Point3<f64>>) {
    let n = 400;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let (mut points, mut normals) = (Vec::new(), Vec::new());
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let a = golden * i as f64;
        let d = Vec3::new(r * a.cos(), r * a.sin(), z);
        points.push(d * 0.6);
        normals.push(-d);
    }
    let empties = points.iter().map(|p| *p * 1.4).collect();
    (OrientedPointCloud::new(points, normals, vec![]).unwrap(), empties)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn reported_totals_are_weighted_sums(
        lg in 0.0f64..5.0,
        ls in 0.0f64..200.0,
        le in 0.0f64..200.0,
        mode in prop::sample::select(TrainMode::ALL.to_vec()),
        seed in any::<u64>(),
    ) {
        let (cloud, empties) = toy_inputs();
        let est = VectorFieldEstimator::build(&cloud, VectorFieldConfig::default()).unwrap();
        let inputs = TrainInputs { cloud: &cloud, estimator: &est, empties: Some(&empties) };
        let mut cfg = TrainConfig { mode, epochs: 2, batch_size: 128, hidden: 16, layers: 3, seed, ..TrainConfig::default() };
        cfg.weights.lg = lg;
        cfg.weights.ls = ls;
        cfg.weights.le = le;
        let out = train(&inputs, &cfg).unwrap();
        for r in &out.reports {
            let le_term = if mode.uses_free_space() { le * r.le } else { 0.0 };
            let want = lg * r.lg + ls * r.ls + le_term + cfg.alignment_weight * r.align;
            prop_assert!((r.total - want).abs() <= 1e-9 * want.abs().max(1e-300));
        }
    }
}
