use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use udf_core::fixtures::AnalyticShape;
use udf_core::geometry::{PointCloud, TriangleMesh, Vec3};
use udf_core::metrics::{self, EvalReport};

fn brute_directed(a: &[Vec3], b: &[Vec3]) -> Vec<f64> {
    a.iter()
        .map(|&p| b.iter().map(|&q| p.distance_squared(q)).fold(f64::INFINITY, f64::min).sqrt())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
        .collect()
}

fn rotation(rng: &mut ChaCha8Rng) -> impl Fn(Vec3) -> Vec3 {
    // Random unit quaternion.
    let mut q = [0.0f64; 4];
    loop {
        for x in &mut q {
            *x = rng.random_range(-1.0..1.0);
        }
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            q.iter_mut().for_each(|x| *x /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    let m = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    let t = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    move |v: Vec3| {
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        ) + t
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn point_metrics_match_double_loops(seed in 0u64..1000, na in 1usize..500, nb in 1usize..500, tau in 0.01f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_cloud(&mut rng, na);
        let b = random_cloud(&mut rng, nb);
        let ab = brute_directed(&a, &b);
        let ba = brute_directed(&b, &a);
        prop_assert_eq!(metrics::cd_l1(&a, &b).unwrap(), 0.5 * (mean(&ab) + mean(&ba)));
        let sq = |v: &[f64]| v.iter().map(|d| d * d).collect::<Vec<_>>();
        prop_assert_eq!(metrics::cd_l2(&a, &b).unwrap(), 0.5 * (mean(&sq(&ab)) + mean(&sq(&ba))));
        let h = ab.iter().chain(&ba).fold(0.0f64, |m, &d| m.max(d));
        prop_assert_eq!(metrics::hausdorff(&a, &b).unwrap(), h);
        let p = ab.iter().filter(|&&d| d <= tau).count() as f64 / na as f64;
        let r = ba.iter().filter(|&&d| d <= tau).count() as f64 / nb as f64;
        let f = if p + r == 0.0 { 0.0 } else { 100.0 * 2.0 * p * r / (p + r) };
        prop_assert_eq!(metrics::fscore(&a, &b, tau).unwrap(), f);
    }
}

#[test]
fn p2f_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vertices = random_cloud(&mut rng, 300);
    let triangles: Vec<[usize; 3]> = (0..100).map(|t| [3 * t, 3 * t + 1, 3 * t + 2]).collect();
    let mesh = TriangleMesh::new(vertices, triangles).unwrap();
    let pts = random_cloud(&mut rng, 400);
    let brute: Vec<f64> = pts
        .iter()
        .map(|&p| {
            (0..100)
                .map(|t| {
                    let [a, b, c] = mesh.triangle(t);
                    metrics::closest_point_on_triangle(p, a, b, c).distance(p)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    assert_eq!(metrics::p2f(&pts, &mesh).unwrap(), mean(&brute));
}

#[test]
fn normal_consistency_by_hand() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts = random_cloud(&mut rng, 200);
    let normals: Vec<Vec3> = random_cloud(&mut rng, 200).into_iter().map(|n| n.normalized(0.0).unwrap()).collect();
    let a = PointCloud::with_normals(pts.clone(), normals.clone()).unwrap();
    assert!((metrics::normal_consistency(&a, &a).unwrap() - 100.0).abs() < 1e-9);
    let flipped: Vec<Vec3> = normals.iter().enumerate().map(|(i, &n)| if i % 3 == 0 { -n } else { n }).collect();
    let b = PointCloud::with_normals(pts.clone(), flipped).unwrap();
    assert!((metrics::normal_consistency(&a, &b).unwrap() - 100.0).abs() < 1e-9);

    let flat: Vec<Vec3> = pts.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect();
    let up = PointCloud::with_normals(flat.clone(), vec![Vec3::new(0.0, 0.0, 1.0); 200]).unwrap();
    let side = PointCloud::with_normals(flat, vec![Vec3::new(1.0, 0.0, 0.0); 200]).unwrap();
    assert_eq!(metrics::normal_consistency(&up, &side).unwrap(), 0.0);
}

#[test]
fn area_weighting_follows_the_area_ratio() {
    let mesh = TriangleMesh::new(
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 5.0),
            Vec3::new(1.0, 0.0, 5.0),
            Vec3::new(0.0, 1.0, 5.0),
        ],
        vec![[0, 1, 2], [3, 4, 5]],
    )
    .unwrap();
    let s = metrics::sample_mesh(&mesh, 10_000, 8).unwrap();
    let big = s.points().iter().filter(|p| p.z == 0.0).count() as f64;
    let ratio = big / (10_000.0 - big);
    assert!((ratio / 3.0 - 1.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn fscore_is_perfect_under_small_noise_and_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let gt = random_cloud(&mut rng, 400);
    let tau = 0.01;
    let per_axis = tau / 3f64.sqrt() * 0.999;
    let pred: Vec<Vec3> = gt
        .iter()
        .map(|&p| p + Vec3::new(rng.random_range(-per_axis..per_axis), rng.random_range(-per_axis..per_axis), rng.random_range(-per_axis..per_axis)))
        .collect();
    assert!(pred.iter().zip(&gt).all(|(a, b)| a.distance(*b) < tau));
    assert_eq!(metrics::fscore(&pred, &gt, tau).unwrap(), 100.0);

    let other = random_cloud(&mut rng, 300);
    let mut last = 0.0;
    for k in 0..40 {
        let f = metrics::fscore(&other, &gt, 0.005 * k as f64).unwrap();
        assert!(f >= last);
        last = f;
    }
}

#[test]
fn metrics_ignore_rigid_motions() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sphere = AnalyticShape::sphere();
    let gt = sphere.sample_surface(400, 1).unwrap();
    let pred = sphere.sample_surface_noisy(300, 2, 0.01).unwrap();
    let mesh = TriangleMesh::new(
        vec![Vec3::new(-1.0, -1.0, 0.1), Vec3::new(1.0, -1.0, 0.0), Vec3::new(0.0, 1.0, -0.1)],
        vec![[0, 1, 2]],
    )
    .unwrap();
    for _ in 0..5 {
        let rot = rotation(&mut rng);
        let move_cloud = |c: &PointCloud| {
            let lin = |v: Vec3| rot(v) - rot(Vec3::default());
            PointCloud::with_normals(
                c.points().iter().map(|&p| rot(p)).collect(),
                c.normals().unwrap().iter().map(|&n| lin(n)).collect(),
            )
            .unwrap()
        };
        let (gt2, pred2) = (move_cloud(&gt), move_cloud(&pred));
        let a = EvalReport::compare(&pred, &gt, &[0.005, 0.01, 0.02]).unwrap();
        let b = EvalReport::compare(&pred2, &gt2, &[0.005, 0.01, 0.02]).unwrap();
        let close = |x: Option<f64>, y: Option<f64>| (x.unwrap() - y.unwrap()).abs() < 1e-9;
        assert!(close(a.cd_l1, b.cd_l1));
        assert!(close(a.cd_l2, b.cd_l2));
        assert!(close(a.hausdorff, b.hausdorff));
        assert!(close(a.normal_consistency, b.normal_consistency));
        for (x, y) in a.fscore_at.iter().zip(&b.fscore_at) {
            assert!((x.1 - y.1).abs() < 1e-9);
        }
        let m2 = mesh.map_vertices(&rot);
        let p0 = metrics::p2f(pred.points(), &mesh).unwrap();
        let p1 = metrics::p2f(pred2.points(), &m2).unwrap();
        assert!((p0 - p1).abs() < 1e-9);
        let r0 = metrics::rmse_unoriented(pred.normals().unwrap(), &gt.normals().unwrap()[..300]).unwrap();
        let r1 = metrics::rmse_unoriented(pred2.normals().unwrap(), &gt2.normals().unwrap()[..300]).unwrap();
        assert!((r0 - r1).abs() < 1e-9);
    }
}
