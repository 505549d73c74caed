use approx::assert_relative_eq;
use proptest::prelude::*;
use refracta::costvol::{angle_schedule_for_views, search_normals, SearchConfig};
use refracta::geom::kdtree::{nearest_brute_force, PointIndex};
use refracta::geom::mesh::icosphere;
use refracta::geom::{AccelIndex, Camera};
use refracta::hull::trace_normal_maps;
use refracta::metrics::{chamfer_metrics, metro};
use refracta::optics::render_layer;
use refracta::parallel::with_threads;
use refracta::surface::{loss_chamfer, loss_nearest, LossWeights};
use refracta::synth::{procedural_env, EnvKind};
use refracta::{Mat3, Vec3};

fn vec3() -> impl Strategy<Value = Vec3> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn unit() -> impl Strategy<Value = Vec3> {
    vec3().prop_filter("non-degenerate", |v| v.norm() > 1e-2).prop_map(|v| v.normalize())
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<(Vec3, Vec3)>> {
    prop::collection::vec((vec3(), unit()), 1..max)
}

fn split(c: &[(Vec3, Vec3)]) -> (Vec<Vec3>, Vec<Vec3>) {
    c.iter().copied().unzip()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chamfer_loss_is_symmetric_and_non_negative(a in cloud(40), b in cloud(40)) {
        let w = LossWeights::default();
        let (ap, an) = split(&a);
        let (bp, bn) = split(&b);
        let ab = loss_chamfer(&ap, &an, &bp, &bn, &w).unwrap();
        let ba = loss_chamfer(&bp, &bn, &ap, &an, &w).unwrap();
        prop_assert!(ab >= 0.0);
        assert_relative_eq!(ab, ba, max_relative = 1e-12);
        prop_assert_eq!(loss_chamfer(&ap, &an, &ap, &an, &w).unwrap(), 0.0);
    }

    #[test]
    fn nearest_loss_is_non_negative(a in cloud(30)) {
        let index = AccelIndex::build(&icosphere(1.0, 2));
        let (p, n) = split(&a);
        prop_assert!(loss_nearest(&p, &n, &index, &LossWeights::default()).unwrap() >= 0.0);
    }

    #[test]
    fn kdtree_agrees_with_a_scan(points in prop::collection::vec(vec3(), 1..200), q in vec3()) {
        let tree = PointIndex::new(&points);
        let (i, d) = tree.nearest(&q);
        let (j, e) = nearest_brute_force(&points, &q);
        assert_relative_eq!(d, e, epsilon = 1e-12, max_relative = 1e-12);
        prop_assert_eq!((points[i] - q).norm_squared(), (points[j] - q).norm_squared());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn mesh_distances_are_rigid_invariant(
        axis in unit(),
        angle in -3.0..3.0f64,
        t in vec3(),
        scale in 0.8..1.2f64,
    ) {
        let a = icosphere(1.0, 2);
        let b = icosphere(scale, 2).transformed(&Mat3::identity(), &Vec3::new(0.1, 0.0, 0.0));
        let r = *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix();
        let before = chamfer_metrics(&a, &b, 2000, 3).unwrap();
        let after = chamfer_metrics(&a.transformed(&r, &t), &b.transformed(&r, &t), 2000, 3).unwrap();
        assert_relative_eq!(before.cd, after.cd, max_relative = 1e-9);
        prop_assert!(metro(&a, &b, 2000, 3).unwrap() >= 0.0);
    }
}

#[test]
fn metrics_do_not_depend_on_thread_count() {
    let a = icosphere(1.0, 3);
    let b = icosphere(1.1, 2);
    let run = |threads| with_threads(Some(threads), || (chamfer_metrics(&a, &b, 5000, 1).unwrap(), metro(&a, &b, 5000, 1).unwrap()));
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
    let m = chamfer_metrics(&a, &a, 3000, 5).unwrap();
    assert_eq!((m.cd, m.cdn_mean_deg, m.cdn_median_deg), (0.0, 0.0, 0.0));
    assert!(metro(&a, &a, 3000, 5).unwrap() < 1e-12);
}

#[test]
fn searched_normals_stay_near_the_hull() {
    let index = AccelIndex::build(&icosphere(1.0, 3));
    let truth = AccelIndex::build(&icosphere(1.0, 3).transformed(
        &Mat3::from_diagonal(&Vec3::new(1.0, 0.85, 1.1)),
        &Vec3::zeros(),
    ));
    let cam = Camera::look_at(Vec3::new(0.2, 0.3, -3.0), Vec3::zeros(), Vec3::y(), 32, 32, 50.0).unwrap();
    let env = procedural_env(1, EnvKind::HighFrequency, 128).unwrap();
    let ior = 1.4723;
    let gt = trace_normal_maps(&truth, &cam, ior, 1e-7).unwrap();
    let image = render_layer(&env, &gt, &cam, ior).unwrap().combined();
    let hull = trace_normal_maps(&index, &cam, ior, 1e-7).unwrap();
    let schedule = angle_schedule_for_views(10, 4, None).unwrap();
    let out = search_normals(&image, &env, &hull, &cam, ior, &schedule, &SearchConfig::default()).unwrap();
    let bound = schedule.max_theta() + 2.0;
    for i in hull.valid_indices() {
        assert!(out.normals.n1[i].angle(&hull.n1[i]).to_degrees() <= bound + 1e-9);
        assert!(out.normals.n2[i].angle(&hull.n2[i]).to_degrees() <= bound + 1e-9);
    }
    out.normals.check_invariants(1e-9).unwrap();
}
