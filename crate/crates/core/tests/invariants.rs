mod common;

use proptest::prelude::*;
use rand::Rng;

use uva::body_model::Pose;
use uva::mesh_geometry::{knn_inverse_distance, VertexIndex};
use uva::motion_field::{diffuse_weights, PoseContext};
use uva::renderer::{composite, render_image, sample_points, RenderSettings};
use uva::synth_data::{camera_rig, SceneSpec};

use common::*;

#[test]
fn skinning_weights_sum_to_one() {
    let e = weight_partition_error(500, 20, 1);
    assert!(e < 1e-6, "{e}");
}

#[test]
fn rest_pose_is_identity() {
    let e = rest_pose_identity_error();
    assert!(e < 1e-6, "{e}");
}

#[test]
fn flat_patch_round_trip_and_symmetry() {
    let (round, sym) = flat_patch_errors(2000, 2);
    assert!(round < 1e-6, "{round}");
    assert!(sym < 1e-6, "{sym}");
}

#[test]
fn knn_matches_brute_force() {
    assert_eq!(knn_mismatches(1000, 4, 3), 0);
}

#[test]
fn geometry_and_field_are_rigidly_equivariant() {
    let e = equivariance_errors(5, 4);
    assert!(e.signed_height < 1e-5, "{}", e.signed_height);
    assert!(e.knn_weights < 1e-5, "{}", e.knn_weights);
    assert!(e.field < 1e-5, "{}", e.field);
}

#[test]
fn transmittance_matches_closed_form() {
    let e = transmittance_error(256, 5);
    assert!(e < 1e-4, "{e}");
}

#[test]
fn splitting_an_interval_changes_nothing() {
    let e = split_invariance_error(6);
    assert!(e < 1e-6, "{e}");
}

#[test]
fn render_is_equivariant_to_moving_the_scene() {
    let avatar = shell_f64(400, 0);
    let spec = SceneSpec {
        resolution: 32,
        ..SceneSpec::default()
    };
    let cam = camera_rig(&spec).unwrap().remove(0);
    let mut r = rng(9);
    let pose = random_pose(avatar.skeleton().bone_count(), 0.3, &mut r);
    let settings = RenderSettings {
        samples_per_ray: 48,
        ..RenderSettings::default()
    };
    let a = render_image(&avatar, &cam, &pose, &settings, 0).unwrap();
    for _ in 0..2 {
        let m = random_rigid(&mut r);
        let moved = moved_pose(avatar.skeleton(), &pose, &m);
        let b = render_image(&avatar, &cam.transformed(&m), &moved, &settings, 0).unwrap();
        let mad = a.image.mean_abs_diff(&b.image).unwrap();
        assert!(mad < 1e-4, "{mad}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn diffused_weights_partition_unity(seed in any::<u64>(), spread in 0.001f64..1.0) {
        let (sk, mesh) = uva::fixtures::small_body(300).unwrap();
        let mut r = rng(seed);
        let pose = random_pose(sk.bone_count(), 1.0, &mut r);
        let ctx = PoseContext::new(&sk, &mesh, &pose).unwrap();
        for x in near_surface_points(&ctx, 20, spread, &mut r) {
            let w = diffuse_weights(&x, &ctx.posed_index, &mesh.lbs_weights, mesh.bone_count, 4, 0.1);
            let s: f64 = w.bone_weights.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(w.bone_weights.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn knn_weights_are_a_convex_combination(seed in any::<u64>(), k in 1usize..8) {
        let (_, mesh) = uva::fixtures::small_body(300).unwrap();
        let index = VertexIndex::new(&mesh.vertices);
        let mut r = rng(seed);
        let q = gaussian3(&mut r, 0.5) + mesh.vertices[r.gen_range(0..mesh.vertex_count())];
        let w = knn_inverse_distance(&q, &index, k);
        prop_assert_eq!(w.indices.len(), k);
        prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.weights.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn knn_indices_equal_sorted_distances(seed in any::<u64>()) {
        prop_assert_eq!(knn_mismatches(20, 4, seed), 0);
    }

    #[test]
    fn flat_patch_height_is_odd_in_the_offset(seed in any::<u64>()) {
        let (round, sym) = flat_patch_errors(50, seed);
        prop_assert!(round < 1e-6);
        prop_assert!(sym < 1e-6);
    }

    #[test]
    fn alpha_and_weights_are_bounded(
        sigma in prop::collection::vec(0.0f64..1e3, 1..40),
        step in 1e-4f64..0.5,
    ) {
        let n = sigma.len();
        let delta = vec![step; n];
        let c = composite(&sigma, &vec![[1.0, 1.0, 1.0]; n], &delta, [0.0; 3]);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&c.alpha));
        prop_assert!(c.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((c.weights.iter().sum::<f64>() - c.alpha).abs() < 1e-9);
        // white samples on a black background: colour equals opacity
        prop_assert!((c.color[0] - c.alpha).abs() < 1e-9);
    }

    #[test]
    fn samples_are_ordered_inside_the_interval(near in 0.0f64..5.0, len in 0.01f64..5.0, n in 2usize..128, seed in any::<u64>()) {
        let mut r = rng(seed);
        let (t, delta) = sample_points(near, near + len, n, Some(&mut r));
        prop_assert_eq!(t.len(), n);
        prop_assert!(t.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(t.iter().all(|&v| v >= near && v <= near + len));
        prop_assert!(delta.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn rigid_motion_of_the_scene_leaves_the_field_unchanged(seed in any::<u64>()) {
        let e = equivariance_errors(1, seed);
        prop_assert!(e.signed_height < 1e-5);
        prop_assert!(e.knn_weights < 1e-5);
        prop_assert!(e.field < 1e-5);
    }
}

#[test]
fn rest_pose_context_keeps_vertices() {
    let (sk, mesh) = uva::fixtures::small_body(300).unwrap();
    let ctx = PoseContext::new(&sk, &mesh, &Pose::rest(sk.bone_count())).unwrap();
    for (a, b) in ctx.posed_vertices.iter().zip(&mesh.vertices) {
        assert!((a - b).norm() < 1e-12);
    }
}
