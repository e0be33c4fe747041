//! Renderer forward pass against the brute-force reference, plus the exact
//! indicator-partition guarantees of separate rendering.

mod common;

use surfelcore::render::{render_maps, RenderConfig, RenderMode};
use surfelcore::scene::testgen;

type T = f64;

#[test]
fn matches_brute_force_reference() {
    let config = RenderConfig::default();
    for seed in 0..20u64 {
        let mut rng = testgen::rng(seed);
        let n = 1 + (seed as usize % 20);
        let mut surfels = testgen::random_surfels::<T>(&mut rng, n, 0.7);
        testgen::randomize_tasks(&mut rng, &mut surfels);
        for mode in [RenderMode::Unified, RenderMode::Separate] {
            let camera = testgen::front_camera::<T>(16, 2.0 + (seed % 3) as f64);
            let (maps, _) = render_maps(&surfels, &camera, mode, &config);
            let reference = common::reference_render(&surfels, &camera, mode, &config);
            let diff = common::max_map_difference(&maps, &reference);
            assert!(diff < 1e-6, "seed {seed} {mode:?}: max deviation {diff:.3e}");
        }
    }
}

#[test]
fn permutation_invariant() {
    let config = RenderConfig::default();
    let mut rng = testgen::rng(99);
    let mut surfels = testgen::random_surfels::<T>(&mut rng, 12, 0.6);
    testgen::randomize_tasks(&mut rng, &mut surfels);
    let camera = testgen::front_camera::<T>(16, 2.5);
    let (maps, _) = render_maps(&surfels, &camera, RenderMode::Separate, &config);
    surfels.reverse();
    let (maps_rev, _) = render_maps(&surfels, &camera, RenderMode::Separate, &config);
    assert_eq!(maps.color.data, maps_rev.color.data);
    assert_eq!(maps.depth.data, maps_rev.depth.data);
    assert_eq!(maps.normal.data, maps_rev.normal.data);
}

/// Deleting the surfels that the color pass never sees must leave the color,
/// depth, confidence and alpha maps bit-identical, and symmetrically for the
/// normal map. Exact equality, not a tolerance.
#[test]
fn indicator_partition_is_bit_exact() {
    let config = RenderConfig::default();
    for seed in [3u64, 17, 41, 59] {
        let mut rng = testgen::rng(seed);
        let mut surfels = testgen::random_surfels::<T>(&mut rng, 15, 0.6);
        testgen::randomize_tasks(&mut rng, &mut surfels);
        let camera = testgen::front_camera::<T>(24, 2.5);
        let (full, _) = render_maps(&surfels, &camera, RenderMode::Separate, &config);

        let color_only: Vec<_> = surfels
            .iter()
            .filter(|s| s.task.in_color_pass())
            .cloned()
            .collect();
        let (no_normals, _) = render_maps(&color_only, &camera, RenderMode::Separate, &config);
        assert_eq!(full.color.data, no_normals.color.data, "seed {seed}");
        assert_eq!(full.depth.data, no_normals.depth.data, "seed {seed}");
        assert_eq!(full.confidence.data, no_normals.confidence.data, "seed {seed}");
        assert_eq!(full.alpha.data, no_normals.alpha.data, "seed {seed}");

        let normal_only: Vec<_> = surfels
            .iter()
            .filter(|s| s.task.in_normal_pass())
            .cloned()
            .collect();
        let (no_color, _) = render_maps(&normal_only, &camera, RenderMode::Separate, &config);
        assert_eq!(full.normal.data, no_color.normal.data, "seed {seed}");
    }
}

/// With every surfel in the Common set, Separate and Unified modes are the
/// same computation.
#[test]
fn all_common_separate_equals_unified() {
    let config = RenderConfig::default();
    let mut rng = testgen::rng(7);
    let surfels = testgen::random_surfels::<T>(&mut rng, 10, 0.6);
    let camera = testgen::front_camera::<T>(16, 2.5);
    let (sep, _) = render_maps(&surfels, &camera, RenderMode::Separate, &config);
    let (uni, _) = render_maps(&surfels, &camera, RenderMode::Unified, &config);
    assert_eq!(sep.color.data, uni.color.data);
    assert_eq!(sep.depth.data, uni.depth.data);
    assert_eq!(sep.normal.data, uni.normal.data);
    assert_eq!(sep.alpha.data, uni.alpha.data);
}
