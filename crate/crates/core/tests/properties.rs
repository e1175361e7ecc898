mod common;

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{brute_force_ranking, front_camera, naive_composite, random_gaussians, random_unit};
use segsplat::model::Mask;
use segsplat::render::{gaussians_at, render, DeformConfig, DeformationField, RenderSettings};
use segsplat::semantics::{cosine, query};
use segsplat::synthetic::nested_scene;
use segsplat::{Gaussian, Granularity, ObjectIds, SceneModel, TrackedMasks};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tiled_render_matches_naive_and_alpha_is_bounded(seed in any::<u64>(), n in 1usize..24, spread in 0.2f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gaussians = random_gaussians(&mut rng, n, spread);
        let camera = front_camera(20, 24.0);
        let settings = RenderSettings { background: [0.3, 0.1, 0.6], ..RenderSettings::default() };
        let out = render(&gaussians, None, &camera, &settings);
        let (image, alpha) = naive_composite(&gaussians, &camera, &settings);
        for (a, b) in out.image().data.iter().zip(&image) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        for (a, b) in out.alpha().iter().zip(&alpha) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn subset_render_equals_render_of_the_subset(seed in any::<u64>(), n in 2usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gaussians = random_gaussians(&mut rng, n, 0.8);
        let picked: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
        let alone: Vec<Gaussian> = picked.iter().map(|&i| gaussians[i].clone()).collect();
        let camera = front_camera(16, 20.0);
        let settings = RenderSettings::default();
        let a = render(&gaussians, Some(&picked), &camera, &settings);
        let b = render(&alone, None, &camera, &settings);
        prop_assert_eq!(&a.image().data, &b.image().data);
    }

    #[test]
    fn cosine_ranking_matches_brute_force_and_ignores_scale(seed in any::<u64>(), objects in 2usize..20, scale in 1e-3f32..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings: Vec<(u32, Vec<f32>)> = (1..=objects as u32).map(|id| (id, random_unit(&mut rng, 6))).collect();
        let gaussians: Vec<Gaussian> = embeddings
            .iter()
            .map(|(id, _)| Gaussian::new(Vector3::zeros(), Vector3::zeros(), 0.1, 0.5).with_ids(ObjectIds::new(0, 0, *id)))
            .collect();
        let mut scene = SceneModel::new(gaussians, Vec::new(), TrackedMasks::new(2, 2, 0));
        for (id, e) in &embeddings {
            scene.object_set_mut(*id).unwrap().embedding = Some(e.clone());
        }
        let q = random_unit(&mut rng, 6);
        let expected = brute_force_ranking(&embeddings, &q);
        let scaled: Vec<f32> = q.iter().map(|v| v * scale).collect();
        for text in [&q, &scaled] {
            let got: Vec<u32> = query(&scene, text, Some(Granularity::Small), None).unwrap().hits.iter().map(|h| h.object_id).collect();
            prop_assert_eq!(&got, &expected);
        }
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_unit(&mut rng, 9), random_unit(&mut rng, 9));
        let c = cosine(&a, &b);
        prop_assert!((c - cosine(&b, &a)).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&c));
        prop_assert!((cosine(&a, &a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rle_round_trips(w in 1u32..24, h in 1u32..24, bits in prop::collection::vec(any::<bool>(), 576)) {
        let m = Mask::from_fn(w, h, |x, y| bits[(y * w + x) as usize]);
        prop_assert_eq!(Mask::from_rle(w, h, &m.to_rle()), Some(m.clone()));
        prop_assert_eq!(m.to_rle().iter().map(|c| *c as usize).sum::<usize>(), (w * h) as usize);
    }

    #[test]
    fn iou_is_symmetric_and_one_on_itself(w in 1u32..16, h in 1u32..16, a in prop::collection::vec(any::<bool>(), 256), b in prop::collection::vec(any::<bool>(), 256)) {
        let ma = Mask::from_fn(w, h, |x, y| a[(y * w + x) as usize]);
        let mb = Mask::from_fn(w, h, |x, y| b[(y * w + x) as usize]);
        prop_assert_eq!(ma.iou(&mb), mb.iou(&ma));
        prop_assert!((0.0..=1.0).contains(&ma.iou(&mb)));
        if ma.area() > 0 {
            prop_assert_eq!(ma.iou(&ma), 1.0);
        }
    }
}

#[test]
fn zero_initialized_field_leaves_gaussians_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut scene = nested_scene(2).ground_truth_model();
    let before = scene.gaussians.clone();
    scene.deformation = Some(DeformationField::new(DeformConfig::default(), &mut rng));
    for t in [0.0, 0.3, 1.0] {
        assert_eq!(gaussians_at(&scene, t).as_ref(), before.as_slice());
    }
}

#[test]
fn ground_truth_model_keeps_levels_nested() {
    let scene = nested_scene(2).ground_truth_model();
    for set in scene.sets(Granularity::Small) {
        let (middle, large) = set.parent_ids.expect("small sets record parents");
        for &i in &set.gaussian_indices {
            assert_eq!(scene.gaussians[i].ids.middle, middle);
            assert_eq!(scene.gaussians[i].ids.large, large);
        }
    }
    assert!(segsplat::model::validate_scene(&scene).is_empty());
}
