use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segsplat::io::{
    self, decode_checkpoint, encode_checkpoint, read_cameras, read_gaussians, read_point_cloud, read_raw_masks,
    read_tracked_masks, write_cameras, write_point_cloud, write_raw_masks_png, write_raw_masks_rle, write_tracked_masks,
    SceneConfig,
};
use segsplat::semantics::{export_object, EmbeddingTable, FileProvider};
use segsplat::synthetic::{nested_scene, raw_from_tracked, tracking_fixture, write_scene, SMALL_RED};
use segsplat::{Granularity, Image};

#[test]
fn exported_object_reads_back_within_1e_6() {
    let scene = nested_scene(4).ground_truth_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("red.ply");
    let mut bytes = Vec::new();
    let n = export_object(&scene, SMALL_RED, Granularity::Small, &mut bytes).unwrap();
    std::fs::write(&path, bytes).unwrap();
    let back = read_gaussians(&path).unwrap();
    let members = scene.members(SMALL_RED, Granularity::Small);
    assert_eq!(back.len(), n);
    assert_eq!(n, members.len());
    for (g, &i) in back.iter().zip(&members) {
        let orig = &scene.gaussians[i];
        for (a, b) in g.params().iter().zip(orig.params()) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert_eq!(g.ids, orig.ids);
    }
}

#[test]
fn checkpoint_bytes_are_stable_through_a_decode() {
    let mut scene = nested_scene(4).ground_truth_model();
    scene.gaussians[0].rotation = Vector4::new(0.5, 0.5, -0.5, 0.5);
    let bytes = encode_checkpoint(&scene).unwrap();
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    assert_eq!(back.gaussians, scene.gaussians);
    assert_eq!(back.masks, scene.masks);
    let mut corrupt = bytes.clone();
    corrupt.truncate(bytes.len() / 2);
    assert!(decode_checkpoint(&corrupt).is_err());
}

#[test]
fn cameras_masks_points_and_images_round_trip() {
    let synth = nested_scene(4);
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    write_cameras(d.join("cameras.json"), &synth.cameras).unwrap();
    assert_eq!(read_cameras(d.join("cameras.json")).unwrap(), synth.cameras);

    write_tracked_masks(d.join("tracked"), &synth.masks).unwrap();
    assert_eq!(read_tracked_masks(d.join("tracked")).unwrap(), synth.masks);

    let raw = raw_from_tracked(&synth.masks);
    write_raw_masks_png(d.join("raw"), &raw).unwrap();
    assert_eq!(read_raw_masks(d.join("raw")).unwrap(), raw);

    let fx = tracking_fixture();
    write_raw_masks_rle(d.join("raw.json"), &fx.raw).unwrap();
    assert_eq!(read_raw_masks(d.join("raw.json")).unwrap(), fx.raw);
    // overlapping tracks cannot be stored as id maps
    assert!(write_raw_masks_png(d.join("overlap"), &fx.raw).is_err());

    write_point_cloud(d.join("points.ply"), &synth.points).unwrap();
    let points = read_point_cloud(d.join("points.ply")).unwrap();
    assert_eq!(points.len(), synth.points.len());
    for (a, b) in points.iter().zip(&synth.points) {
        for k in 0..3 {
            assert!((a.position[k] - b.position[k]).abs() < 1e-6);
            assert!((a.color[k] - b.color[k]).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut img = Image::new(7, 5);
    img.data.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
    let mut raw_bytes = Vec::new();
    img.write_raw(&mut raw_bytes).unwrap();
    // the raw float format stores f32 channels
    let back = Image::read_raw(raw_bytes.as_slice()).unwrap();
    assert_eq!((back.width, back.height), (7, 5));
    for (a, b) in back.data.iter().zip(&img.data) {
        assert_eq!(*a, *b as f32 as f64);
    }
    img.save_png(d.join("img/x.png")).unwrap();
    let png = Image::load_png(d.join("img/x.png")).unwrap();
    for (a, b) in png.data.iter().zip(&img.data) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn written_scene_loads_and_validates() {
    let synth = nested_scene(4);
    let dir = tempfile::tempdir().unwrap();
    let path = write_scene(dir.path(), &synth).unwrap();
    let config = SceneConfig::load(&path).unwrap();
    assert_eq!(config.seed, 4);
    assert!(config.cameras.is_absolute() || config.cameras.starts_with(dir.path()));
    let provider = FileProvider::load(dir.path().join("embeddings.bin"), Some(&dir.path().join("prompts.json"))).unwrap();
    let expected: EmbeddingTable = {
        use segsplat::semantics::EmbeddingProvider;
        synth.provider.view_table(&synth.masks).unwrap()
    };
    assert_eq!(provider.table, expected);
    assert_eq!(provider.prompts.len(), synth.prompts.len());

    let mut bad: serde_json::Value = io::read_json(&path).unwrap();
    bad["train"]["partial_iou"] = serde_json::json!(2.0);
    bad["tracking"]["multi_track_iou"] = serde_json::json!(0.0);
    io::write_json(&path, &bad).unwrap();
    let err = SceneConfig::load(&path).unwrap_err().to_string();
    assert!(err.contains("partial_iou") && err.contains("multi_track_iou"), "{err}");
}

#[test]
fn camera_convention_maps_world_x_to_negative_image_x_when_looking_down_z() {
    let cam = segsplat::Camera::look_at(Vector3::zeros(), Vector3::z(), 50.0, 40, 40);
    let (x, _) = cam.project_point(&Vector3::new(0.5, 0.0, 2.0), 0.01).unwrap();
    assert!(x < 20.0);
}
