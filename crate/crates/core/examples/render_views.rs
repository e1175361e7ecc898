//! Render the ground-truth nested scene from every camera, plus one highlight render per
//! Small object, into PNGs.
//!
//! cargo run --release --example render_views -- [out_dir]

use std::path::PathBuf;

use segsplat::render::{render_highlight, render_scene};
use segsplat::synthetic::nested_scene;
use segsplat::Granularity;

fn main() -> segsplat::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example_renders".into()));
    let scene = nested_scene(7).ground_truth_model();
    for (i, cam) in scene.cameras.iter().enumerate() {
        let r = render_scene(&scene, cam, cam.time);
        let covered = r.alpha().iter().filter(|a| **a > 0.5).count();
        r.image().save_png(out.join(format!("view_{i:02}.png")))?;
        println!("view {i:2}: {covered} covered pixels");
    }
    let cam = &scene.cameras[0];
    for set in scene.sets(Granularity::Small) {
        let img = render_highlight(&scene, set.object_id, Granularity::Small, cam, 0.0, 0.2)?;
        img.save_png(out.join(format!("highlight_{}.png", set.object_id)))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
