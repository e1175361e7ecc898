//! Read a written scene from disk, consolidate its masks and initialize object-specific
//! Gaussian sets, then print the init report and write the initial checkpoint.
//!
//! cargo run --release --example initialize_scene -- [out_dir]

use segsplat::io::{save_checkpoint, SceneConfig};
use segsplat::pipeline::{build_scene, load_inputs};
use segsplat::synthetic::{nested_scene, write_scene};

fn main() -> segsplat::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/example_scene".into());
    let path = write_scene(&out, &nested_scene(7))?;
    let config = SceneConfig::load(&path)?;
    let inputs = load_inputs(&config)?;
    println!(
        "{} cameras, {} points, {} mask frames",
        inputs.cameras.len(),
        inputs.points.len(),
        inputs.masks.frame_count()
    );
    let (scene, report) = build_scene(&inputs, &config)?;
    for (id, o) in &report.objects {
        let level = o.granularity.map_or("-".into(), |g| g.to_string());
        println!("object {id:>2} {level:>6}: {} from points, {} random", o.from_points, o.random);
    }
    println!("{} background, {} total Gaussians", report.background, report.gaussians);
    let ckpt = std::path::Path::new(&out).join("init.ckpt");
    save_checkpoint(&ckpt, &scene)?;
    println!("wrote {}", ckpt.display());
    Ok(())
}
