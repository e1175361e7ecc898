//! Export every object's Gaussians from the nested scene as PLY and read them back.
//!
//! cargo run --release --example export_object -- [out_dir]

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use segsplat::io::read_gaussians;
use segsplat::semantics::export_object;
use segsplat::synthetic::nested_scene;

fn main() -> segsplat::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example_exports".into()));
    std::fs::create_dir_all(&out)?;
    let scene = nested_scene(7).ground_truth_model();
    for set in &scene.object_sets {
        let path = out.join(format!("{}_{}.ply", set.granularity, set.object_id));
        let n = export_object(&scene, set.object_id, set.granularity, &mut BufWriter::new(File::create(&path)?))?;
        let back = read_gaussians(&path)?;
        println!("{}: {n} Gaussians written, {} read back", path.display(), back.len());
    }
    Ok(())
}
