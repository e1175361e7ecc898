//! Fit a deformation field to a blob translating past a static one, training on even
//! frames and scoring the odd (held-out) frames.
//!
//! cargo run --release --example dynamic_scene -- [iterations]

use segsplat::init::initialize;
use segsplat::pipeline::evaluate;
use segsplat::synthetic::{dynamic_scene, raw_from_tracked, DYNAMIC_VIEWS, MOVING_SMALL};
use segsplat::tracking::{consolidate, TrackingConfig};
use segsplat::train::Trainer;

fn main() -> segsplat::Result<()> {
    env_logger::init();
    let iterations: usize = std::env::args().nth(1).map_or(3000, |s| s.parse().expect("iterations"));
    let synth = dynamic_scene(5, 17);
    let train_frames: Vec<usize> = (0..51).filter(|k| (k / DYNAMIC_VIEWS) % 2 == 0).collect();
    let test_frames: Vec<usize> = (0..51).filter(|k| (k / DYNAMIC_VIEWS) % 2 == 1).collect();
    let (cameras, images, masks) = synth.select_frames(&train_frames);
    let masks = consolidate(&raw_from_tracked(&masks), &TrackingConfig::default())?.masks;
    let (mut scene, _) = initialize(&synth.points, &cameras, masks, Some(&images), &synth.init, synth.seed)?;
    scene.config = synth.train.with_iterations(iterations);
    let start = std::time::Instant::now();
    let (scene, _) = Trainer::new(scene, images)?.run()?;
    println!("trained {iterations} iterations in {:.1?}", start.elapsed());

    let (cameras, images, masks) = synth.select_frames(&test_frames);
    let eval = evaluate(&scene, &cameras, &images, &masks)?;
    println!("held-out PSNR {:.2}", eval.mean_psnr);
    println!("moving object IoU {:.3}", eval.iou_of(MOVING_SMALL).unwrap_or(0.0));
    for o in &eval.objects {
        println!("  {} {} IoU {:.3}", o.granularity, o.object_id, o.iou);
    }
    Ok(())
}
