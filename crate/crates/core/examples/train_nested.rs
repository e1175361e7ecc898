//! Train on the nested three-level synthetic scene and report PSNR, per-object IoU and
//! query accuracy.
//!
//! cargo run --release --example train_nested -- [iterations] [seed]

use std::time::Instant;

use segsplat::init::initialize;
use segsplat::pipeline::{evaluate, evaluate_queries, train_scene};
use segsplat::semantics::EmbeddingProvider;
use segsplat::synthetic::{nested_scene, raw_from_tracked};
use segsplat::tracking::{consolidate, TrackingConfig};

fn main() -> segsplat::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map_or(3000, |s| s.parse().expect("iterations"));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed"));

    let synth = nested_scene(seed);
    let masks = consolidate(&raw_from_tracked(&synth.masks), &TrackingConfig::default())?.masks;
    let (mut scene, report) = initialize(&synth.points, &synth.cameras, masks, Some(&synth.images), &synth.init, seed)?;
    scene.config = synth.train.with_iterations(iterations);
    println!("initialized {} Gaussians for {} objects", report.gaussians, report.objects.len());

    let start = Instant::now();
    let table = synth.provider.view_table(&scene.masks)?;
    let (scene, log) = train_scene(scene, synth.images.clone(), Some(&table))?;
    println!("trained {iterations} iterations in {:.1?}, {} Gaussians", start.elapsed(), scene.gaussians.len());
    if let Some(last) = log.rows.iter().rev().find_map(|r| r.psnr) {
        println!("last training-view PSNR {last:.2}");
    }

    let mut eval = evaluate(&scene, &synth.cameras, &synth.images, &synth.masks)?;
    eval.set_queries(evaluate_queries(&scene, &synth.prompts, &synth.provider)?);
    println!("mean PSNR {:.2}", eval.mean_psnr);
    for o in &eval.objects {
        println!("  {:>6} {:>3}  IoU {:.3}", o.granularity.to_string(), o.object_id, o.iou);
    }
    for q in &eval.queries {
        println!("  {:?} -> {:?} (expected {})", q.text, q.retrieved, q.expected);
    }
    Ok(())
}
