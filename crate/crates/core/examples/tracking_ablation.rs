//! Consolidate the scripted 20-frame tracker output under each tracking option and print
//! the object-recall ratio (ORR) and duplicate count (Dup) against ground truth.
//!
//! cargo run --release --example tracking_ablation

use segsplat::init::initialize;
use segsplat::metrics::{forward_tracks, tracking_scores};
use segsplat::synthetic::tracking_fixture;
use segsplat::tracking::{consolidate, TrackingConfig};
use segsplat::Granularity;

fn main() -> segsplat::Result<()> {
    let fx = tracking_fixture();
    let frames = fx.raw.frames.len();
    let small = Granularity::Small.index();
    let variants = [
        ("baseline", TrackingConfig { detect_new_objects: false, resolve_multi_tracks: false, ..fx.config }),
        ("+detection", TrackingConfig { resolve_multi_tracks: false, ..fx.config }),
        ("+multi-track", fx.config),
    ];
    let mut last = None;
    for (name, config) in variants {
        let c = consolidate(&fx.raw, &config)?;
        let s = tracking_scores(&c.tracks[small], &fx.ground_truth, frames)?;
        println!("{name:<14} ORR {:.3}  Dup {}  tracks {:?}", s.orr, s.dup, c.tracks[small].keys().collect::<Vec<_>>());
        for d in &c.detections {
            println!("{:14} new track {} at frame {} from candidate {}", "", d.track_id, d.frame, d.candidate);
        }
        last = Some(c);
    }

    // lost-track merging happens once the tracks own Gaussians
    let c = last.expect("three variants ran");
    let (scene, report) = initialize(&fx.points, &fx.cameras, c.masks.clone(), Some(&fx.images), &fx.init, 3)?;
    let merged = forward_tracks(&c.tracks[small], |id| scene.masks.registry.resolve(id));
    let s = tracking_scores(&merged, &fx.ground_truth, frames)?;
    println!("{:<14} ORR {:.3}  Dup {}", "+merge", s.orr, s.dup);
    for m in &report.merges {
        println!("{:14} track {} -> {} (distance {:.3})", "", m.from, m.into, m.distance);
    }
    Ok(())
}
