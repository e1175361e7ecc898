//! Rank objects of the nested scene against text prompts embedded by the mock provider,
//! at each granularity.
//!
//! cargo run --release --example open_vocab_query

use segsplat::semantics::{query, EmbeddingProvider};
use segsplat::synthetic::nested_scene;

fn main() -> segsplat::Result<()> {
    let synth = nested_scene(7);
    let scene = synth.ground_truth_model();
    for prompt in &synth.prompts {
        let text = synth.provider.embed_text(&prompt.text)?;
        let result = query(&scene, &text, Some(prompt.granularity), None)?;
        let ranking: Vec<String> = result.hits.iter().map(|h| format!("{}:{:.2}", h.object_id, h.score)).collect();
        println!("{:<20} {:>6}  [{}]  expected {}", prompt.text, prompt.granularity.to_string(), ranking.join(" "), prompt.object_id);
    }
    // without a granularity every level competes
    let text = synth.provider.embed_text("blue blob")?;
    let best = query(&scene, &text, None, Some(1))?;
    println!("any level, \"blue blob\": {:?}", best.best().map(|h| (h.object_id, h.granularity)));
    Ok(())
}
