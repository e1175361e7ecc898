//! Serve the ground-truth nested scene and exercise each endpoint once.
//!
//! cargo run --release -p segsplat-server --example serve_scene          (one demo pass)
//! cargo run --release -p segsplat-server --example serve_scene -- keep  (keep serving)
//!
//! The port comes from `SEGSPLAT_PORT` (default 8080).

use std::net::SocketAddr;

use segsplat::semantics::EmbeddingProvider;
use segsplat::synthetic::nested_scene;
use segsplat_server::{port_from_env, router, AppState, QueryResponse, ServerConfig, DEFAULT_PORT};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keep = std::env::args().nth(1).as_deref() == Some("keep");
    let synth = nested_scene(7);
    let state = AppState::with_scene(synth.ground_truth_model(), ServerConfig::default());
    let addr = SocketAddr::from(([127, 0, 0, 1], port_from_env(DEFAULT_PORT)?));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let base = format!("http://{}", listener.local_addr()?);
    let server = tokio::spawn(async move { axum::serve(listener, router(state)).await });
    println!("serving on {base}");

    let http = reqwest::Client::new();
    let scene: serde_json::Value = http.get(format!("{base}/scene")).send().await?.json().await?;
    println!("{} objects, {} cameras", scene["objects"].as_array().map_or(0, Vec::len), scene["cameras"].as_array().map_or(0, Vec::len));

    let embedding = synth.provider.embed_text("green blob")?;
    let body = serde_json::json!({ "embedding": embedding, "granularity": "small", "top_k": 3 });
    let hits: QueryResponse = http.post(format!("{base}/query")).json(&body).send().await?.json().await?;
    for h in &hits.hits {
        println!("  object {} ({}) score {:.3}", h.object_id, h.granularity, h.score);
    }
    let best = hits.hits[0].object_id;
    let png = http.get(format!("{base}/render?camera=0&object={best}")).send().await?.bytes().await?;
    println!("highlight render: {} PNG bytes", png.len());
    let ply = http.get(format!("{base}/export/{best}")).send().await?.bytes().await?;
    println!("export: {} PLY bytes", ply.len());
    let missing = http.get(format!("{base}/render?camera=99")).send().await?.status();
    println!("unknown camera: {missing}");

    if keep {
        server.await??;
    }
    Ok(())
}
