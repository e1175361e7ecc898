use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use segsplat::semantics::one_hot;
use segsplat::synthetic::{nested_scene, SMALL_BLUE, SMALL_GREEN, SMALL_RED};
use segsplat::{Granularity, SceneModel};
use segsplat_server::{router, AppState, QueryResponse, SceneInfo, ServerConfig};

fn scene() -> SceneModel {
    nested_scene(3).ground_truth_model()
}

fn app(config: ServerConfig) -> Router {
    router(AppState::with_scene(scene(), config))
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, body: impl Into<Body>) -> Request<Body> {
    Request::post(uri).header("content-type", "application/json").body(body.into()).unwrap()
}

#[tokio::test]
async fn every_endpoint_answers_503_while_loading() {
    let app = router(AppState::new(ServerConfig::default()));
    for req in [
        get("/scene"),
        get("/render?camera=0"),
        get("/export/4"),
        post_json("/query", r#"{"embedding":[1,0,0,0,0,0,0,0]}"#),
    ] {
        let (status, _) = call(&app, req).await;
        assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    }
}

#[tokio::test]
async fn scene_lists_registry_and_cameras() {
    let (status, body) = call(&app(ServerConfig::default()), get("/scene")).await;
    assert_eq!(status, StatusCode::OK);
    let info: SceneInfo = serde_json::from_slice(&body).unwrap();
    assert_eq!(info.cameras.len(), 12);
    assert_eq!(info.granularities.len(), 3);
    let small: Vec<u32> = info
        .objects
        .iter()
        .filter(|o| o.granularity == Granularity::Small)
        .map(|o| o.object_id)
        .collect();
    assert_eq!(small, vec![SMALL_RED, SMALL_GREEN, SMALL_BLUE]);
    assert!(info.objects.iter().all(|o| o.has_embedding && o.gaussians > 0));
}

#[tokio::test]
async fn stored_embedding_ranks_its_object_first_with_score_one() {
    let scene = scene();
    let app = router(AppState::with_scene(scene.clone(), ServerConfig::default()));
    for set in &scene.object_sets {
        let body = serde_json::json!({ "embedding": set.embedding, "top_k": 3 });
        let (status, bytes) = call(&app, post_json("/query", body.to_string())).await;
        assert_eq!(status, StatusCode::OK);
        let res: QueryResponse = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(res.hits[0].object_id, set.object_id);
        assert!((res.hits[0].score - 1.0).abs() < 1e-12);
        assert!(res.hits.len() <= 3);
    }
}

#[tokio::test]
async fn granularity_restricts_hits() {
    let body = serde_json::json!({ "embedding": one_hot(0, 8), "granularity": "middle" });
    let (status, bytes) = call(&app(ServerConfig::default()), post_json("/query", body.to_string())).await;
    assert_eq!(status, StatusCode::OK);
    let res: QueryResponse = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(res.hits.len(), 2);
    assert!(res.hits.iter().all(|h| h.granularity == Granularity::Middle));
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let app = app(ServerConfig::default());
    for body in [
        "{not json",
        r#"{"embedding":"abc"}"#,
        "{}",
        r#"{"embedding":[1,0,0]}"#,
        r#"{"embedding":[1,0,0,0,0,0,0,0],"granularity":"huge"}"#,
        r#"{"embedding":[1,0,0,0,0,0,0,0],"top_k":0}"#,
        r#"{"embedding":[1,0,0,0,0,0,0,0],"text":"red blob"}"#,
    ] {
        let (status, _) = call(&app, post_json("/query", body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "body {body}");
    }
    let (status, body) = call(&app, post_json("/query", r#"{"text":"red blob"}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(String::from_utf8(body).unwrap().contains("embedding endpoint"));
}

#[tokio::test]
async fn unknown_camera_or_object_is_404() {
    let app = app(ServerConfig::default());
    for uri in ["/render?camera=12", "/render?camera=0&object=99", "/export/99"] {
        let (status, _) = call(&app, get(uri)).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
    }
    for uri in ["/render", "/render?camera=x", "/render?camera=0&time=2", "/export/abc"] {
        let (status, _) = call(&app, get(uri)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
    }
}

#[tokio::test]
async fn highlight_dims_everything_but_the_object() {
    let app = app(ServerConfig::default());
    let (status, full) = call(&app, get("/render?camera=0")).await;
    assert_eq!(status, StatusCode::OK);
    let (_, lit) = call(&app, get(&format!("/render?camera=0&object={SMALL_BLUE}"))).await;
    let full = image::load_from_memory(&full).unwrap().to_rgb8();
    let lit = image::load_from_memory(&lit).unwrap().to_rgb8();
    assert_eq!(full.dimensions(), (64, 64));
    let mut kept = 0;
    let mut dimmed = 0;
    for (a, b) in full.pixels().zip(lit.pixels()) {
        let (a, b) = (a.0[0] as f64 + a.0[1] as f64 + a.0[2] as f64, b.0[0] as f64 + b.0[1] as f64 + b.0[2] as f64);
        assert!(b <= a + 3.0);
        if a > 150.0 {
            if b > 0.95 * a {
                kept += 1;
            } else if b < 0.3 * a {
                dimmed += 1;
            }
        }
    }
    assert!(kept > 20 && dimmed > 20, "kept {kept}, dimmed {dimmed}");
}

#[tokio::test]
async fn repeated_requests_return_identical_bodies() {
    let app = app(ServerConfig::default());
    for uri in ["/scene", "/render?camera=3&object=2&time=0", "/export/5"] {
        let (s1, a) = call(&app, get(uri)).await;
        let (s2, b) = call(&app, get(uri)).await;
        assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
        assert_eq!(a, b, "{uri}");
    }
}

#[tokio::test]
async fn export_matches_object_members() {
    let scene = scene();
    let app = router(AppState::with_scene(scene.clone(), ServerConfig::default()));
    let (status, body) = call(&app, get(&format!("/export/{SMALL_GREEN}"))).await;
    assert_eq!(status, StatusCode::OK);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("green.ply");
    std::fs::write(&path, body).unwrap();
    let read = segsplat::io::read_gaussians(&path).unwrap();
    assert_eq!(read.len(), scene.members(SMALL_GREEN, Granularity::Small).len());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_queries_match_sequential() {
    let app = app(ServerConfig {
        render_workers: 2,
        ..ServerConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bodies: Vec<String> = (0..100)
        .map(|i| {
            let v: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let level = ["small", "middle", "large"][i % 3];
            serde_json::json!({ "embedding": v, "granularity": level }).to_string()
        })
        .collect();
    let mut sequential = Vec::new();
    for b in &bodies {
        sequential.push(call(&app, post_json("/query", b.clone())).await);
    }
    let handles: Vec<_> = bodies
        .iter()
        .cloned()
        .map(|b| {
            let app = app.clone();
            tokio::spawn(async move { call(&app, post_json("/query", b)).await })
        })
        .collect();
    for (h, expected) in handles.into_iter().zip(&sequential) {
        assert_eq!(&h.await.unwrap(), expected);
    }
    assert!(sequential.iter().all(|(s, _)| *s == StatusCode::OK));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn text_queries_go_through_the_embedding_endpoint() {
    let provider = nested_scene(3).provider;
    let embed = Router::new().route(
        "/embed",
        post(move |Json(req): Json<serde_json::Value>| {
            let provider = provider.clone();
            async move {
                use segsplat::semantics::EmbeddingProvider;
                let text = req["text"].as_str().unwrap_or_default();
                Json(serde_json::json!({ "vector": provider.embed_text(text).unwrap() }))
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, embed).await.unwrap() });

    let app = app(ServerConfig {
        embed_url: Some(format!("http://{addr}/embed")),
        ..ServerConfig::default()
    });
    for (text, expected) in [("red blob", SMALL_RED), ("blue blob", SMALL_BLUE), ("left pair", 2)] {
        let body = serde_json::json!({ "text": text, "top_k": 1 }).to_string();
        let (status, bytes) = call(&app, post_json("/query", body)).await;
        assert_eq!(status, StatusCode::OK);
        let res: QueryResponse = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(res.hits[0].object_id, expected, "{text}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn background_load_flips_from_503_to_ready() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.ckpt");
    segsplat::io::save_checkpoint(&path, &scene()).unwrap();
    let state = AppState::new(ServerConfig::default());
    let app = router(Arc::clone(&state));
    assert!(!state.is_ready());
    segsplat_server::load_in_background(Arc::clone(&state), path).await.unwrap().unwrap();
    assert!(state.is_ready());
    let (status, _) = call(&app, get("/scene")).await;
    assert_eq!(status, StatusCode::OK);
}
